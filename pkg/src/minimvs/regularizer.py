"""3D U-Net cost regularization, probability volumes, and winner-takes-all depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .nn import BatchNorm, Conv3d, ConvBnReLU3d, ConvTranspose3d, Module
from .tensor import Tensor


@dataclass
class DepthMap:
    """Per-pixel selected depth (scene units) and its probability."""

    depth: np.ndarray
    confidence: np.ndarray


class _UpBlock3d(Module):
    # kernel (1,3,3): upsampling never mixes depth slices, so a volume constant
    # along depth stays constant through the decoder
    def __init__(self, in_ch, out_ch, rng=None):
        super().__init__()
        self.conv = ConvTranspose3d(in_ch, out_ch, (1, 3, 3), stride=(1, 2, 2),
                                    padding=(0, 1, 1), output_padding=(0, 1, 1),
                                    bias=False, rng=rng)
        self.bn = BatchNorm(out_ch)

    def forward(self, x):
        return T.relu(self.bn.forward(self.conv.forward(x)))


class VolumeRegularizer(Module):
    """Two-level 3D U-Net ending in a softmax over the depth hypotheses.

    Downsampling is spatial only (stride (1, 2, 2)); depth mixing happens in
    the 3x3x3 blocks, whose depth padding replicates edges. Spatial extents
    are zero-padded up to multiples of 4 before the encoder and cropped after,
    so any desk-scale resolution is legal.
    """

    def __init__(self, in_channels, base_channels=8, rng=None):
        super().__init__()
        self.in_channels = in_channels
        b = base_channels
        self.conv0 = ConvBnReLU3d(in_channels, b, (3, 3, 3), (1, 1, 1), rng=rng)
        self.conv1 = ConvBnReLU3d(b, 2 * b, (3, 3, 3), (1, 2, 2), rng=rng)
        self.conv2 = ConvBnReLU3d(2 * b, 2 * b, (3, 3, 3), (1, 1, 1), rng=rng)
        self.conv3 = ConvBnReLU3d(2 * b, 4 * b, (3, 3, 3), (1, 2, 2), rng=rng)
        self.conv4 = ConvBnReLU3d(4 * b, 4 * b, (3, 3, 3), (1, 1, 1), rng=rng)
        self.up5 = _UpBlock3d(4 * b, 2 * b, rng=rng)
        self.up6 = _UpBlock3d(2 * b, b, rng=rng)
        self.prob = Conv3d(b, 1, (3, 3, 3), stride=(1, 1, 1), padding=(0, 1, 1),
                           bias=True, rng=rng)

    def forward(self, volume):
        if hasattr(volume, "data") and not isinstance(volume, Tensor):
            volume = volume.data  # accept a CostVolume wrapper
        c, d, h, w = volume.shape
        if c != self.in_channels:
            raise DimensionError(
                f"regularizer built for {self.in_channels} channels, volume has {c}"
            )
        if d % 4:
            raise ParameterError(f"depth hypothesis count must be divisible by 4, got {d}")
        pad_h = (-h) % 4
        pad_w = (-w) % 4
        if pad_h or pad_w:
            volume = T.pad_zero(volume, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))

        x0 = self.conv0.forward(volume)                  # (b,  D, H,   W)
        x1 = self.conv2.forward(self.conv1.forward(x0))  # (2b, D, H/2, W/2)
        x2 = self.conv4.forward(self.conv3.forward(x1))  # (4b, D, H/4, W/4)
        y = T.add(x1, self.up5.forward(x2))
        y = T.add(x0, self.up6.forward(y))
        logits = T.replicate_pad_axis(y, 1, 1, 1)
        logits = self.prob.forward(logits)               # (1, D, H', W')
        if pad_h or pad_w:
            logits = T.narrow(logits, 2, 0, h)
            logits = T.narrow(logits, 3, 0, w)
        logits = T.reshape(logits, (d, h, w))
        return T.softmax_axis(logits, 0)


def wta_depth(prob, hyp):
    """Winner-takes-all: argmax over depth, ties broken toward the smaller index."""
    p = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    d, h, w = p.shape
    values = hyp.per_pixel(h, w)
    if values.shape[0] != d:
        raise DimensionError(
            f"probability volume has {d} bins, hypothesis set has {values.shape[0]}"
        )
    best = np.argmax(p, axis=0)
    depth = np.take_along_axis(values, best[None], axis=0)[0]
    confidence = np.take_along_axis(p, best[None], axis=0)[0]
    return DepthMap(depth.copy(), confidence.copy())
