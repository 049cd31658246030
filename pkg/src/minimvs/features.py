"""Feature pyramid extraction with coordinate-attention fusion on the top-down path."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .nn import Conv2d, ConvBnReLU2d, Module, ModuleList
from .tensor import Tensor

DEFAULT_STAGE_CHANNELS = (32, 16, 8, 8)
_ENCODER_CHANNELS = (8, 16, 32, 32)  # strides 1, 2, 2, 2


def coordinate_pool(x):
    """Directional means of (C, H, W): returns (C, H, 1) and (C, 1, W).

    Sums over one coordinate are taken as means so the profile scale does not
    depend on resolution; the mean of either profile equals the global mean.
    """
    t_h = T.mean_axis(x, 2, keepdims=True)
    t_w = T.mean_axis(x, 1, keepdims=True)
    return t_h, t_w


class CoordinateGate(Module):
    """Sigmoid attention profiles along height and width.

    The two pooled profiles are stacked into one (C, H+W, 1) sequence, passed
    through a shared squeeze/restore 1x1 stack, split back, and gated.
    """

    def __init__(self, channels, reduction=4, rng=None):
        super().__init__()
        mid = max(channels // reduction, 1)
        self.reduce = Conv2d(channels, mid, 1, rng=rng)
        self.restore = Conv2d(mid, channels, 1, rng=rng)

    def forward(self, t_h, t_w):
        c, h, _ = t_h.shape
        w = t_w.shape[2]
        stacked = T.concat_axis([t_h, T.reshape(t_w, (c, w, 1))], 1)  # (C, H+W, 1)
        z = self.restore.forward(T.relu(self.reduce.forward(stacked)))
        a_h = T.sigmoid(T.narrow(z, 1, 0, h))                          # (C, H, 1)
        a_w = T.sigmoid(T.reshape(T.narrow(z, 1, h, w), (c, 1, w)))    # (C, 1, W)
        return a_h, a_w


def gated_fuse(coarse, fine, a_h, a_w):
    """upsample2x(coarse) + a_h * a_w * fine.

    `coarse` must already be channel-matched to `fine` (1x1 lateral conv);
    the attention maps broadcast over the missing coordinate.
    """
    return T.add(T.upsample_bilinear2x(coarse), T.mul(T.mul(a_h, a_w), fine))


class FeatureExtractor(Module):
    """Four-stage pyramid at 1/8, 1/4, 1/2, 1/1 of the input resolution."""

    def __init__(self, stage_channels=DEFAULT_STAGE_CHANNELS, reduction=4, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        e0, e1, e2, e3 = _ENCODER_CHANNELS
        self.stage_channels = tuple(stage_channels)
        self.enc0 = ConvBnReLU2d(3, e0, 3, 1, 1, rng=rng)
        self.enc1 = ConvBnReLU2d(e0, e1, 3, 2, 1, rng=rng)
        self.enc2 = ConvBnReLU2d(e1, e2, 3, 2, 1, rng=rng)
        self.enc3 = ConvBnReLU2d(e2, e3, 3, 2, 1, rng=rng)
        # lateral 1x1 convs channel-match the running path to the finer encoder level
        self.lateral = ModuleList([
            Conv2d(e3, e2, 1, rng=rng),
            Conv2d(e2, e1, 1, rng=rng),
            Conv2d(e1, e0, 1, rng=rng),
        ])
        self.gates = ModuleList([
            CoordinateGate(e2, reduction, rng=rng),
            CoordinateGate(e1, reduction, rng=rng),
            CoordinateGate(e0, reduction, rng=rng),
        ])
        self.heads = ModuleList([
            Conv2d(e3, stage_channels[0], 3, 1, 1, rng=rng),
            Conv2d(e2, stage_channels[1], 3, 1, 1, rng=rng),
            Conv2d(e1, stage_channels[2], 3, 1, 1, rng=rng),
            Conv2d(e0, stage_channels[3], 3, 1, 1, rng=rng),
        ])

    def forward(self, image):
        if not isinstance(image, Tensor):
            image = Tensor(image)
        _, h, w = image.shape
        if h % 8 or w % 8:
            raise ParameterError(f"input resolution must be divisible by 8, got {h}x{w}")
        e0 = self.enc0.forward(image)   # (8,  H,   W)
        e1 = self.enc1.forward(e0)      # (16, H/2, W/2)
        e2 = self.enc2.forward(e1)      # (32, H/4, W/4)
        e3 = self.enc3.forward(e2)      # (32, H/8, W/8)

        pyramid = {0: self.heads[0].forward(e3)}
        running = e3
        for step, fine in enumerate((e2, e1, e0)):
            t_h, t_w = coordinate_pool(fine)
            a_h, a_w = self.gates[step].forward(t_h, t_w)
            running = gated_fuse(self.lateral[step].forward(running), fine, a_h, a_w)
            pyramid[step + 1] = self.heads[step + 1].forward(running)
        return pyramid


def box_blur(image, k):
    """Separable box filter of window 2k (reflect edges) over (C, H, W)."""
    out = np.asarray(image, dtype=np.float64).copy()
    for axis in (1, 2):
        pads = [(0, 0)] * 3
        pads[axis] = (k, k)
        padded = np.pad(out, pads, mode="reflect")
        csum = np.cumsum(padded, axis=axis)
        n = out.shape[axis]
        out = (np.take(csum, range(2 * k, 2 * k + n), axis=axis)
               - np.take(csum, range(0, n), axis=axis)) / (2 * k)
    return out


def photometric_features(image, factor, role, blur=None):
    """Untrained matching features whose product correlation scores photo-consistency.

    Channels are the blurred, subsampled image colors plus one extra channel:
    a constant 1 on the reference side and -|color|^2 / 2 on the source side.
    The channel-mean product of a (ref, src) pair then equals
    ``f_ref . f_src - |f_src|^2 / 2``, which is the blurred-image SSD score up
    to a depth-independent offset, so its argmax over hypotheses is classic
    plane-sweep photometric matching. No parameters are involved.
    """
    if role not in ("ref", "src"):
        raise ParameterError(f"role must be 'ref' or 'src', got {role!r}")
    image = np.asarray(image, dtype=np.float64)
    blur = max(factor // 2, 1) if blur is None else blur
    smooth = box_blur(image, blur) if blur else image
    sub = smooth[:, ::factor, ::factor]
    if role == "ref":
        extra = np.ones((1, *sub.shape[1:]))
    else:
        extra = -0.5 * (sub * sub).sum(axis=0, keepdims=True)
    return Tensor(np.concatenate([sub, extra], axis=0))
