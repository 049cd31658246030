"""Shared fixtures: cameras, calibrated pairs, and textured plane scenes."""

import numpy as np
import pytest

from minimvs import synth
from minimvs.geometry import Camera


def make_camera(fx=300.0, fy=300.0, cx=40.0, cy=30.0, R=None, t=None,
                depth_range=(1.0, 9.0)):
    k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    r = np.eye(3) if R is None else np.asarray(R, dtype=np.float64)
    tt = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
    return Camera(k, r, tt, depth_range[0], depth_range[1])


def rotation_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    cross = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * cross + (1 - np.cos(angle)) * (cross @ cross)


def random_rotation(rng, scale=0.25):
    w = rng.normal(size=3) * scale
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        return np.eye(3)
    return rotation_from_axis_angle(w, angle)


def random_calibrated_pair(rng, depth_range=(1.0, 50.0)):
    """Two cameras with generic intrinsics/poses looking roughly down +z."""
    def cam():
        k = np.array([
            [rng.uniform(250.0, 700.0), 0.0, rng.uniform(20.0, 60.0)],
            [0.0, rng.uniform(250.0, 700.0), rng.uniform(15.0, 50.0)],
            [0.0, 0.0, 1.0],
        ])
        return Camera(k, random_rotation(rng, 0.2), rng.normal(size=3) * 0.3,
                      depth_range[0], depth_range[1])
    return cam(), cam()


def fronto_plane_setup(height=64, width=80, n_views=3, span_deg=40.0,
                       depth=4.5, spacing=0.95, noise_scale=14.0, seed=1,
                       focal_factor=1.6):
    """Arc cameras (center view = reference) viewing a plane fronto-parallel
    to the reference camera at `depth`, with a sweep of 8 bins at `spacing`.

    Returns (cams, scene, renders, (dmin, dmax)); cams[0] is the reference.
    """
    arc = synth.arc_cameras(n_views, height, width, radius=4.0, span_deg=span_deg,
                            depth_range=(1.0, 99.0), focal_factor=focal_factor)
    order = [n_views // 2] + [i for i in range(n_views) if i != n_views // 2]
    ref = arc[order[0]]
    dmin = depth - 3.3 * spacing
    dmax = depth + 3.7 * spacing
    axis = ref.R.T @ np.array([0.0, 0.0, 1.0])
    ex = ref.R.T @ np.array([1.0, 0.0, 0.0])
    ey = ref.R.T @ np.array([0.0, 1.0, 0.0])
    tex = synth.Texture(noise_amount=1.0, noise_scale=noise_scale,
                        checker_scale=2.0, octaves=1, seed=seed)
    plane = synth.Rectangle(ref.center() + depth * axis - 8 * ex - 8 * ey,
                            16 * ex, 16 * ey, tex)
    scene = synth.Scene([plane])
    cams = [Camera(arc[i].K, arc[i].R, arc[i].t, dmin, dmax) for i in order]
    renders = [synth.render(scene, cam, height, width) for cam in cams]
    return cams, scene, renders, (dmin, dmax)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240816)
