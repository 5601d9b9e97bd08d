"""Equidistant fisheye camera model and frame correction.

The lens maps a ray at angle ``theta`` from the optical axis to image radius
``f * theta_d`` with ``theta_d = theta * (1 + k1 theta^2 + k2 theta^4 +
k3 theta^6 + k4 theta^8)``. Correction resamples a fisheye frame into a
pinhole view by inverse mapping, then a fixed central window is kept.
"""

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .images import as_image

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 20


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 410.0
    fy: float = 410.0
    px: float = 383.0
    py: float = 526.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    width: int = 1920
    height: int = 1080

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bad sensor size {self.width}x{self.height}")
        if not (0 <= self.px < self.width and 0 <= self.py < self.height):
            raise ValueError(
                f"principal point ({self.px}, {self.py}) outside {self.width}x{self.height} sensor"
            )

    @property
    def k(self):
        return (self.k1, self.k2, self.k3, self.k4)

    def scaled(self, factor):
        """Same lens on a sensor resampled by ``factor``."""
        return replace(
            self,
            fx=self.fx * factor,
            fy=self.fy * factor,
            px=self.px * factor,
            py=self.py * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )


@dataclass(frozen=True)
class UndistortConfig:
    """Output geometry of the pinhole view.

    ``focal``, ``size`` and ``center`` default to the input focal length
    ``fx``, the input sensor size and the input principal point.
    """

    focal: float | None = None
    size: tuple[int, int] | None = None
    center: tuple[float, float] | None = None
    crop: tuple[int, int] = (1000, 1000)

    def __post_init__(self):
        # tuples keep the config hashable for the map cache
        for name in ("size", "center", "crop"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def resolve(self, intr):
        focal = float(self.focal if self.focal is not None else intr.fx)
        size = tuple(self.size) if self.size is not None else (intr.width, intr.height)
        center = tuple(self.center) if self.center is not None else (intr.px, intr.py)
        if focal <= 0:
            raise ValueError(f"output focal length must be positive, got {focal}")
        if self.crop[0] > size[0] or self.crop[1] > size[1]:
            raise ValueError(f"crop {self.crop} larger than output size {size}")
        return focal, size, center


@dataclass
class UndistortResult:
    image: np.ndarray
    failed_pixels: int = 0
    meta: dict = field(default_factory=dict)


def distort_theta(theta, k):
    theta = np.asarray(theta, dtype=np.float64)
    t2 = theta * theta
    k1, k2, k3, k4 = k
    return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))


def distort_theta_deriv(theta, k):
    theta = np.asarray(theta, dtype=np.float64)
    t2 = theta * theta
    k1, k2, k3, k4 = k
    return 1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)))


def monotonic_limit(k, upper=math.pi):
    """Largest theta below which ``distort_theta`` is strictly increasing."""
    if not any(k):
        return upper
    grid = np.linspace(0.0, upper, 4097)
    bad = np.nonzero(distort_theta_deriv(grid, k) <= 0)[0]
    if bad.size == 0:
        return upper
    lo, hi = grid[bad[0] - 1], grid[bad[0]]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if distort_theta_deriv(mid, k) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def invert_theta(theta_d, k, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solve ``distort_theta(theta) = theta_d`` by Newton's method.

    Returns ``(theta, converged)``. Starts from ``theta = theta_d``.
    Solutions beyond the monotonic range of the lens polynomial are
    reported as not converged.
    """
    theta_d = np.asarray(theta_d, dtype=np.float64)
    theta = theta_d.copy()
    if not any(k):
        return theta, np.ones(theta.shape, dtype=bool)
    active = np.ones(theta.shape, dtype=bool)
    converged = np.zeros(theta.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        th = theta[active]
        deriv = distort_theta_deriv(th, k)
        step = (distort_theta(th, k) - theta_d[active]) / np.where(deriv == 0, np.nan, deriv)
        theta[active] = th - step
        done = np.abs(step) < tol
        idx = np.flatnonzero(active)
        converged.flat[idx[done]] = True
        # NaN steps never satisfy `done` and stay unconverged
        active.flat[idx[done | ~np.isfinite(step)]] = False
    limit = monotonic_limit(k)
    converged &= np.isfinite(theta) & (theta >= 0) & (theta < limit)
    return theta, converged


def _angles_to_pixels(theta, phi, intr):
    r = distort_theta(theta, intr.k)
    return np.stack([intr.fx * r * np.cos(phi) + intr.px, intr.fy * r * np.sin(phi) + intr.py], axis=-1)


def project_fisheye(points, intr):
    """Project camera-frame points (..., 3) to fisheye pixels (..., 2)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have shape (..., 3), got {pts.shape}")
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    if np.any(~(z > 0)):
        raise ValueError("points must have positive depth")
    theta = np.arctan2(np.hypot(x, y), z)
    phi = np.arctan2(y, x)
    return _angles_to_pixels(theta, phi, intr)


def fisheye_rays(pixels, intr):
    """Unit rays (..., 3) for fisheye pixels plus a per-pixel convergence mask."""
    pix = np.asarray(pixels, dtype=np.float64)
    mx = (pix[..., 0] - intr.px) / intr.fx
    my = (pix[..., 1] - intr.py) / intr.fy
    theta, ok = invert_theta(np.hypot(mx, my), intr.k)
    phi = np.arctan2(my, mx)
    s = np.sin(theta)
    rays = np.stack([s * np.cos(phi), s * np.sin(phi), np.cos(theta)], axis=-1)
    return rays, ok


def undistort_points(pixels, intr, focal=None, center=None):
    """Map fisheye pixels to pinhole pixels; unmappable points become NaN."""
    focal = intr.fx if focal is None else focal
    cx, cy = (intr.px, intr.py) if center is None else center
    rays, ok = fisheye_rays(pixels, intr)
    ok &= rays[..., 2] > 0
    z = np.where(ok, rays[..., 2], np.nan)
    return np.stack([focal * rays[..., 0] / z + cx, focal * rays[..., 1] / z + cy], axis=-1)


def pinhole_source_maps(intr, cfg=None):
    """Fisheye sampling coordinates for every pixel of the pinhole view.

    Returns ``(map_x, map_y, n_failed)``; pixels whose ray falls outside the
    invertible range of the lens are NaN in both maps.
    """
    focal, (w, h), (cx, cy) = (cfg or UndistortConfig()).resolve(intr)
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (u - cx) / focal
    y = (v - cy) / focal
    theta = np.arctan(np.hypot(x, y))
    phi = np.arctan2(y, x)
    src = _angles_to_pixels(theta, phi, intr)
    bad = theta >= monotonic_limit(intr.k)
    src[bad] = np.nan
    return src[..., 0], src[..., 1], int(bad.sum())


@functools.lru_cache(maxsize=8)
def _cached_maps(intr, cfg):
    map_x, map_y, failed = pinhole_source_maps(intr, cfg)
    map_x.flags.writeable = False
    map_y.flags.writeable = False
    return map_x, map_y, failed


def undistort(img, intr, cfg=None):
    """Resample a fisheye frame into a pinhole view (before cropping)."""
    arr = as_image(img)
    if arr.shape[0] != intr.height or arr.shape[1] != intr.width:
        raise ValueError(
            f"image is {arr.shape[1]}x{arr.shape[0]}, intrinsics expect {intr.width}x{intr.height}"
        )
    map_x, map_y, failed = _cached_maps(intr, cfg or UndistortConfig())
    out = kernels.remap_bilinear(arr, map_x, map_y, 0.0)
    return UndistortResult(out, failed, {"backend": kernels.BACKEND})


def center_crop(img, crop_w, crop_h):
    arr = np.asarray(img)
    h, w = arr.shape[0], arr.shape[1]
    if crop_w > w or crop_h > h or crop_w <= 0 or crop_h <= 0:
        raise ValueError(f"cannot crop {crop_w}x{crop_h} from {w}x{h}")
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    return arr[top:top + crop_h, left:left + crop_w].copy()


def correct_frame(img, intr, cfg=None):
    """Undistort then keep the central crop window."""
    cfg = cfg or UndistortConfig()
    res = undistort(img, intr, cfg)
    res.image = center_crop(res.image, *cfg.crop)
    return res
