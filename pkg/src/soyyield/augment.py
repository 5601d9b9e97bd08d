"""Random camera sensor effects, one augmented copy per image.

Effects are applied in the order of image formation: exposure, optical
blur, chromatic aberration, then sensor noise.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .images import as_image

DEFAULT_RANGES = {
    "noise_sigma": (0.0, 0.05),
    "blur_sigma": (0.0, 2.0),
    "ca_shift": (-2.0, 2.0),
    "ca_scale": (0.998, 1.002),
    "gain": (0.5, 2.0),
}


@dataclass(frozen=True)
class SensorEffectParams:
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    ca_shift: tuple = ((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))
    ca_scale: tuple = (1.0, 1.0, 1.0)
    gain: float = 1.0
    seed: int = 0

    def validate(self, ranges=None):
        r = ranges or DEFAULT_RANGES

        def inside(name, v):
            lo, hi = r[name]
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

        inside("noise_sigma", self.noise_sigma)
        inside("blur_sigma", self.blur_sigma)
        inside("gain", self.gain)
        for dx, dy in self.ca_shift:
            inside("ca_shift", dx)
            inside("ca_shift", dy)
        for s in self.ca_scale:
            inside("ca_scale", s)
        return self

    def as_tuple(self):
        return (self.noise_sigma, self.blur_sigma, self.ca_shift, self.ca_scale, self.gain)

    def to_json(self):
        d = asdict(self)
        d["ca_shift"] = [list(s) for s in self.ca_shift]
        d["ca_scale"] = list(self.ca_scale)
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(
            noise_sigma=float(d["noise_sigma"]),
            blur_sigma=float(d["blur_sigma"]),
            ca_shift=tuple(tuple(float(v) for v in s) for s in d["ca_shift"]),
            ca_scale=tuple(float(v) for v in d["ca_scale"]),
            gain=float(d["gain"]),
            seed=int(d["seed"]),
        )


def sample_params(seed, ranges=None):
    """Draw every effect intensity uniformly from its range."""
    r = dict(DEFAULT_RANGES, **(ranges or {}))
    rng = np.random.default_rng(seed)
    u = lambda name, size=None: rng.uniform(*r[name], size=size)  # noqa: E731
    noise = float(u("noise_sigma"))
    blur = float(u("blur_sigma"))
    shift = tuple((float(a), float(b)) for a, b in u("ca_shift", (3, 2)))
    scale = tuple(float(s) for s in u("ca_scale", 3))
    gain = float(u("gain"))
    return SensorEffectParams(noise, blur, shift, scale, gain, int(seed))


def _resample_channel(chan, shift, scale):
    h, w = chan.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # out(x) = in(c + (x - c) / s - t); edges clamped rather than filled
    sx = np.clip(cx + (xx - cx) / scale[0] - shift[0], 0, w - 1)
    sy = np.clip(cy + (yy - cy) / scale[1] - shift[1], 0, h - 1)
    return kernels.remap_bilinear(chan[:, :, None], sx, sy, 0.0)[:, :, 0]


def apply_effects(img, p):
    arr = as_image(img)
    if arr.shape[2] != 3:
        raise ValueError(f"sensor effects need a 3-channel image, got {arr.shape[2]} channel(s)")
    out = np.clip(arr * p.gain, 0.0, 1.0) if p.gain != 1.0 else arr.copy()
    if p.blur_sigma > 0:
        for c in range(3):
            out[:, :, c] = ndimage.gaussian_filter(out[:, :, c], p.blur_sigma, mode="nearest", truncate=3.0)
    for c in range(3):
        shift, s = p.ca_shift[c], p.ca_scale[c]
        if shift != (0.0, 0.0) or s != 1.0:
            out[:, :, c] = _resample_channel(out[:, :, c], shift, (s, s))
    if p.noise_sigma > 0:
        rng = np.random.default_rng([p.seed, 1])
        out = out + rng.normal(0.0, p.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def image_seed(base_seed, index):
    """Independent per-image seed derived from a run seed and image index."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])
