"""Synthetic fields and frames with known ground truth.

Frames are stylised: bright elliptical seeds on a dark textured background,
optionally viewed through a fisheye lens. Fields are genotype effects plus a
smooth spatial trend plus noise. Every generator returns the latent values
it used so tests can check against them.
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .camera import CameraIntrinsics, project_fisheye, undistort_points
from .counting import PointSet
from .images import write_png
from .ingest import (FrameRecord, PlotWindow, PlotYieldRecord, write_frames, write_windows, write_yields)
from .spatial import FieldGrid

SEED_COLOR = np.array([0.92, 0.86, 0.62])


@dataclass(frozen=True)
class Ellipse:
    x: float
    y: float
    a: float
    b: float
    angle: float


def background(h, w, rng):
    tex = ndimage.gaussian_filter(rng.random((h, w)), 1.5)
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    base = np.array([0.10, 0.08, 0.05])
    return base + 0.10 * tex[:, :, None] * np.array([1.0, 0.9, 0.7])


def draw_ellipses(img, ellipses, color=SEED_COLOR):
    h, w = img.shape[:2]
    for e in ellipses:
        r = int(np.ceil(max(e.a, e.b))) + 1
        y0, y1 = max(0, int(e.y) - r), min(h, int(e.y) + r + 2)
        x0, x1 = max(0, int(e.x) - r), min(w, int(e.x) + r + 2)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        c, s = np.cos(e.angle), np.sin(e.angle)
        dx, dy = xx - e.x, yy - e.y
        u = (c * dx + s * dy) / e.a
        v = (-s * dx + c * dy) / e.b
        inside = u * u + v * v <= 1.0
        img[y0:y1, x0:x1][inside] = color
    return img


def place_ellipses(count, h, w, rng, radius=(1.8, 2.8), margin=0, overlap=False, gap=3.0, max_tries=20000):
    placed = []
    tries = 0
    while len(placed) < count:
        tries += 1
        if tries > max_tries:
            raise ValueError(f"could not place {count} separated seeds in a {w}x{h} frame")
        a, b = sorted(rng.uniform(*radius, size=2), reverse=True)
        lo = margin + a + 1
        if w - 1 - lo <= lo or h - 1 - lo <= lo:
            raise ValueError("frame too small for the requested margin")
        e = Ellipse(float(rng.uniform(lo, w - 1 - lo)), float(rng.uniform(lo, h - 1 - lo)),
                    float(a), float(b), float(rng.uniform(0, np.pi)))
        if not overlap and any(np.hypot(e.x - o.x, e.y - o.y) < e.a + o.a + gap for o in placed):
            continue
        placed.append(e)
    return placed


def fisheye_view(img, intr, focal=None, center=None):
    """Render what a fisheye lens sees of a pinhole image (inverse mapping)."""
    h, w = img.shape[:2]
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src = undistort_points(np.stack([u, v], axis=-1), intr, focal, center)
    return kernels.remap_bilinear(img, src[..., 0], src[..., 1], 0.0)


def gen_plot_images(count, seed, size=(64, 64), overlap=False, margin=0, radius=(1.8, 2.8), camera=None):
    """One frame with ``count`` seeds and the ground-truth seed centres.

    With ``camera`` the frame is rendered through that fisheye lens (the
    pinhole scene uses the same focal length and principal point) and the
    returned points are the projected centres.
    """
    if count < 0:
        raise ValueError("seed count must be non-negative")
    h, w = size
    rng = np.random.default_rng(seed)
    img = background(h, w, rng)
    ellipses = place_ellipses(count, h, w, rng, radius, margin, overlap)
    draw_ellipses(img, ellipses)
    pts = np.array([[e.x, e.y, 1.0] for e in ellipses]).reshape(-1, 3)
    if camera is not None:
        img = fisheye_view(img, camera)
        if len(pts):
            rays = np.stack([(pts[:, 0] - camera.px) / camera.fx, (pts[:, 1] - camera.py) / camera.fx,
                             np.ones(len(pts))], axis=-1)
            pts[:, :2] = project_fisheye(rays, camera)
    return np.clip(img, 0.0, 1.0), PointSet(f"seed{seed}", pts)


@dataclass(frozen=True)
class TrendSpec:
    range_slope: float = 0.0
    pass_slope: float = 0.0
    quadratic: float = 0.0


@dataclass
class SynthField:
    grid: FieldGrid
    genotype: np.ndarray
    trend: np.ndarray
    noise: np.ndarray


def gen_field(n_range, n_pass, trend=None, genotype_sd=1.0, seed=0, noise_sd=0.0, mean=0.0):
    """Observed values = mean + genotype + trend + noise on an n_range x n_pass grid."""
    if n_range < 1 or n_pass < 1:
        raise ValueError("field needs at least one range and one pass")
    trend = trend or TrendSpec()
    rng = np.random.default_rng(seed)
    rr, pp = np.meshgrid(np.arange(n_range), np.arange(n_pass), indexing="ij")
    rc = rr - (n_range - 1) / 2.0
    pc = pp - (n_pass - 1) / 2.0
    t = trend.range_slope * rc + trend.pass_slope * pc + trend.quadratic * (rc ** 2 + pc ** 2)
    g = rng.normal(0.0, genotype_sd, size=(n_range, n_pass))
    e = rng.normal(0.0, noise_sd, size=(n_range, n_pass)) if noise_sd > 0 else np.zeros((n_range, n_pass))
    ids = [f"R{r:02d}P{p:02d}" for r, p in zip(rr.ravel(), pp.ravel())]
    grid = FieldGrid(ids, rr.ravel(), pp.ravel(), (mean + g + t + e).ravel())
    return SynthField(grid, g.ravel(), t.ravel(), e.ravel())


def scaled_trend(n_range, n_pass, sd, direction=(0.6, 0.8)):
    """Linear TrendSpec whose values have population standard deviation ``sd``."""
    rr, pp = np.meshgrid(np.arange(n_range) - (n_range - 1) / 2.0, np.arange(n_pass) - (n_pass - 1) / 2.0,
                         indexing="ij")
    spread = float(np.std(direction[0] * rr + direction[1] * pp))
    if spread == 0:
        raise ValueError("trend direction has no variation on this grid")
    k = sd / spread
    return TrendSpec(direction[0] * k, direction[1] * k)


def trend_variance_reduction(sf, adjusted):
    """Fraction of trend variance removed by an adjustment.

    What remains of the trend is ``adjusted - genotype - noise`` (the grand
    mean drops out of the variance).
    """
    var_t = float(np.var(sf.trend))
    if var_t == 0:
        raise ValueError("field has no trend to remove")
    resid = np.asarray(adjusted, dtype=np.float64) - sf.genotype - sf.noise
    return 1.0 - float(np.var(resid)) / var_t


@dataclass
class SynthConfig:
    n_range: int = 6
    n_pass: int = 8
    frames_per_seq: int = 10
    alley_frames: int = 2
    frame_ms: int = 100
    frame_size: int = 96
    seeds_per_t_ha: float = 4.0
    mean_yield: float = 3.5
    genotype_sd: float = 0.6
    trend: TrendSpec = field(default_factory=lambda: TrendSpec(0.12, -0.08, 0.0))
    noise_sd: float = 0.1
    bad_quality_fraction: float = 0.1
    area_m2: float = 0.76 * 2 * 2.13
    seed: int = 0

    def camera(self):
        s = self.frame_size
        return CameraIntrinsics(fx=0.7 * s, fy=0.7 * s, px=(s - 1) / 2.0, py=(s - 1) / 2.0, width=s, height=s)

    def crop(self):
        c = (self.frame_size * 3) // 4
        return (c, c)


def _frame_seed(base, *parts):
    return int(np.random.SeedSequence([int(base), *map(int, parts)]).generate_state(1)[0])


def write_synth_dataset(out_dir, cfg=None):
    """Write frames, manifests and latent truth for a synthetic trial.

    Layout under ``out_dir``: ``frames/*.png``, ``frames.csv``,
    ``windows.csv``, ``yields.csv``, ``frame_truth.csv``, ``truth.json`` and
    ``camera.toml``. Each (pass, row, side) traverse is one collection; the
    frames between plots fall in alleys and stay unassigned.
    """
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    fieldv = gen_field(cfg.n_range, cfg.n_pass, cfg.trend, cfg.genotype_sd, cfg.seed, cfg.noise_sd, cfg.mean_yield)
    grid = fieldv.grid
    yields = np.maximum(grid.values, 0.3)
    rng = np.random.default_rng([cfg.seed, 7])
    bad = rng.random(len(yields)) < cfg.bad_quality_fraction
    cam = cfg.camera()
    s = cfg.frame_size
    margin = (s - cfg.crop()[0]) // 2 + 2
    # fisheye rendering of every frame shares one map
    u, v = np.meshgrid(np.arange(s, dtype=np.float64), np.arange(s, dtype=np.float64))
    src = undistort_points(np.stack([u, v], axis=-1), cam)

    frames, windows, truth_rows, records = [], [], [], []
    per_range = cfg.frames_per_seq + cfg.alley_frames
    for i, pid in enumerate(grid.plot_ids):
        mass = yields[i] * cfg.area_m2 / 10.0
        records.append(PlotYieldRecord(pid, int(grid.ranges[i]), int(grid.passes[i]), float(mass), 0.13,
                                       cfg.area_m2, quality=0 if bad[i] else 1))
    lookup = {(int(r), int(p)): k for k, (r, p) in enumerate(zip(grid.ranges, grid.passes))}
    for p in range(cfg.n_pass):
        for row in (1, 2):
            for side in ("A", "B"):
                coll = f"P{p:02d}-R{row}{side}"
                cam_side = "left" if side == "A" else "right"
                for r in range(cfg.n_range):
                    k = lookup[(r, p)]
                    start = (r * per_range + cfg.alley_frames) * cfg.frame_ms
                    windows.append(PlotWindow(grid.plot_ids[k], row, side, coll, start,
                                              (r + 1) * per_range * cfg.frame_ms))
                    for j in range(per_range):
                        t = (r * per_range + j) * cfg.frame_ms
                        in_plot = j >= cfg.alley_frames
                        fseed = _frame_seed(cfg.seed, p, row, ord(side), r, j)
                        lam = yields[k] * cfg.seeds_per_t_ha if in_plot else 0.0
                        n = int(np.random.default_rng(fseed).poisson(lam))
                        frng = np.random.default_rng([fseed, 1])
                        img = background(s, s, frng)
                        draw_ellipses(img, place_ellipses(n, s, s, frng, margin=margin))
                        img = kernels.remap_bilinear(img, src[..., 0], src[..., 1], 0.0)
                        rel = f"frames/{coll}_{t:07d}.png"
                        write_png(out / rel, np.clip(img, 0.0, 1.0))
                        frames.append(FrameRecord(rel, t, coll, cam_side))
                        truth_rows.append((rel, n))
    write_frames(out / "frames.csv", frames)
    write_windows(out / "windows.csv", windows)
    write_yields(out / "yields.csv", records)
    with open(out / "frame_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_path", "seed_count"])
        w.writerows(truth_rows)
    latent = {
        pid: {"genotype": float(fieldv.genotype[i]), "trend": float(fieldv.trend[i]),
              "noise": float(fieldv.noise[i]), "yield_t_ha": float(yields[i]), "quality": int(not bad[i])}
        for i, pid in enumerate(grid.plot_ids)
    }
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump({"config": _config_dict(cfg), "plots": latent}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    (out / "camera.toml").write_text(camera_toml(cam, cfg.crop()), encoding="utf-8")
    return out


def _config_dict(cfg):
    d = asdict(cfg)
    d["trend"] = asdict(cfg.trend)
    return d


def camera_toml(cam, crop):
    lines = ["[camera]"]
    for name in ("fx", "fy", "px", "py", "k1", "k2", "k3", "k4"):
        lines.append(f"{name} = {float(getattr(cam, name))!r}")
    lines.append(f"width = {cam.width}")
    lines.append(f"height = {cam.height}")
    lines.append("")
    lines.append("[undistort]")
    lines.append(f"crop = [{crop[0]}, {crop[1]}]")
    return "\n".join(lines) + "\n"


def read_frame_truth(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["frame_path"]: int(r["seed_count"]) for r in csv.DictReader(fh)}
