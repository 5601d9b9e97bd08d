"""Seed counts from detections or bright blobs, and count error metrics."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .images import to_luma


@dataclass
class PointSet:
    image_id: str
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and (np.any(pts[:, 2] < 0) or np.any(pts[:, 2] > 1)):
            raise ValueError(f"{self.image_id}: confidences must lie in [0, 1]")
        self.points = pts

    def __len__(self):
        return len(self.points)


def count_points(ps, threshold=0.5):
    """Number of detections with confidence >= threshold."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return int(np.count_nonzero(ps.points[:, 2] >= threshold))


def blob_areas(img, threshold=0.5):
    """Pixel areas of 8-connected above-threshold components, in label order."""
    mask = to_luma(img) > threshold
    labels, n = kernels.label_components(mask)
    return np.bincount(labels.ravel(), minlength=n + 1)[1:]


def blob_count(img, threshold=0.5, min_area=5):
    return int(np.count_nonzero(blob_areas(img, threshold) >= min_area))


@dataclass
class CountMetrics:
    mse: float
    mae: float
    mape: float | None
    r2: float | None
    residuals: list

    def to_dict(self):
        return asdict(self)


def count_metrics(truth, est, with_mape=True):
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(est, dtype=np.float64)
    if t.shape != e.shape or t.ndim != 1:
        raise ValueError(f"truth and estimates must be equal-length vectors, got {t.shape} and {e.shape}")
    if len(t) < 2:
        raise ValueError("count metrics need at least two samples")
    res = e - t
    mape = None
    if with_mape:
        if np.any(t == 0):
            raise ValueError("MAPE undefined: a ground-truth count is zero")
        mape = float(100.0 * np.mean(np.abs(res) / np.abs(t)))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss_tot if ss_tot > 0 else None
    return CountMetrics(float(np.mean(res ** 2)), float(np.mean(np.abs(res))), mape, r2, res.tolist())


def metrics_table(m, label="counts"):
    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    lines = [
        f"{'set':<12}{'MSE':>14}{'MAE':>12}{'MAPE(%)':>12}{'R2':>10}",
        f"{label:<12}{fmt(m.mse):>14}{fmt(m.mae):>12}{fmt(m.mape):>12}{fmt(m.r2):>10}",
    ]
    return "\n".join(lines) + "\n"


def write_metrics(json_path, m):
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(m.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_points(path):
    """points.csv (image_id,x,y,confidence) to ``{image_id: PointSet}``."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["image_id"], []).append(
                (float(r["x"]), float(r["y"]), float(r["confidence"]))
            )
    return {k: PointSet(k, np.array(v)) for k, v in rows.items()}


def write_points(path, pointsets):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "x", "y", "confidence"])
        for ps in pointsets:
            for x, y, c in ps.points:
                w.writerow([ps.image_id, repr(float(x)), repr(float(y)), repr(float(c))])


def _svg_plot(xs, ys, title, ref, size):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if ref == "diagonal":
        x_lo = y_lo = min(x_lo, y_lo)
        x_hi = y_hi = max(x_hi, y_hi)
    else:
        y_lo, y_hi = min(y_lo, 0.0), max(y_hi, 0.0)
    if math.isclose(x_lo, x_hi):
        x_hi = x_lo + 1.0
    if math.isclose(y_lo, y_hi):
        y_hi = y_lo + 1.0
    pad = 40

    def sx(v):
        return pad + (v - x_lo) / (x_hi - x_lo) * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - y_lo) / (y_hi - y_lo) * (size - 2 * pad)

    if ref == "diagonal":
        line = (sx(x_lo), sy(y_lo), sx(x_hi), sy(y_hi))
    else:
        line = (sx(x_lo), sy(0.0), sx(x_hi), sy(0.0))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" font-size="12">{title}</text>',
        '<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="gray"/>'.format(*line),
    ]
    parts += [f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="steelblue"/>' for a, b in zip(xs, ys)]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_svg(truth, est, title="estimated vs ground truth", size=360):
    """Scatter of estimates against truth with the 1:1 line, as SVG text."""
    return _svg_plot(truth, est, title, "diagonal", size)


def residual_svg(truth, est, title="residual vs ground truth", size=360):
    """Residuals (estimate minus truth) against truth with the zero line."""
    t = np.asarray(truth, dtype=np.float64)
    return _svg_plot(t, np.asarray(est, dtype=np.float64) - t, title, "zero", size)
