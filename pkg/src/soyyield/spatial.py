"""Moving-grid spatial adjustment of plot phenotypes.

Each plot's value is corrected by its neighbourhood mean::

    adjusted_i = observed_i - b * (moving_mean_i - mean(moving_mean))

with ``b`` the least-squares slope of observed values on moving means.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def default_offsets():
    """5x5 neighbourhood without its four corners and centre (20 cells)."""
    return tuple(
        (dr, dp)
        for dr in range(-2, 3)
        for dp in range(-2, 3)
        if (dr, dp) != (0, 0) and not (abs(dr) == 2 and abs(dp) == 2)
    )


@dataclass(frozen=True)
class GridMask:
    offsets: tuple = field(default_factory=default_offsets)

    def __post_init__(self):
        offs = tuple((int(a), int(b)) for a, b in self.offsets)
        if (0, 0) in offs:
            raise ValueError("grid mask must exclude the centre cell")
        if len(set(offs)) != len(offs):
            raise ValueError("grid mask has duplicate offsets")
        object.__setattr__(self, "offsets", offs)

    @classmethod
    def from_pattern(cls, rows):
        """Build from a square 0/1 pattern whose centre is the adjusted plot."""
        pat = np.asarray(rows, dtype=int)
        h, w = pat.shape
        if h % 2 == 0 or w % 2 == 0:
            raise ValueError("pattern needs odd dimensions")
        cr, cp = h // 2, w // 2
        return cls(tuple((r - cr, p - cp) for r in range(h) for p in range(w) if pat[r, p] and (r, p) != (cr, cp)))


@dataclass
class FieldGrid:
    plot_ids: list
    ranges: np.ndarray
    passes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=int)
        self.passes = np.asarray(self.passes, dtype=int)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.plot_ids = [str(p) for p in self.plot_ids]
        n = len(self.plot_ids)
        if not (len(self.ranges) == len(self.passes) == len(self.values) == n):
            raise ValueError("plot ids, ranges, passes and values must have equal length")
        cells = set(zip(self.ranges.tolist(), self.passes.tolist()))
        if len(cells) != n:
            raise ValueError("duplicate (range, pass) cell in field")
        if len(set(self.plot_ids)) != n:
            raise ValueError("duplicate plot id in field")

    @classmethod
    def from_array(cls, arr, ids=None):
        arr = np.asarray(arr, dtype=np.float64)
        R, P = arr.shape
        rr, pp = np.meshgrid(np.arange(R), np.arange(P), indexing="ij")
        keep = np.isfinite(arr).ravel()
        r, p, v = rr.ravel()[keep], pp.ravel()[keep], arr.ravel()[keep]
        ids = ids or [f"r{a}p{b}" for a, b in zip(r, p)]
        return cls(ids, r, p, v)

    def dense(self):
        """``(values, valid, r0, p0)`` on the bounding (range, pass) box."""
        r0, p0 = int(self.ranges.min()), int(self.passes.min())
        R = int(self.ranges.max()) - r0 + 1
        P = int(self.passes.max()) - p0 + 1
        vals = np.zeros((R, P))
        valid = np.zeros((R, P), dtype=np.uint8)
        vals[self.ranges - r0, self.passes - p0] = self.values
        valid[self.ranges - r0, self.passes - p0] = 1
        return vals, valid, r0, p0

    def with_values(self, values):
        return FieldGrid(list(self.plot_ids), self.ranges.copy(), self.passes.copy(), values)


@dataclass
class AdjustmentResult:
    plot_ids: list
    observed: np.ndarray
    moving_means: np.ndarray
    xbar: float
    b: float
    adjusted: np.ndarray
    zero_variance: bool = False
    isolated: list = field(default_factory=list)

    def summary(self):
        return {
            "b": self.b,
            "xbar": self.xbar,
            "n_plots": len(self.plot_ids),
            "zero_variance": self.zero_variance,
            "isolated": list(self.isolated),
        }


def moving_means(grid, mask=None):
    """Moving mean for every plot (NaN where no mask cell has data)."""
    mask = mask or GridMask()
    vals, valid, r0, p0 = grid.dense()
    means, _ = kernels.moving_means(vals, valid, np.asarray(mask.offsets, dtype=np.int64))
    return means[grid.ranges - r0, grid.passes - p0]


def moving_mean(grid, mask, plot_id):
    try:
        i = grid.plot_ids.index(str(plot_id))
    except ValueError:
        raise KeyError(f"unknown plot {plot_id!r}") from None
    x = moving_means(grid, mask)[i]
    if np.isnan(x):
        raise ValueError(f"plot {plot_id!r}: no grid neighbour has a value")
    return float(x)


def adjust(grid, mask=None):
    """Moving-grid adjustment of every plot in ``grid``.

    Plots without any neighbour in the mask keep their observed value and
    are listed in ``isolated``; they do not enter the slope fit.
    """
    x = moving_means(grid, mask)
    ok = ~np.isnan(x)
    if ok.sum() < 3:
        raise ValueError(f"need at least 3 plots with neighbours, have {int(ok.sum())}")
    p = grid.values
    xbar = float(x[ok].mean())
    dx = x[ok] - xbar
    sxx = float(dx @ dx)
    zero_var = sxx <= 1e-12 * max(1.0, float(np.abs(x[ok]).max()) ** 2) * ok.sum()
    if zero_var:
        warnings.warn("moving means have no variance; adjustment is the identity", RuntimeWarning, stacklevel=2)
        b = 0.0
    else:
        b = float(dx @ (p[ok] - p[ok].mean())) / sxx
    adj = p.copy()
    adj[ok] = p[ok] - b * dx
    isolated = [pid for pid, good in zip(grid.plot_ids, ok) if not good]
    return AdjustmentResult(list(grid.plot_ids), p.copy(), x, xbar, b, adj, bool(zero_var), isolated)


def read_field(path, column="value"):
    ids, rs, ps, vs = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("plot_id", "range", "pass", column):
            if col not in (reader.fieldnames or []):
                raise ValueError(f"{path}: missing column {col!r}")
        for r in reader:
            ids.append(r["plot_id"])
            rs.append(int(r["range"]))
            ps.append(int(r["pass"]))
            vs.append(float(r[column]))
    return FieldGrid(ids, rs, ps, vs)


def write_adjusted(path, grid, res):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "range", "pass", "value", "adjusted", "moving_mean"])
        for i, pid in enumerate(grid.plot_ids):
            w.writerow([pid, int(grid.ranges[i]), int(grid.passes[i]), repr(float(res.observed[i])),
                        repr(float(res.adjusted[i])), repr(float(res.moving_means[i]))])


def write_summary(path, res):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(res.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
