"""Frame manifests, plot windows and ground-truth yield records.

CSV layouts (UTF-8, header row required, extra columns ignored)::

    frames.csv   frame_path,timestamp_ms,collection_id,camera_side
    windows.csv  plot_id,row,side,collection_id,start_ms,stop_ms
    yields.csv   plot_id,range,pass,mass_kg,moisture_pct,area_m2
"""

import csv
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

MOISTURE_BASIS = 0.13
ROWS = (1, 2)
SIDES = ("A", "B")
KEYS = tuple((row, side) for row in ROWS for side in SIDES)
CAMERA_SIDES = ("left", "right")


class ManifestError(ValueError):
    """Malformed manifest content."""


@dataclass(frozen=True)
class FrameRecord:
    path: str
    timestamp: int
    collection: str
    camera_side: str = "left"

    def __post_init__(self):
        if not self.path:
            raise ManifestError("frame path must be nonempty")
        if self.timestamp < 0:
            raise ManifestError(f"{self.path}: negative timestamp {self.timestamp}")
        if self.camera_side not in CAMERA_SIDES:
            raise ManifestError(f"{self.path}: camera side must be left/right, got {self.camera_side!r}")


@dataclass(frozen=True)
class PlotWindow:
    plot_id: str
    row: int
    side: str
    collection: str
    start: int
    stop: int

    def __post_init__(self):
        if self.row not in ROWS:
            raise ManifestError(f"plot {self.plot_id}: row must be 1 or 2, got {self.row}")
        if self.side not in SIDES:
            raise ManifestError(f"plot {self.plot_id}: side must be A or B, got {self.side!r}")
        if not self.start < self.stop:
            raise ManifestError(f"plot {self.plot_id}: window start {self.start} >= stop {self.stop}")

    def contains(self, t):
        return self.start <= t < self.stop


@dataclass
class PlotFrameSet:
    """Frames of one plot, one timestamp-ordered sequence per (row, side)."""

    plot_id: str
    sequences: dict = field(default_factory=lambda: {key: [] for key in KEYS})

    def __getitem__(self, key):
        return self.sequences[key]

    def __len__(self):
        return sum(len(seq) for seq in self.sequences.values())


@dataclass
class PlotYieldRecord:
    plot_id: str
    range: int
    pass_: int
    mass_kg: float
    moisture: float
    area_m2: float
    quality: int = 1
    est_tsc: float | None = None
    est_yield: float | None = None
    adjusted: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mass_kg < 0:
            raise ManifestError(f"plot {self.plot_id}: negative mass")
        if not 0 <= self.moisture < 1:
            raise ManifestError(f"plot {self.plot_id}: moisture fraction {self.moisture} not in [0, 1)")
        if not self.area_m2 > 0:
            raise ManifestError(f"plot {self.plot_id}: area must be positive")

    @property
    def yield_t_ha(self):
        return normalize_yield(self.mass_kg, self.moisture, self.area_m2)


def normalize_yield(mass_kg, moisture, area_m2):
    """Harvested mass to t/ha at the 13 % moisture basis.

    The dry matter ``mass * (1 - moisture)`` is re-expressed at 13 %
    moisture; kg/m^2 times 10 gives t/ha.
    """
    if area_m2 <= 0:
        raise ValueError(f"plot area must be positive, got {area_m2}")
    if not 0 <= moisture < 1:
        raise ValueError(f"moisture fraction must be in [0, 1), got {moisture}")
    if mass_kg < 0:
        raise ValueError(f"mass must be non-negative, got {mass_kg}")
    return mass_kg * (1.0 - moisture) / (1.0 - MOISTURE_BASIS) / area_m2 * 10.0


def _check_overlaps(windows):
    # Windows must not overlap within a collection: a frame belongs to one plot view.
    by_coll = defaultdict(list)
    for w in windows:
        by_coll[w.collection].append(w)
    for coll, ws in by_coll.items():
        ws = sorted(ws, key=lambda w: (w.start, w.stop, w.plot_id))
        seen = set()
        for prev, cur in zip(ws, ws[1:]):
            if cur.start < prev.stop:
                raise ManifestError(
                    f"overlapping windows in collection {coll}: "
                    f"{prev.plot_id}/{prev.row}{prev.side} [{prev.start},{prev.stop}) and "
                    f"{cur.plot_id}/{cur.row}{cur.side} [{cur.start},{cur.stop})"
                )
        for w in ws:
            key = (w.plot_id, w.row, w.side)
            if key in seen:
                raise ManifestError(f"duplicate window {key} in collection {coll}")
            seen.add(key)


def _frame_key(f):
    return (f.timestamp, f.path, f.collection)


def assign_frames(frames, windows):
    """Group frames into plots by half-open time windows.

    Returns ``(sets, unassigned)`` where ``sets`` maps plot id to a
    :class:`PlotFrameSet`; every plot with at least one window gets an entry.
    """
    windows = list(windows)
    _check_overlaps(windows)
    by_coll = defaultdict(list)
    sets = {}
    for w in windows:
        by_coll[w.collection].append(w)
        sets.setdefault(w.plot_id, PlotFrameSet(w.plot_id))
    starts = {}
    for coll, ws in by_coll.items():
        ws.sort(key=lambda w: w.start)
        starts[coll] = [w.start for w in ws]

    unassigned = []
    for f in sorted(frames, key=_frame_key):
        ws = by_coll.get(f.collection)
        if ws:
            i = bisect_right(starts[f.collection], f.timestamp) - 1
            if i >= 0 and ws[i].contains(f.timestamp):
                w = ws[i]
                sets[w.plot_id][(w.row, w.side)].append(f)
                continue
        unassigned.append(f)
    return sets, unassigned


def _open_csv(path, required):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        fh.close()
        raise ManifestError(f"{path}: missing columns {missing}")
    return fh, reader


def _parse(path, required, build):
    fh, reader = _open_csv(path, required)
    out = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(build(row))
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_frames(path):
    """Frame paths are kept verbatim; resolve them with :func:`resolve_path`."""

    def build(r):
        return FrameRecord(r["frame_path"], int(r["timestamp_ms"]), r["collection_id"], r["camera_side"])

    return _parse(path, ["frame_path", "timestamp_ms", "collection_id", "camera_side"], build)


def resolve_path(frame_path, root):
    p = Path(frame_path)
    return p if p.is_absolute() or root is None else Path(root) / p


def read_windows(path):
    def build(r):
        return PlotWindow(
            r["plot_id"], int(r["row"]), r["side"], r["collection_id"], int(r["start_ms"]), int(r["stop_ms"])
        )

    return _parse(path, ["plot_id", "row", "side", "collection_id", "start_ms", "stop_ms"], build)


def read_yields(path):
    def build(r):
        return PlotYieldRecord(
            plot_id=r["plot_id"],
            range=int(r["range"]),
            pass_=int(r["pass"]),
            mass_kg=float(r["mass_kg"]),
            moisture=float(r["moisture_pct"]) / 100.0,
            area_m2=float(r["area_m2"]),
            quality=int(r.get("quality") or 1),
        )

    return _parse(path, ["plot_id", "range", "pass", "mass_kg", "moisture_pct", "area_m2"], build)


def write_frames(path, frames, relative_to=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_path", "timestamp_ms", "collection_id", "camera_side"])
        for f in frames:
            p = f.path if relative_to is None else str(Path(f.path).relative_to(relative_to))
            w.writerow([p, f.timestamp, f.collection, f.camera_side])


def write_windows(path, windows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "row", "side", "collection_id", "start_ms", "stop_ms"])
        for win in windows:
            w.writerow([win.plot_id, win.row, win.side, win.collection, win.start, win.stop])


def write_yields(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "range", "pass", "mass_kg", "moisture_pct", "area_m2", "quality"])
        for r in records:
            w.writerow([r.plot_id, r.range, r.pass_, repr(r.mass_kg), repr(r.moisture * 100.0),
                        repr(r.area_m2), r.quality])


def write_assignments(path, sets):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "row", "side", "frame_path", "timestamp_ms", "collection_id", "camera_side"])
        for pid in sorted(sets):
            for (row, side) in KEYS:
                for f in sets[pid][(row, side)]:
                    w.writerow([pid, row, side, f.path, f.timestamp, f.collection, f.camera_side])


def read_assignments(path):
    fh, reader = _open_csv(path, ["plot_id", "row", "side", "frame_path", "timestamp_ms"])
    sets = {}
    with fh:
        for r in reader:
            ps = sets.setdefault(r["plot_id"], PlotFrameSet(r["plot_id"]))
            f = FrameRecord(r["frame_path"], int(r["timestamp_ms"]), r.get("collection_id") or "",
                            r.get("camera_side") or "left")
            ps[(int(r["row"]), r["side"])].append(f)
    for ps in sets.values():
        for seq in ps.sequences.values():
            seq.sort(key=_frame_key)
    return sets
