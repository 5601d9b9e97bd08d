"""Representative frame selection per plot.

Each (row, side) sequence is cut into eight equal sections by seven
splitters; the frames at the middle five splitters are kept. Two rows times
five frames gives ten frames per side and twenty per plot.
"""

import csv
from dataclasses import dataclass

from .ingest import KEYS, SIDES

N_SECTIONS = 8
KEPT_SPLITTERS = (2, 3, 4, 5, 6)
PER_SIDE = len(KEPT_SPLITTERS) * 2


class SamplingError(ValueError):
    pass


def splitter_indices(n):
    """Frame indices at the middle five of seven equidistant splitters.

    Splitter k sits at ``k * n / 8``; positions are rounded half up and
    clamped to ``n - 1``, so short sequences repeat frames.
    """
    if n < 1:
        raise SamplingError(f"cannot sample an empty sequence (n={n})")
    # floor(k*n/8 + 1/2) in integer arithmetic
    return [min((2 * k * n + N_SECTIONS) // (2 * N_SECTIONS), n - 1) for k in KEPT_SPLITTERS]


@dataclass
class PlotSample:
    plot_id: str
    side_a: list
    side_b: list

    def by_side(self):
        return {"A": self.side_a, "B": self.side_b}

    def frames(self):
        return self.side_a + self.side_b


def sample_plot(ps):
    """Pick 20 frames (10 per side, row 1 before row 2) from a plot's frame set."""
    picked = {side: [] for side in SIDES}
    for row, side in KEYS:
        seq = ps[(row, side)]
        if not seq:
            raise SamplingError(f"plot {ps.plot_id}: no frames for row {row} side {side}")
        picked[side].extend(seq[i] for i in splitter_indices(len(seq)))
    return PlotSample(ps.plot_id, picked["A"], picked["B"])


def write_samples(path, samples):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "side", "slot", "frame_path"])
        for s in samples:
            for side, frames in s.by_side().items():
                for slot, f in enumerate(frames):
                    w.writerow([s.plot_id, side, slot, f.path])


def read_samples(path):
    """Read a sample manifest into ``{plot_id: {"A": [paths], "B": [paths]}}``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            sides = out.setdefault(r["plot_id"], {"A": {}, "B": {}})
            sides[r["side"]][int(r["slot"])] = r["frame_path"]
    result = {}
    for pid, sides in out.items():
        result[pid] = {}
        for side, slots in sides.items():
            if sorted(slots) != list(range(PER_SIDE)):
                raise SamplingError(f"plot {pid} side {side}: expected slots 0..{PER_SIDE - 1}")
            result[pid][side] = [slots[i] for i in range(PER_SIDE)]
    return result
