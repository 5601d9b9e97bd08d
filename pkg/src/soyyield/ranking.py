"""Top-fraction genotype selection and its agreement with ground truth."""

import csv
import json
import math
from dataclasses import asdict, dataclass

DEFAULT_FRACTIONS = (0.1, 0.2, 0.3)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v}")

    @property
    def n(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Scores:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None


def n_selected(n, fraction):
    if not 0 < fraction <= 1:
        raise ValueError(f"selection fraction must be in (0, 1], got {fraction}")
    # round first so 0.3 * 10 selects 3, not 4
    return max(1, math.ceil(round(fraction * n, 9)))


def rank_order(values):
    """Plot ids from best to worst; ties by ascending plot id."""
    return sorted(values, key=lambda pid: (-values[pid], pid))


def select_top(values, fraction):
    """The ``ceil(fraction * n)`` plots with the largest values."""
    if not values:
        raise ValueError("cannot select from an empty set of plots")
    k = n_selected(len(values), fraction)
    return set(rank_order(values)[:k])


def confusion(truth_selected, pred_selected, population):
    truth_selected, pred_selected, population = set(truth_selected), set(pred_selected), set(population)
    for name, s in (("truth", truth_selected), ("predicted", pred_selected)):
        extra = s - population
        if extra:
            raise ValueError(f"{name} selection has plots outside the population: {sorted(extra)[:5]}")
    tp = len(truth_selected & pred_selected)
    fp = len(pred_selected - truth_selected)
    fn = len(truth_selected - pred_selected)
    return ConfusionCounts(tp, len(population) - tp - fp - fn, fp, fn)


def scores(c):
    if c.n == 0:
        raise ValueError("empty population")
    pos = c.tp + c.fn
    neg = c.tn + c.fp
    return Scores(
        (c.tp + c.tn) / c.n,
        c.tp / pos if pos else None,
        c.tn / neg if neg else None,
    )


@dataclass
class SelectionReport:
    fraction: float
    counts: ConfusionCounts
    scores: Scores
    truth_only: list
    both: list
    pred_only: list

    def to_dict(self):
        return {
            "fraction": self.fraction,
            "counts": asdict(self.counts),
            "scores": asdict(self.scores),
            "venn": {"truth_only": self.truth_only, "both": self.both, "pred_only": self.pred_only},
        }


def selection_report(truth_values, pred_values, fractions=DEFAULT_FRACTIONS):
    """Compare top-fraction selections by predicted and by true values."""
    if set(truth_values) != set(pred_values):
        raise ValueError("truth and prediction must cover the same plots")
    population = set(truth_values)
    out = []
    for f in fractions:
        t = select_top(truth_values, f)
        p = select_top(pred_values, f)
        c = confusion(t, p, population)
        out.append(SelectionReport(f, c, scores(c), sorted(t - p), sorted(t & p), sorted(p - t)))
    return out


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def report_table(reports, label=""):
    head = f"{'threshold':>10}{'TP':>6}{'TN':>6}{'FP':>6}{'FN':>6}{'accuracy':>10}{'sensitivity':>13}{'specificity':>13}"
    lines = [label] if label else []
    lines.append(head)
    for r in reports:
        c, s = r.counts, r.scores
        lines.append(
            f"{r.fraction * 100:>9.0f}%{c.tp:>6}{c.tn:>6}{c.fp:>6}{c.fn:>6}"
            f"{_fmt(s.accuracy):>10}{_fmt(s.sensitivity):>13}{_fmt(s.specificity):>13}"
        )
    return "\n".join(lines) + "\n"


def write_report(path, reports, extra=None):
    doc = dict(extra or {})
    doc["thresholds"] = [r.to_dict() for r in reports]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_venn(path, report):
    """Set membership of every selected plot for one threshold."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "truth_selected", "pred_selected"])
        rows = [(p, 1, 0) for p in report.truth_only] + [(p, 1, 1) for p in report.both] + \
               [(p, 0, 1) for p in report.pred_only]
        for row in sorted(rows):
            w.writerow(row)


def parse_confusion(text):
    """Parse ``tp=20,tn=540,fp=45,fn=45``."""
    parts = {}
    for item in text.split(","):
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"bad confusion item {item!r}; expected key=value")
        parts[key.strip().lower()] = int(val)
    missing = {"tp", "tn", "fp", "fn"} - set(parts)
    if missing:
        raise ValueError(f"confusion counts missing {sorted(missing)}")
    return ConfusionCounts(parts["tp"], parts["tn"], parts["fp"], parts["fn"])
