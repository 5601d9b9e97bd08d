import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import confusion_from_lists
from soyyield.ranking import (ConfusionCounts, confusion, n_selected, parse_confusion, rank_order, report_table,
                              scores, select_top, selection_report, write_report, write_venn)

# published confusion counts (tp, tn, fp, fn) and the rounded scores reported for them
PUBLISHED = [
    ("tsc", 0.1, (20, 540, 45, 45), (0.86, 0.31, 0.92)),
    ("tsc", 0.2, (52, 441, 78, 79), (0.76, 0.40, 0.85)),
    ("tsc", 0.3, (97, 357, 98, 98), (0.70, 0.50, 0.78)),
    ("yield", 0.1, (11, 531, 54, 54), (0.83, 0.17, 0.91)),
    ("yield", 0.2, (33, 423, 97, 97), (0.70, 0.25, 0.81)),
    ("yield", 0.3, (65, 325, 130, 130), (0.60, 0.33, 0.71)),
]


@pytest.mark.parametrize("metric", ["accuracy", "sensitivity", "specificity"])
@pytest.mark.parametrize("name,frac,counts,want", PUBLISHED)
def test_published_scores(name, frac, counts, want, metric):
    s = scores(ConfusionCounts(*counts))
    i = ["accuracy", "sensitivity", "specificity"].index(metric)
    assert abs(getattr(s, metric) - want[i]) <= 0.005


def test_published_rows_cover_population():
    assert all(sum(c) == 650 for _, _, c, _ in PUBLISHED)


def test_score_example_precise():
    s = scores(ConfusionCounts(20, 540, 45, 45))
    assert (round(s.accuracy, 4), round(s.sensitivity, 4), round(s.specificity, 4)) == (0.8615, 0.3077, 0.9231)
    s = scores(ConfusionCounts(11, 531, 54, 54))
    assert (round(s.accuracy, 4), round(s.sensitivity, 4), round(s.specificity, 4)) == (0.8338, 0.1692, 0.9077)
    s = scores(ConfusionCounts(3, 7, 0, 0))
    assert (s.accuracy, s.sensitivity, s.specificity) == (1.0, 1.0, 1.0)


def test_undefined_scores_are_missing():
    s = scores(ConfusionCounts(0, 5, 0, 0))
    assert s.sensitivity is None and s.specificity == 1.0
    s = scores(ConfusionCounts(4, 0, 0, 1))
    assert s.specificity is None
    with pytest.raises(ValueError):
        scores(ConfusionCounts(0, 0, 0, 0))


def test_select_top_examples():
    vals = {f"p{i}": float(i) for i in range(10)}
    assert select_top(vals, 0.2) == {"p9", "p8"}
    assert select_top(vals, 1.0) == set(vals)
    assert select_top({k: 1.0 for k in vals}, 0.1) == {"p0"}
    with pytest.raises(ValueError):
        select_top({}, 0.1)
    with pytest.raises(ValueError):
        select_top(vals, 0.0)


def test_n_selected_rounding():
    assert n_selected(10, 0.3) == 3
    assert n_selected(650, 0.1) == 65
    assert n_selected(650, 0.2) == 130
    assert n_selected(7, 0.1) == 1


@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=4), st.integers(-100, 100), min_size=1, max_size=40),
       st.sampled_from([0.1, 0.2, 0.3, 0.5, 1.0]))
def test_select_top_invariant_under_monotone_maps(vals, frac):
    base = select_top(vals, frac)
    assert select_top({k: v ** 3 + 1000 for k, v in vals.items()}, frac) == base
    assert select_top({k: 3 * v + 7 for k, v in vals.items()}, frac) == base
    assert len(base) == n_selected(len(vals), frac)


def test_rank_order_ties():
    assert rank_order({"b": 1.0, "a": 1.0, "c": 2.0}) == ["c", "a", "b"]


def test_confusion_examples():
    pop = [f"p{i}" for i in range(10)]
    c = confusion({"p0", "p1"}, {"p0", "p1"}, pop)
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 8, 0, 0)
    c = confusion({"p0", "p1"}, {"p2", "p3"}, pop)
    assert (c.tp, c.tn, c.fp, c.fn) == (0, 6, 2, 2)
    with pytest.raises(ValueError):
        confusion({"zz"}, set(), pop)


@given(st.integers(1, 60), st.integers(0, 2**31))
def test_confusion_sums_and_matches_oracle(n, seed):
    rng = np.random.default_rng(seed)
    pop = [f"p{i}" for i in range(n)]
    t = {p for p in pop if rng.random() < 0.3}
    p = {q for q in pop if rng.random() < 0.3}
    c = confusion(t, p, pop)
    assert c.n == n
    assert (c.tp, c.tn, c.fp, c.fn) == confusion_from_lists(t, p, pop)


def test_parse_confusion():
    assert parse_confusion("tp=20,tn=540,fp=45,fn=45") == ConfusionCounts(20, 540, 45, 45)
    assert parse_confusion("FN=1, TP=2, TN=3, FP=4") == ConfusionCounts(2, 3, 4, 1)
    for bad in ("tp=1,tn=2,fp=3", "tp=1;tn=2", "tp=-1,tn=0,fp=0,fn=0"):
        with pytest.raises(ValueError):
            parse_confusion(bad)


def test_selection_report_and_outputs(tmp_path):
    truth = {f"p{i:02d}": float(i) for i in range(20)}
    pred = {k: v if v < 18 else -v for k, v in truth.items()}
    reps = selection_report(truth, pred)
    r10 = reps[0]
    assert r10.truth_only == ["p18", "p19"] and r10.pred_only == ["p16", "p17"] and r10.both == []
    assert (r10.counts.tp, r10.counts.fp, r10.counts.fn, r10.counts.tn) == (0, 2, 2, 16)
    assert "accuracy" in report_table(reps, "x")
    write_report(tmp_path / "r.json", reps, {"n": 20})
    write_venn(tmp_path / "v.csv", r10)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "plot_id,truth_selected,pred_selected" and len(lines) == 5
    with pytest.raises(ValueError):
        selection_report(truth, {"p00": 1.0})
