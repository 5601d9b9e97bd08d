import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mask20, moving_grid_bruteforce
from soyyield.spatial import (FieldGrid, GridMask, adjust, default_offsets, moving_mean, moving_means, read_field,
                              write_adjusted, write_summary)


def grid_5x5():
    return FieldGrid.from_array(np.arange(1.0, 26.0).reshape(5, 5))


def test_mask_shape():
    offs = default_offsets()
    assert len(offs) == 20 and set(offs) == set(mask20())
    pattern = [[0, 1, 1, 1, 0], [1] * 5, [1, 1, 0, 1, 1], [1] * 5, [0, 1, 1, 1, 0]]
    assert set(GridMask.from_pattern(pattern).offsets) == set(offs)


def test_mask_validation():
    with pytest.raises(ValueError):
        GridMask(((0, 0), (1, 0)))
    with pytest.raises(ValueError):
        GridMask(((1, 0), (1, 0)))
    with pytest.raises(ValueError):
        GridMask.from_pattern([[1, 1], [1, 1]])


def test_center_moving_mean():
    assert moving_mean(grid_5x5(), GridMask(), "r2p2") == 13.0


def test_corner_uses_available_neighbours():
    g = grid_5x5()
    # corner (0,0) sees (0,1),(0,2),(1,0),(1,1),(1,2),(2,0),(2,1): values 2,3,6,7,8,11,12
    assert moving_mean(g, GridMask(), "r0p0") == pytest.approx(49 / 7)


def test_constant_field():
    g = FieldGrid.from_array(np.full((4, 6), 2.5))
    np.testing.assert_allclose(moving_means(g), 2.5)


def test_unknown_and_isolated_plot():
    with pytest.raises(KeyError):
        moving_mean(grid_5x5(), GridMask(), "nope")
    g = FieldGrid(["a", "b"], [0, 9], [0, 9], [1.0, 2.0])
    with pytest.raises(ValueError):
        moving_mean(g, GridMask(), "a")


def random_field(seed, R, P, holes):
    rng = np.random.default_rng(seed)
    arr = rng.normal(5, 2, (R, P))
    arr[rng.random((R, P)) < holes] = np.nan
    return arr


@given(st.integers(0, 2**31), st.integers(3, 9), st.integers(3, 9), st.floats(0, 0.3))
def test_adjust_matches_bruteforce(seed, R, P, holes):
    arr = random_field(seed, R, P, holes)
    g = FieldGrid.from_array(arr)
    cells = {(int(r), int(p)): float(v) for r, p, v in zip(g.ranges, g.passes, g.values)}
    x_ok = sum(1 for (r, p) in cells if any((r + a, p + b) in cells for a, b in mask20()))
    if x_ok < 3:
        with pytest.raises(ValueError):
            adjust(g)
        return
    x, xbar, b, adj = moving_grid_bruteforce(cells)
    sxx = sum((v - xbar) ** 2 for v in x.values())
    if sxx < 1e-9:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = adjust(g)
    assert res.xbar == pytest.approx(xbar, rel=1e-9, abs=1e-9)
    assert res.b == pytest.approx(b, rel=1e-9, abs=1e-9)
    for i, key in enumerate(zip(g.ranges.tolist(), g.passes.tolist())):
        assert res.adjusted[i] == pytest.approx(adj[key], rel=1e-9, abs=1e-9)
    assert sorted(res.isolated) == sorted(g.plot_ids[i] for i, k in enumerate(zip(g.ranges, g.passes))
                                          if (int(k[0]), int(k[1])) not in x)


@given(st.integers(0, 2**31), st.floats(-100, 100), st.floats(0.1, 10))
def test_shift_and_scale_equivariance(seed, c, s):
    g = FieldGrid.from_array(random_field(seed, 6, 7, 0.0))
    base = adjust(g).adjusted
    np.testing.assert_allclose(adjust(g.with_values(g.values + c)).adjusted, base + c, atol=1e-8)
    np.testing.assert_allclose(adjust(g.with_values(g.values * s)).adjusted, base * s, rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2**31))
def test_mean_preserved(seed):
    g = FieldGrid.from_array(random_field(seed, 5, 8, 0.1))
    res = adjust(g)
    assert res.adjusted.mean() == pytest.approx(res.observed.mean(), rel=1e-12, abs=1e-12)


def test_zero_variance_is_identity_with_warning():
    g = FieldGrid.from_array(np.full((4, 4), 3.0))
    with pytest.warns(RuntimeWarning):
        res = adjust(g)
    assert res.b == 0.0 and res.zero_variance
    np.testing.assert_array_equal(res.adjusted, g.values)


def test_needs_three_plots():
    with pytest.raises(ValueError):
        adjust(FieldGrid(["a", "b"], [0, 0], [0, 1], [1.0, 2.0]))


def test_grid_validation():
    with pytest.raises(ValueError):
        FieldGrid(["a", "b"], [0, 0], [0, 0], [1.0, 2.0])
    with pytest.raises(ValueError):
        FieldGrid(["a", "a"], [0, 0], [0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        FieldGrid(["a"], [0, 1], [0], [1.0])


def test_io_round_trip(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("plot_id,range,pass,y\n" + "".join(f"p{i},{i // 3},{i % 3},{i * 1.5}\n" for i in range(9)))
    g = read_field(p, "y")
    assert g.plot_ids[4] == "p4" and g.values[4] == 6.0
    res = adjust(g)
    write_adjusted(tmp_path / "a.csv", g, res)
    write_summary(tmp_path / "s.json", res)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "plot_id,range,pass,value,adjusted,moving_mean"
    assert '"b"' in (tmp_path / "s.json").read_text()
    with pytest.raises(ValueError, match="missing column"):
        read_field(p, "nope")
