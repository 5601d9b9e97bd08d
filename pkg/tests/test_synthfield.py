import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from soyyield.counting import blob_count
from soyyield.ingest import assign_frames, read_frames, read_windows, read_yields
from soyyield.ranking import select_top
from soyyield.spatial import adjust
from soyyield.synthfield import (SynthConfig, TrendSpec, gen_field, gen_plot_images, read_frame_truth,
                                 scaled_trend, trend_variance_reduction, write_synth_dataset)


def test_images_deterministic():
    a, pa = gen_plot_images(9, seed=4)
    b, pb = gen_plot_images(9, seed=4)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(pa.points, pb.points)
    c, _ = gen_plot_images(9, seed=5)
    assert not np.array_equal(a, c)


def test_zero_seeds():
    img, ps = gen_plot_images(0, seed=1)
    assert len(ps) == 0 and blob_count(img) == 0
    with pytest.raises(ValueError):
        gen_plot_images(-1, seed=1)


@pytest.mark.parametrize("seed", range(5))
def test_seven_seeds_recovered(seed):
    img, ps = gen_plot_images(7, seed=seed)
    assert len(ps) == 7 and blob_count(img) == 7


def test_points_inside_frame_through_fisheye():
    cfg = SynthConfig()
    img, ps = gen_plot_images(5, seed=2, size=(96, 96), margin=14, camera=cfg.camera())
    assert img.shape == (96, 96, 3)
    assert np.all((ps.points[:, :2] >= 0) & (ps.points[:, :2] < 96))
    assert blob_count(img) == 5


def test_field_decomposition_and_reproducibility():
    f = gen_field(6, 7, TrendSpec(0.5, -0.2, 0.05), genotype_sd=1.0, seed=3, noise_sd=0.2, mean=4.0)
    np.testing.assert_allclose(f.grid.values, 4.0 + f.genotype + f.trend + f.noise)
    g = gen_field(6, 7, TrendSpec(0.5, -0.2, 0.05), genotype_sd=1.0, seed=3, noise_sd=0.2, mean=4.0)
    np.testing.assert_array_equal(f.grid.values, g.grid.values)
    with pytest.raises(ValueError):
        gen_field(0, 5)


def test_scaled_trend_sd():
    f = gen_field(9, 11, scaled_trend(9, 11, 3.0), seed=0)
    assert np.std(f.trend) == pytest.approx(3.0)


@pytest.mark.parametrize("seed", range(5))
def test_trend_removed(seed):
    # linear trend three times the genotype standard deviation
    f = gen_field(10, 10, scaled_trend(10, 10, 3.0), genotype_sd=1.0, seed=seed)
    assert trend_variance_reduction(f, adjust(f.grid).adjusted) >= 0.80


@pytest.mark.parametrize("seed", range(10))
def test_no_trend_keeps_ranking(seed):
    # the slope fits only genotype scatter here, so the ranking barely moves
    f = gen_field(26, 25, None, genotype_sd=1.0, seed=seed)
    res = adjust(f.grid)
    assert spearmanr(f.grid.values, res.adjusted)[0] >= 0.99
    raw = dict(zip(f.grid.plot_ids, f.grid.values))
    adj = dict(zip(f.grid.plot_ids, res.adjusted))
    for q in (0.1, 0.2, 0.3):
        top = select_top(raw, q)
        assert len(top & select_top(adj, q)) >= 0.9 * len(top)


def test_reduction_needs_trend():
    f = gen_field(5, 5, None, seed=0)
    with pytest.raises(ValueError):
        trend_variance_reduction(f, f.grid.values)


def test_dataset_manifests(tmp_path):
    cfg = SynthConfig(n_range=3, n_pass=2, frames_per_seq=4, alley_frames=1, seed=1)
    out = write_synth_dataset(tmp_path / "s", cfg)
    frames = read_frames(out / "frames.csv")
    wins = read_windows(out / "windows.csv")
    ys = read_yields(out / "yields.csv")
    assert len(frames) == 2 * 4 * 3 * (4 + 1)
    assert len(wins) == 3 * 2 * 4 and len(ys) == 6
    sets, unassigned = assign_frames(frames, wins)
    assert len(unassigned) == 2 * 4 * 3
    assert all(len(seq) == 4 for ps in sets.values() for seq in ps.sequences.values())
    truth = read_frame_truth(out / "frame_truth.csv")
    assert all(truth[f.path] == 0 for f in unassigned)
    latent = json.loads((out / "truth.json").read_text())["plots"]
    for y in ys:
        assert y.yield_t_ha == pytest.approx(latent[y.plot_id]["yield_t_ha"], rel=1e-9)
    assert (out / "camera.toml").read_text().startswith("[camera]")
