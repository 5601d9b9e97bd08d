import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import soyyield.tensornet as tn
from oracles import numeric_grad, regressor_naive, rel_err
from soyyield.yieldnet import (FileExtractor, ReferenceExtractor, RegressorConfig, TrainConfig, YieldRegressor,
                               export_features, fit_regressor, fuse, load_model, predict_yield, save_model,
                               train_yield)

SMALL = RegressorConfig(conv_channels=4, fc_widths=(8, 4))


def test_fuse_examples():
    a = np.ones((10, 2, 3, 3))
    b = np.zeros((10, 2, 3, 3))
    f = fuse(a, b)
    assert f.shape == (4, 3, 3)
    np.testing.assert_array_equal(f[:2], 10.0)
    np.testing.assert_array_equal(f[2:], 0.0)


@pytest.mark.parametrize("na,nb", [(9, 10), (10, 11)])
def test_fuse_count_checked(na, nb):
    with pytest.raises(ValueError):
        fuse(np.zeros((na, 1, 2, 2)), np.zeros((nb, 1, 2, 2)))


def test_fuse_shape_mismatch():
    with pytest.raises(ValueError):
        fuse(np.zeros((10, 1, 2, 2)), np.zeros((10, 1, 2, 3)))


@given(st.integers(0, 2**31), st.randoms())
def test_fuse_permutation_invariant(seed, rnd):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(10, 2, 3, 2)) * 10.0 ** rng.integers(-3, 4, (10, 1, 1, 1))
    b = rng.normal(size=(10, 2, 3, 2))
    pa, pb = list(range(10)), list(range(10))
    rnd.shuffle(pa)
    rnd.shuffle(pb)
    np.testing.assert_array_equal(fuse(a[pa], b[pb]), fuse(a, b))


@given(st.integers(0, 2**31), st.floats(-4, 4))
def test_fuse_linear(seed, s):
    rng = np.random.default_rng(seed)
    a, b, c, d = (rng.normal(size=(10, 2, 2, 2)) for _ in range(4))
    np.testing.assert_allclose(fuse(a + s * c, b + s * d), fuse(a, b) + s * fuse(c, d), atol=1e-10)


def test_zero_regressor_zero_images():
    ext = ReferenceExtractor(channels=4, seed=0)
    reg = YieldRegressor((8, 2, 2), SMALL)
    for t in reg.params.values():
        t.data[...] = 0.0
    imgs = np.zeros((10, 16, 16, 3))
    assert predict_yield(imgs, imgs, ext, reg) == 0.0


def test_predict_clamps_negative():
    ext = ReferenceExtractor(channels=4, seed=0)
    reg = YieldRegressor((8, 2, 2), SMALL)
    reg.params["fc3.b"].data[...] = -5.0
    reg.params["fc3.w"].data[...] = 0.0
    imgs = np.random.default_rng(0).random((10, 16, 16, 3))
    assert predict_yield(imgs, imgs, ext, reg) == 0.0


def test_extractor_output_dims():
    ext = ReferenceExtractor(channels=5, seed=1)
    assert ext.extract_batch(np.zeros((2, 17, 24, 3))).shape == (2, 5, 3, 3)
    assert ext(np.zeros((9, 8, 3))).shape == (5, 2, 1)
    with pytest.raises(ValueError):
        ext.extract_batch(np.zeros((1, 8, 8, 4)))


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_naive(seed):
    rng = np.random.default_rng(seed)
    reg = YieldRegressor((6, 5, 4), SMALL, seed=seed)
    for t in reg.params.values():
        t.data = rng.normal(size=t.shape) * 0.5
    fused = rng.normal(size=(6, 5, 4))
    want = regressor_naive(fused, reg.state_dict())
    assert abs(reg.predict(fused) - want) <= 1e-10 * max(1.0, abs(want))


def test_predict_shape_checked():
    reg = YieldRegressor((4, 4, 4), SMALL)
    with pytest.raises(ValueError):
        reg.predict(np.zeros((4, 4, 5)))
    with pytest.raises(ValueError):
        YieldRegressor((4, 1, 4), SMALL)


def test_targets_at_initial_output_stay_put():
    rng = np.random.default_rng(0)
    x = rng.random((6, 4, 4, 4))
    reg = YieldRegressor((4, 4, 4), SMALL, seed=3)
    y = reg.predict(x)
    res = fit_regressor(x, y, reg, TrainConfig(batch_size=4, epochs=5, lr=1e-3))
    assert max(res.history) <= 1e-12


def _dataset(n=6, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return {f"P{i}": (rng.random((10, size, size, 3)), rng.random((10, size, size, 3)), float(rng.uniform(2, 5)))
            for i in range(n)}


def test_same_seed_same_history():
    ext = ReferenceExtractor(channels=4, seed=0)
    data = _dataset()
    cfg = TrainConfig(batch_size=4, epochs=4, lr=1e-3, seed=9)
    h1 = train_yield(data, ext, YieldRegressor((8, 2, 2), SMALL, seed=1), cfg).history
    h2 = train_yield(data, ext, YieldRegressor((8, 2, 2), SMALL, seed=1), cfg).history
    assert h1 == h2


def test_extractor_untouched_and_loss_drops():
    ext = ReferenceExtractor(channels=4, seed=0)
    before = {k: v.copy() for k, v in ext.params.items()}
    res = train_yield(_dataset(), ext, YieldRegressor((8, 2, 2), SMALL, seed=1),
                      TrainConfig(batch_size=3, epochs=40, lr=1e-2))
    for k, v in ext.params.items():
        assert v.tobytes() == before[k].tobytes()
    assert res.history[-1] < res.history[0]


def test_training_validation():
    with pytest.raises(ValueError):
        fit_regressor(np.zeros((0, 2, 2, 2)), [])
    with pytest.raises(ValueError):
        fit_regressor(np.zeros((2, 2, 2, 2)), [1.0])
    with pytest.raises(ValueError):
        train_yield({}, ReferenceExtractor(4))


@pytest.mark.parametrize("seed", range(5))
def test_regressor_gradients(seed):
    rng = np.random.default_rng(seed)
    reg = YieldRegressor((4, 4, 4), SMALL, seed=seed)
    for t in reg.params.values():
        t.data = rng.normal(size=t.shape) * 0.5
    x = rng.normal(size=(3, 4, 4, 4))
    y = rng.normal(size=(3, 1))

    def loss():
        return tn.mse(reg.forward(tn.Tensor(x)), y)

    for t in reg.params.values():
        t.zero_grad()
    loss().backward()
    for name, t in reg.params.items():
        num = numeric_grad(lambda: float(loss().data), t.data)
        assert rel_err(t.grad, num) < 1e-4, name


def test_save_load_round_trip(tmp_path):
    ext = ReferenceExtractor(channels=4, seed=2)
    reg = YieldRegressor((8, 3, 3), SMALL, seed=5)
    save_model(tmp_path / "m.ywts", reg, ext)
    reg2, ext2 = load_model(tmp_path / "m.ywts")
    assert reg2.in_shape == reg.in_shape and reg2.config == reg.config
    for k, v in reg.state_dict().items():
        np.testing.assert_array_equal(reg2.state_dict()[k], v.astype(np.float32))
    for k, v in ext.params.items():
        np.testing.assert_array_equal(ext2.params[k], v.astype(np.float32))
    save_model(tmp_path / "n.ywts", reg)
    assert load_model(tmp_path / "n.ywts")[1] is None


def test_file_extractor(tmp_path):
    rng = np.random.default_rng(0)
    maps = rng.random((20, 3, 2, 2)).astype(np.float32)
    paths = []
    for i, m in enumerate(maps):
        p = tmp_path / f"f{i}.png"
        export_features(str(p) + ".fimg", m)
        paths.append(str(p))
    fx = FileExtractor()
    got = fx.extract_batch(paths)
    np.testing.assert_array_equal(got, maps)
    assert fx.channels == 3
    fused = fuse(fx.extract_batch(paths[:10]), fx.extract_batch(paths[10:]))
    np.testing.assert_allclose(fused[:3], maps[:10].astype(float).sum(0))
