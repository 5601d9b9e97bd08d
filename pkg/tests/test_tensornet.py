import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import soyyield.tensornet as tn
from oracles import conv2d_naive, maxpool_naive, numeric_grad, rel_err

SEEDS = range(20)


def test_conv_hand_sum():
    out = tn.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0


def test_conv_identity_kernel_and_bias_only():
    x = np.random.default_rng(0).random((2, 1, 5, 4))
    np.testing.assert_array_equal(tn.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1)).data, x)
    out = tn.conv2d(x, np.zeros((3, 1, 3, 3)), np.array([0.5, -1.0, 2.0]), padding=1).data
    np.testing.assert_array_equal(out[:, 1], -1.0)


def test_conv_output_size():
    out = tn.conv2d(np.zeros((1, 2, 9, 7)), np.zeros((4, 2, 3, 3)), np.zeros(4), stride=2, padding=1)
    assert out.shape == (1, 4, 5, 4)


@pytest.mark.parametrize("bad", [
    dict(x=(1, 2, 5, 5), w=(1, 3, 3, 3), b=(1,)),
    dict(x=(1, 1, 5, 5), w=(2, 1, 3, 3), b=(1,)),
    dict(x=(1, 1, 2, 2), w=(1, 1, 3, 3), b=(1,)),
])
def test_conv_shape_errors(bad):
    with pytest.raises(ValueError):
        tn.conv2d(np.zeros(bad["x"]), np.zeros(bad["w"]), np.zeros(bad["b"]))


conv_case = st.tuples(st.integers(1, 2), st.integers(1, 4), st.integers(1, 4), st.integers(3, 9), st.integers(3, 9),
                      st.integers(1, 3), st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31))


@given(conv_case)
def test_conv_exactly_matches_naive_loops(case):
    n, c, o, h, w, k, stride, pad, seed = case
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=o)
    np.testing.assert_array_equal(tn.conv2d(x, wt, b, stride, pad).data, conv2d_naive(x, wt, b, stride, pad))


def test_maxpool_examples():
    assert tn.maxpool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2).data.item() == 4.0
    np.testing.assert_array_equal(tn.maxpool2d(np.full((1, 2, 4, 6), 3.0), 2).data, 3.0)
    with pytest.raises(ValueError):
        tn.maxpool2d(np.zeros((1, 1, 1, 4)), 2)


@given(st.integers(0, 2**31), st.integers(2, 9), st.integers(2, 9), st.integers(1, 3), st.integers(1, 3))
def test_maxpool_matches_bruteforce(seed, h, w, k, stride):
    if k > h or k > w:
        return
    x = np.random.default_rng(seed).random((2, 3, h, w))
    np.testing.assert_array_equal(tn.maxpool2d(x, k, stride).data, maxpool_naive(x, k, stride))


def test_maxpool_tie_routes_to_first():
    x = tn.Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    tn.maxpool2d(x, 2).backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_fc_relu_mse_examples():
    assert tn.mse(np.array([0.0, 2.0]), np.array([1.0, 1.0])).data == 1.0
    x = np.random.default_rng(0).random(5)
    assert tn.mse(x, x).data == 0.0
    np.testing.assert_array_equal(tn.relu(np.array([-1.0, 3.0])).data, [0.0, 3.0])
    out = tn.fc(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0], [0.5, 0.0]]), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(out.data, [[12.0, -0.5]])
    with pytest.raises(ValueError):
        tn.fc(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        tn.mse(np.ones(3), np.ones(2))


def _check_grads(loss_fn, tensors):
    loss = loss_fn()
    for t in tensors:
        t.zero_grad()
    loss.backward()
    for t in tensors:
        num = numeric_grad(lambda: float(loss_fn().data), t.data)
        assert rel_err(t.grad, num) < 1e-4, t.name


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = tn.Tensor(rng.normal(size=(2, 2, 6, 5)), True, "x")
    w = tn.Tensor(rng.normal(size=(3, 2, 3, 3)), True, "w")
    b = tn.Tensor(rng.normal(size=3), True, "b")
    target = rng.normal(size=tn.conv2d(x, w, b, stride, pad).shape)
    _check_grads(lambda: tn.mse(tn.conv2d(x, w, b, stride, pad), target), [x, w, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(seed)
    x = tn.Tensor(rng.normal(size=(2, 2, 6, 6)), True, "x")  # continuous values: no ties
    target = rng.normal(size=(2, 2, 3, 3))
    _check_grads(lambda: tn.mse(tn.maxpool2d(x, 2), target), [x])


@pytest.mark.parametrize("seed", SEEDS)
def test_fc_relu_flatten_gradients(seed):
    rng = np.random.default_rng(seed)
    x = tn.Tensor(rng.normal(size=(3, 2, 2, 2)), True, "x")
    w1 = tn.Tensor(rng.normal(size=(5, 8)), True, "w1")
    b1 = tn.Tensor(rng.normal(size=5), True, "b1")
    w2 = tn.Tensor(rng.normal(size=(1, 5)), True, "w2")
    b2 = tn.Tensor(rng.normal(size=1), True, "b2")
    target = rng.normal(size=(3, 1))

    def f():
        return tn.mse(tn.fc(tn.relu(tn.fc(tn.flatten(x), w1, b1)), w2, b2), target)

    _check_grads(f, [x, w1, b1, w2, b2])


@pytest.mark.parametrize("seed", SEEDS)
def test_two_layer_net_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(2, 2, 4, 4))
    cw = tn.Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5, True, "cw")
    cb = tn.Tensor(rng.normal(size=3), True, "cb")
    fw = tn.Tensor(rng.normal(size=(1, 12)), True, "fw")
    fb = tn.Tensor(rng.normal(size=1), True, "fb")
    target = rng.normal(size=(2, 1))

    def f():
        h = tn.maxpool2d(tn.relu(tn.conv2d(x, cw, cb, 1, 1)), 2)
        return tn.mse(tn.fc(tn.flatten(h), fw, fb), target)

    _check_grads(f, [cw, cb, fw, fb])


def test_backward_without_forward_record():
    with pytest.raises(tn.GraphError):
        tn.Tensor(np.ones(1)).backward()


def test_non_scalar_backward_needs_gradient():
    y = tn.relu(tn.Tensor(np.ones(3), requires_grad=True))
    with pytest.raises(tn.GraphError):
        y.backward()


def test_gradients_accumulate_over_shared_use():
    x = tn.Tensor(np.array([[2.0]]), requires_grad=True)
    w = np.array([[3.0]])
    b = np.zeros(1)
    loss = tn.mse(tn.fc(x, w, b), np.zeros((1, 1)))
    loss.backward()
    # d/dx (3x)^2 = 18x = 36
    assert x.grad.item() == pytest.approx(36.0)


def test_adam_hand_example():
    st_ = tn.AdamState.zeros_like(np.array([1.0]), lr=1e-3)
    w = tn.adam_step(np.array([1.0]), np.array([1.0]), st_)
    assert st_.m.item() == pytest.approx(0.1) and st_.v.item() == pytest.approx(0.001)
    assert w.item() == pytest.approx(0.999, abs=1e-7)


def test_adam_zero_gradient():
    st_ = tn.AdamState.zeros_like(np.ones(4))
    w = tn.adam_step(np.ones(4), np.zeros(4), st_)
    np.testing.assert_array_equal(w, 1.0)
    assert not st_.m.any() and not st_.v.any()


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.integers(1, 30))
def test_adam_second_moment_nonnegative(grads, steps):
    g = np.array(grads)
    st_ = tn.AdamState.zeros_like(g)
    p = np.zeros_like(g)
    for _ in range(steps):
        p = tn.adam_step(p, g, st_)
    assert (st_.v >= 0).all() and st_.t == steps and np.all(np.isfinite(p))


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "m.ywts"
    tn.save_checkpoint(path, {"a": np.arange(6.0).reshape(2, 3), "bb": np.array([0.5])})
    raw = path.read_bytes()
    assert raw[:4] == b"YWTS"
    assert struct.unpack("<II", raw[4:12]) == (1, 2)
    assert struct.unpack("<I", raw[12:16]) == (1,) and raw[16:17] == b"a"
    assert struct.unpack("<III", raw[17:29]) == (2, 2, 3)
    np.testing.assert_array_equal(np.frombuffer(raw[29:53], "<f4"), np.arange(6.0))
    back = tn.load_checkpoint(path)
    assert list(back) == ["a", "bb"]
    np.testing.assert_array_equal(back["a"], np.arange(6.0).reshape(2, 3))


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"NOPE" + b"\0" * 8)
    with pytest.raises(ValueError):
        tn.load_checkpoint(p)
    p.write_bytes(b"YWTS" + struct.pack("<II", 1, 1) + struct.pack("<I", 5) + b"ab")
    with pytest.raises(ValueError):
        tn.load_checkpoint(p)


def test_float32_mode_runs():
    x = tn.Tensor(np.ones((1, 1, 4, 4), dtype=np.float32))
    w = tn.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32), requires_grad=True)
    b = tn.Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
    loss = tn.mse(tn.conv2d(x, w, b, 1, 1), np.zeros((1, 1, 4, 4), dtype=np.float32))
    loss.backward()
    assert w.grad.dtype == np.float32 and np.all(np.isfinite(w.grad))
