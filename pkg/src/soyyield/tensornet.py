"""Small dense-tensor core with reverse-mode gradients and Adam.

Only the operations the yield regressor needs are provided: conv2d,
max-pooling, fully connected layers, ReLU, flatten and MSE. Arrays are laid
out (batch, channel, height, width). float64 runs on the compiled kernels
when available; other dtypes use the numpy fallback.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import _fallback, kernels


class GraphError(RuntimeError):
    """Backward called on a tensor without a recorded forward pass."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if self._backward is None and not self.requires_grad:
            raise GraphError("tensor has no recorded forward pass to differentiate")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _impl(*arrays):
    if all(a.dtype == np.float64 for a in arrays):
        return kernels
    return _fallback


def conv2d(x, weight, bias, stride=1, padding=0):
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    N, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ValueError(f"conv2d channel mismatch: input has {C}, weight expects {Cw}")
    if bias.shape != (O,):
        raise ValueError(f"conv2d bias must have shape ({O},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0 or H + 2 * padding < kh or W + 2 * padding < kw:
        raise ValueError(f"conv2d output would be empty for input {x.shape}, kernel {weight.shape}")
    impl = _impl(x.data, weight.data, bias.data)
    out = impl.conv2d_forward(x.data, weight.data, bias.data, stride, padding).astype(x.data.dtype, copy=False)

    def backward(g):
        gx, gw, gb = impl.conv2d_backward(x.data, weight.data, g, stride, padding)
        _accumulate(x, gx.astype(x.data.dtype, copy=False))
        _accumulate(weight, gw.astype(weight.data.dtype, copy=False))
        _accumulate(bias, gb.astype(bias.data.dtype, copy=False))

    return _result(out, (x, weight, bias), backward)


def maxpool2d(x, k=2, stride=None):
    x = _as_tensor(x)
    stride = k if stride is None else stride
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2d expects a 4-d input, got {x.shape}")
    if x.shape[2] < k or x.shape[3] < k:
        raise ValueError(f"maxpool2d window {k} larger than spatial dims {x.shape[2:]}")
    impl = _impl(x.data)
    out, idx = impl.maxpool2d_forward(x.data, k, stride)
    out = out.astype(x.data.dtype, copy=False)

    def backward(g):
        _accumulate(x, impl.maxpool2d_backward(g, idx, x.shape).astype(x.data.dtype, copy=False))

    return _result(out, (x,), backward)


def linear(x, weight, bias):
    """Fully connected layer; ``weight`` is (out, in)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        _accumulate(x, g @ weight.data)
        _accumulate(weight, g.T @ x.data)
        _accumulate(bias, g.sum(axis=0))

    return _result(out, (x, weight, bias), backward)


fc = linear


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0).astype(x.data.dtype, copy=False)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(out, (x,), backward)


def flatten(x):
    x = _as_tensor(x)
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def backward(g):
        _accumulate(x, g.reshape(shape))

    return _result(out, (x,), backward)


def mse(pred, target):
    """Mean of squared differences over all elements; target is constant."""
    pred = _as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    out = np.asarray(np.mean(diff * diff))

    def backward(g):
        _accumulate(pred, g * (2.0 / diff.size) * diff)

    return _result(out, (pred,), backward)


def he_uniform(rng, shape, fan_in, dtype=np.float64):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param, grad, state):
    """One bias-corrected Adam update. Returns the new parameter array."""
    if grad.shape != param.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.states = {
            name: AdamState.zeros_like(p.data, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for name, p in self.params.items()
        }

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            p.data = adam_step(p.data, p.grad, self.states[name]).astype(p.data.dtype, copy=False)


# Checkpoint layout, little-endian:
#   b"YWTS" | u32 version | u32 count
#   count x ( u32 name_len | name utf-8 | u32 ndim | u32 dims[ndim] | f32 payload )
CKPT_MAGIC = b"YWTS"
CKPT_VERSION = 1


def save_checkpoint(path, tensors):
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(tensors)))
        for name in tensors:
            arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an ordered ``{name: float64 array}`` dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a YWTS checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return out
