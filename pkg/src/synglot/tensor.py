"""Dense tensors with reverse-mode autodiff, on numpy buffers.

Every model equation runs through the primitives here. Rules of the road:

- differentiable arguments are Tensor; integer indices, attention masks, and
  other constants are plain numpy arrays;
- broadcasting is limited to leading batch dimensions (and trailing
  bias-vector adds); gradients are summed back down to the input shape;
- gradients ACCUMULATE: backward() adds into .grad, and it is the optimizer
  step (or zero_grad) that clears them — calling backward twice without
  zeroing doubles every gradient;
- training runs in float32; gradient verification builds float64 parameters
  and every op follows its inputs' dtype, so finite-difference checks are
  trustworthy.

Generation wraps decoding in no_grad() to skip graph construction.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np


class ShapeMismatch(Exception):
    pass


class AllMaskedRow(Exception):
    """A softmax row had every position masked out."""


class NonScalarLoss(Exception):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_inputs", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._inputs: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    return Tensor(arr.astype(dtype) if dtype is not None else arr)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = tuple(t for t in inputs if t.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a_shape, b_shape, op: str) -> None:
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a_shape} and {b_shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a.accumulate(c * g)

    return _make(a.data * np.asarray(c, dtype=a.dtype), (a,), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scalar_mul(b, -1.0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul batch dims")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backward(g):
        a.accumulate(g * keep)

    return _make(np.where(keep, a.data, 0), (a,), backward)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward(g):
        a.accumulate(g * sign)

    return _make(np.abs(a.data), (a,), backward)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a.accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def swap_axes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    def backward(g):
        a.accumulate(np.swapaxes(g, ax1, ax2))

    return _make(np.swapaxes(a.data, ax1, ax2), (a,), backward)


def transpose_last2(a: Tensor) -> Tensor:
    return swap_axes(a, -1, -2)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(gg, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor) -> Tensor:
    return scalar_mul(tsum(a), 1.0 / a.data.size)


def mean_pool(a: Tensor, axis: int) -> Tensor:
    return scalar_mul(tsum(a, axis=axis), 1.0 / a.shape[axis])


# ---------------------------------------------------------------------------
# lookups


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= table.shape[0]:
        raise IndexError(f"ids outside [0, {table.shape[0]})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[-1]))
        table.accumulate(gt)

    return _make(table.data[ids], (table,), backward)


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise ShapeMismatch(f"gather_last: idx shape {idx.shape} vs {a.shape[:-1]}")
    flat_rows = int(np.prod(idx.shape)) if idx.size else 0
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        ga = np.zeros_like(a.data).reshape(flat_rows, a.shape[-1])
        ga[np.arange(flat_rows), idx.ravel()] = g.ravel()
        a.accumulate(ga.reshape(a.shape))

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalization and softmax


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate((dxhat - m1 - xhat * m2) * inv_std)

    return _make(out, (x, gain, bias), backward)


_SENTINEL_THRESHOLD = -1e8  # anything this low counts as "masked out"


def softmax_masked(logits: Tensor, mask: np.ndarray | None) -> Tensor:
    z = logits.data if mask is None else logits.data + mask
    if mask is not None:
        open_rows = np.broadcast_to(mask, z.shape).max(axis=-1)
        if np.any(open_rows <= _SENTINEL_THRESHOLD):
            raise AllMaskedRow("softmax row with every position masked")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        logits.accumulate(s * (g - inner))

    return _make(s, (logits,), backward)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def backward(g):
        logits.accumulate(g - np.exp(out) * g.sum(axis=-1, keepdims=True))

    return _make(out, (logits,), backward)


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    lam = float(lam)

    def backward(g):
        x.accumulate(-lam * g)

    return _make(x.data, (x,), backward)


# ---------------------------------------------------------------------------
# backward sweep


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in node._inputs:
            if id(child) not in seen and child._backward is not None:
                stack.append((child, False))

    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction; step() zeroes gradients."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in sorted(params.items())}
        self.v = {k: np.zeros_like(p.data) for k, p in sorted(params.items())}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.step_count
        correction2 = 1.0 - b2 ** self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / correction1
            vhat = v / correction2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam/step": np.array([self.step_count], dtype=np.int64)}
        for name in sorted(self.params):
            out[f"adam/m/{name}"] = self.m[name]
            out[f"adam/v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["adam/step"][0])
        for name in sorted(self.params):
            self.m[name] = arrays[f"adam/m/{name}"].copy()
            self.v[name] = arrays[f"adam/v/{name}"].copy()


# ---------------------------------------------------------------------------
# finite-difference verification


def gradcheck(f, params: dict[str, Tensor], h: float = 1e-3) -> float:
    """Max relative error between backward() grads and central differences.

    f() must rebuild the graph from the current parameter values and return
    the scalar loss Tensor. Parameters should be float64.
    """
    for p in params.values():
        p.grad = None
    loss = f()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = float(f().data)
            flat[i] = saved - h
            down = float(f().data)
            flat[i] = saved
            fd = (up - down) / (2 * h)
            an = analytic[name].ravel()[i]
            err = abs(fd - an) / max(1.0, abs(fd), abs(an))
            worst = max(worst, err)
    return worst
