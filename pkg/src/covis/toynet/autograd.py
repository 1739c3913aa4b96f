"""Minimal reverse-mode autodiff over numpy arrays.

Float64 throughout, exact analytic gradients, deterministic. The op set
is what the two-view model needs: matmul, add/mul, reshape/transpose,
softmax, log-softmax, layer norm, GELU, mean pooling, concatenation, L2
normalization, log/exp, and a masked negative-log-likelihood selection.
Everything else is composed from these.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction (forward values are unchanged)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # scalar-friendly operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; 2-D, or stacked 3-D with equal leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim:
        raise ValueError(f"matmul rank mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g.reshape(x.data.shape))

    return _make(out_data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    out_data = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.transpose(g, inverse))

    return _make(out_data, (x,), backward)


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), backward)


def log_softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        if x.requires_grad:
            x.accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate(
                _unbroadcast((g * xhat).sum(axis=tuple(range(g.ndim - 1))), gamma.data.shape)
            )
        if beta.requires_grad:
            beta.accumulate(
                _unbroadcast(g.sum(axis=tuple(range(g.ndim - 1))), beta.data.shape)
            )
        if x.requires_grad:
            gg = g * gamma.data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            x.accumulate((gg - m1 - xhat * m2) * inv)

    return _make(out_data, (x, gamma, beta), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        if x.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
            x.accumulate(g * (cdf + x.data * pdf))

    return _make(out_data, (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.mean(axis=axis)
    n = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if x.requires_grad:
            if axis is None:
                x.accumulate(np.full(x.data.shape, g / n))
            else:
                x.accumulate(np.expand_dims(g, axis).repeat(n, axis=axis) / n)

    return _make(out_data, (x,), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum()

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.full(x.data.shape, g))

    return _make(out_data, (x,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


def l2_normalize(x, eps=1e-12) -> Tensor:
    """x / ||x|| over the last axis."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True)) + eps
    y = x.data / n

    def backward(g):
        if x.requires_grad:
            x.accumulate((g - y * (g * y).sum(axis=-1, keepdims=True)) / n)

    return _make(y, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g / x.data)

    return _make(out_data, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * out_data)

    return _make(out_data, (x,), backward)


def nll_select(log_probs, labels, ignore=255) -> Tensor:
    """Masked mean negative log-likelihood.

    log_probs has shape (..., k); labels the matching (...) integer
    array. Pixels labeled `ignore` are excluded from both the sum and
    the normalizer. Zero (with zero gradient) if nothing is valid.
    """
    lp = as_tensor(log_probs)
    labels = np.asarray(labels)
    mask = labels != ignore
    count = int(mask.sum())
    flat_lp = lp.data.reshape(-1, lp.data.shape[-1])
    flat_lab = labels.reshape(-1).copy()
    flat_mask = mask.reshape(-1)
    flat_lab[~flat_mask] = 0  # placeholder index for masked rows
    picked = flat_lp[np.arange(flat_lab.size), flat_lab]
    out_data = -(picked * flat_mask).sum() / count if count else 0.0

    def backward(g):
        if lp.requires_grad and count:
            gi = np.zeros_like(flat_lp)
            rows = np.nonzero(flat_mask)[0]
            gi[rows, flat_lab[rows]] = -g / count
            lp.accumulate(gi.reshape(lp.data.shape))

    return _make(np.asarray(out_data), (lp,), backward)


def squared_error(a, b) -> Tensor:
    """Sum of squared differences ||a - b||^2 (composed from primitives)."""
    d = add(a, mul(b, -1.0) if isinstance(b, Tensor) else -np.asarray(b, dtype=np.float64))
    return sum_all(mul(d, d))


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root."""
    if root.data.ndim != 0:
        raise ValueError(f"backward expects a scalar, got shape {root.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        # grad can stay None when no child contributed (e.g. a fully
        # masked selection); zero flows onward, so the node is skipped
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params.values():
        p.grad = None


def gradcheck(loss_fn, params: dict[str, Tensor], h: float = 1e-4, floor: float = 1e-6):
    """Compare analytic gradients to central finite differences.

    loss_fn must rebuild the forward pass from the current parameter
    values on every call. Returns (max_rel_err, per_param) where the
    relative error denominator is max(|analytic|, |numeric|, floor).
    """
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    worst = 0.0
    per_param = {}
    for name, p in params.items():
        flat = p.data.ravel()
        a_flat = analytic[name].ravel()
        err = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            with no_grad():
                lp = float(loss_fn().data)
            flat[idx] = orig - h
            with no_grad():
                lm = float(loss_fn().data)
            flat[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            a = a_flat[idx]
            rel = abs(fd - a) / max(abs(fd), abs(a), floor)
            err = max(err, rel)
        per_param[name] = err
        worst = max(worst, err)
    return worst, per_param
