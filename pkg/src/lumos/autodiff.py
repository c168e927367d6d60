"""Reverse-mode automatic differentiation over numpy arrays.

A small define-by-run tape engine: forward values are computed eagerly and
each operation registers a backward closure. The operator vocabulary is
exactly what the display pipeline needs (FFT optics, convolutions, a small
conv net, and an L1 training loss), nothing more.

Complex nodes follow the Wirtinger convention with a real final loss: the
adjoint of a complex node stores dL/dRe + i dL/dIm. Two consequences used
throughout: for y = U{x} with U the unitary FFT, xbar = U^-1{ybar}; for
y = |z|^2, zbar = 2 ybar z.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import numerics
from .errors import DomainError, NonScalarLoss, ShapeMismatch


class Value:
    """A node in the computation graph: an array plus an optional adjoint."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, op: str = "leaf"):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.grad = None  # lazily allocated, same shape as data
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self):
        backward(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _accum(node: Value, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _real_part(g: np.ndarray, node: Value) -> np.ndarray:
    # gradients flowing into a real node keep only the real component
    if np.iscomplexobj(g) and not np.iscomplexobj(node.data):
        return np.real(g)
    return g


def backward(loss: Value) -> None:
    """Populate adjoints of every reachable node that requires gradients.

    Repeated use of a leaf accumulates by summation. The graph is walked
    once in reverse topological order; rebuilding the graph is the only way
    to run a second backward pass.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    if np.iscomplexobj(loss.data):
        raise NonScalarLoss("loss must be real")

    topo: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def collect_grads(params: dict[str, Value]) -> dict[str, np.ndarray]:
    """Gradients for named leaves; leaves the loss never touched get zeros."""
    out = {}
    for name, v in params.items():
        out[name] = np.zeros_like(v.data) if v.grad is None else v.grad
    return out


# ---------------------------------------------------------------------------
# elementwise and structural operators
# ---------------------------------------------------------------------------

def _check_same_shape(a: Value, b: Value, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_same_shape(a, b, "add")
    out = Value(a.data + b.data, _parents=(a, b), op="add")

    def _bwd(g):
        _accum(a, _real_part(g, a))
        _accum(b, _real_part(g, b))

    out._backward = _bwd
    return out


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_same_shape(a, b, "sub")
    out = Value(a.data - b.data, _parents=(a, b), op="sub")

    def _bwd(g):
        _accum(a, _real_part(g, a))
        _accum(b, _real_part(-g, b))

    out._backward = _bwd
    return out


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_same_shape(a, b, "mul")
    out = Value(a.data * b.data, _parents=(a, b), op="mul")

    def _bwd(g):
        if a.requires_grad:
            _accum(a, _real_part(g * np.conj(b.data), a))
        if b.requires_grad:
            _accum(b, _real_part(g * np.conj(a.data), b))

    out._backward = _bwd
    return out


def scale(x, s) -> Value:
    """Multiply by a python scalar (real or complex)."""
    x = as_value(x)
    out = Value(x.data * s, _parents=(x,), op="scale")

    def _bwd(g):
        _accum(x, _real_part(g * np.conj(s), x))

    out._backward = _bwd
    return out


def const_mul(x, c: np.ndarray) -> Value:
    """Elementwise multiply by a constant map (broadcastable to x)."""
    x = as_value(x)
    c = np.asarray(c)
    out = Value(x.data * c, _parents=(x,), op="const_mul")

    def _bwd(g):
        gx = g * np.conj(c)
        if gx.shape != x.data.shape:
            # constant was broadcast; fold the extra axes back
            extra = gx.ndim - x.data.ndim
            if extra:
                gx = gx.sum(axis=tuple(range(extra)))
            gx = np.asarray(gx)
        _accum(x, _real_part(gx, x))

    out._backward = _bwd
    return out


def relu(x) -> Value:
    x = as_value(x)
    if np.iscomplexobj(x.data):
        raise DomainError("relu expects a real input")
    out = Value(np.maximum(x.data, 0.0), _parents=(x,), op="relu")
    mask = x.data > 0  # subgradient at 0 is 0

    def _bwd(g):
        _accum(x, g * mask)

    out._backward = _bwd
    return out


def sigmoid(x) -> Value:
    x = as_value(x)
    if np.iscomplexobj(x.data):
        raise DomainError("sigmoid expects a real input")
    y = expit(x.data)
    out = Value(y, _parents=(x,), op="sigmoid")

    def _bwd(g):
        _accum(x, g * y * (1.0 - y))

    out._backward = _bwd
    return out


def abs2(z) -> Value:
    """|z|^2, complex (or real) to real."""
    z = as_value(z)
    out = Value((z.data * np.conj(z.data)).real, _parents=(z,), op="abs2")

    def _bwd(g):
        _accum(z, _real_part(2.0 * g * z.data, z))

    out._backward = _bwd
    return out


def cexp(x) -> Value:
    """exp(i x) for a real phase x."""
    x = as_value(x)
    if np.iscomplexobj(x.data):
        raise DomainError("cexp expects a real phase")
    y = np.exp(1j * x.data)
    out = Value(y, _parents=(x,), op="cexp")

    def _bwd(g):
        _accum(x, np.imag(np.conj(y) * g))

    out._backward = _bwd
    return out


def ufft2(x) -> Value:
    """Unitary centered 2-D FFT; adjoint is the inverse transform."""
    x = as_value(x)
    out = Value(numerics.ufft2(x.data), _parents=(x,), op="ufft2")

    def _bwd(g):
        _accum(x, _real_part(numerics.uifft2(g), x))

    out._backward = _bwd
    return out


def uifft2(x) -> Value:
    x = as_value(x)
    out = Value(numerics.uifft2(x.data), _parents=(x,), op="uifft2")

    def _bwd(g):
        _accum(x, _real_part(numerics.ufft2(g), x))

    out._backward = _bwd
    return out


def sum_reduce(x) -> Value:
    x = as_value(x)
    out = Value(x.data.sum(), _parents=(x,), op="sum")

    def _bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    out._backward = _bwd
    return out


def mean_reduce(x) -> Value:
    x = as_value(x)
    n = x.data.size
    out = Value(x.data.mean(), _parents=(x,), op="mean")

    def _bwd(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).copy())

    out._backward = _bwd
    return out


def l1_diff(a, b) -> Value:
    """Elementwise |a - b|; subgradient 0 where a == b."""
    a, b = as_value(a), as_value(b)
    _check_same_shape(a, b, "l1_diff")
    if np.iscomplexobj(a.data) or np.iscomplexobj(b.data):
        raise DomainError("l1_diff expects real inputs")
    d = a.data - b.data
    out = Value(np.abs(d), _parents=(a, b), op="l1_diff")
    sgn = np.sign(d)

    def _bwd(g):
        if a.requires_grad:
            _accum(a, g * sgn)
        if b.requires_grad:
            _accum(b, -g * sgn)

    out._backward = _bwd
    return out


def concat_channels(values: Sequence) -> Value:
    """Concatenate (H, W, C_i) tensors along the channel axis."""
    vals = [as_value(v) for v in values]
    sizes = [v.data.shape[-1] for v in vals]
    out = Value(np.concatenate([v.data for v in vals], axis=-1), _parents=tuple(vals), op="concat")

    def _bwd(g):
        lo = 0
        for v, c in zip(vals, sizes):
            _accum(v, np.ascontiguousarray(g[..., lo:lo + c]))
            lo += c

    out._backward = _bwd
    return out


def take_channels(x, lo: int, hi: int) -> Value:
    x = as_value(x)
    out = Value(np.ascontiguousarray(x.data[..., lo:hi]), _parents=(x,), op="take_channels")

    def _bwd(g):
        gx = np.zeros_like(x.data)
        gx[..., lo:hi] = g
        _accum(x, gx)

    out._backward = _bwd
    return out


def split_channels(x, k: int) -> list[Value]:
    """Split (H, W, k*c) into k tensors of (H, W, c)."""
    x = as_value(x)
    c = x.data.shape[-1] // k
    if c * k != x.data.shape[-1]:
        raise ShapeMismatch(f"cannot split {x.data.shape[-1]} channels into {k} groups")
    return [take_channels(x, i * c, (i + 1) * c) for i in range(k)]


def take_slice(x, i: int) -> Value:
    """Index along the leading axis; adjoint scatters back with zeros."""
    x = as_value(x)
    out = Value(np.ascontiguousarray(x.data[i]), _parents=(x,), op="take_slice")

    def _bwd(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        _accum(x, gx)

    out._backward = _bwd
    return out


def crop2d(x, y0: int, y1: int, x0: int, x1: int) -> Value:
    """Crop the leading two axes; adjoint scatters back with zeros."""
    x = as_value(x)
    out = Value(np.ascontiguousarray(x.data[y0:y1, x0:x1]), _parents=(x,), op="crop2d")

    def _bwd(g):
        gx = np.zeros_like(x.data)
        gx[y0:y1, x0:x1] = g
        _accum(x, gx)

    out._backward = _bwd
    return out


def flip2d(x, flip_y: bool, flip_x: bool) -> Value:
    """Mirror the leading two axes; its own adjoint."""
    x = as_value(x)
    axes = tuple(ax for ax, f in ((0, flip_y), (1, flip_x)) if f)
    data = np.flip(x.data, axis=axes).copy() if axes else x.data.copy()
    out = Value(data, _parents=(x,), op="flip2d")

    def _bwd(g):
        _accum(x, np.flip(g, axis=axes).copy() if axes else g)

    out._backward = _bwd
    return out


def replicate_embed(x, factor: int, out_size: int) -> Value:
    """Nearest-neighbor replicate an (l, l) map into a centered region of a
    (D, D) grid; zeros outside. Adjoint sums each replicated block."""
    x = as_value(x)
    l = x.data.shape[0]
    a = l * factor
    if a > out_size:
        raise ShapeMismatch(f"embedded region {a} exceeds grid {out_size}")
    o = out_size // 2 - a // 2
    data = np.zeros((out_size, out_size), dtype=np.float64)
    data[o:o + a, o:o + a] = np.kron(x.data, np.ones((factor, factor)))
    out = Value(data, _parents=(x,), op="replicate_embed")

    def _bwd(g):
        region = g[o:o + a, o:o + a]
        _accum(x, region.reshape(l, factor, l, factor).sum(axis=(1, 3)))

    out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def conv2_same(img, ker) -> Value:
    """Zero-padded same-size convolution of an (H, W) or (H, W, C) image
    with a single 2-D kernel shared across channels."""
    img, ker = as_value(img), as_value(ker)
    if np.iscomplexobj(img.data) or np.iscomplexobj(ker.data):
        raise DomainError("conv2_same expects real operands")
    x = img.data
    chw = x.ndim == 3
    xi = x.transpose(2, 0, 1) if chw else x
    y = numerics.conv2_same(xi, ker.data)
    out = Value(y.transpose(1, 2, 0) if chw else y, _parents=(img, ker), op="conv2_same")

    def _bwd(g):
        gi = g.transpose(2, 0, 1) if chw else g
        grad_img, grad_ker = numerics.conv2_same_grads(
            gi, xi, ker.data, need_img=img.requires_grad, need_ker=ker.requires_grad
        )
        if grad_img is not None:
            _accum(img, grad_img.transpose(1, 2, 0) if chw else grad_img)
        if grad_ker is not None:
            _accum(ker, grad_ker)

    out._backward = _bwd
    return out


def conv_layer(x, w, b) -> Value:
    """Network-style convolution: (H, W, Cin) x (kh, kw, Cin, Cout) + bias."""
    x, w, b = as_value(x), as_value(w), as_value(b)
    y, xp = numerics.conv_layer_forward(x.data, w.data, b.data)
    out = Value(y, _parents=(x, w, b), op="conv_layer")

    def _bwd(g):
        grad_x, grad_w, grad_b = numerics.conv_layer_grads(g, xp, w.data, need_x=x.requires_grad)
        if grad_x is not None:
            _accum(x, grad_x)
        _accum(w, grad_w)
        _accum(b, grad_b)

    out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """Adam moments for a named set of parameters."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction; parameters updated in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        mhat = state.m[k] / (1 - b1 ** state.t)
        vhat = state.v[k] / (1 - b2 ** state.t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[dict[str, Value]], Value],
               point: dict[str, np.ndarray],
               step: float = 1e-5,
               max_coords: int = 4096,
               seed: int = 0) -> float:
    """Compare backward() gradients against central finite differences.

    ``fn`` builds a fresh graph from Value-wrapped parameters and returns a
    scalar loss. Every coordinate is probed unless the total exceeds
    ``max_coords``, in which case a seeded random subset per parameter is
    used. Returns the max relative error with denominator
    max(|analytic|, |numeric|, 1e-6). The caller is responsible for
    choosing a point where fn is smooth (relu kinks break the estimate).
    """
    values = {k: Value(v.copy(), requires_grad=True) for k, v in point.items()}
    loss = fn(values)
    backward(loss)
    analytic = collect_grads(values)

    total = sum(v.size for v in point.values())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, base in point.items():
        flat = base.reshape(-1)
        n = flat.size
        if total > max_coords:
            count = max(1, int(round(max_coords * n / total)))
            coords = rng.choice(n, size=min(count, n), replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn({k: Value(v) for k, v in point.items()}).data)
            flat[i] = orig - step
            fm = float(fn({k: Value(v) for k, v in point.items()}).data)
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            ana = analytic[name].reshape(-1)[i]
            denom = max(abs(ana), abs(num), 1e-6)
            worst = max(worst, abs(ana - num) / denom)
    return worst
