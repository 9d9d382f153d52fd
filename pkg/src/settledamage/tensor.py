"""Small reverse-mode autodiff engine on top of numpy.

Only the operations the two networks use are provided. Every op records a
closure that maps the output gradient to input gradients; ``Tensor.backward``
walks the recorded graph in reverse topological order.

Storage defaults to float32. Pass float64 arrays to get a 64-bit graph (used
by the gradient checks).
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        arr = data
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        return arr
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    """Dense array with an optional gradient.

    ``grad`` is populated by :meth:`backward` for every tensor created with
    ``requires_grad=True`` that is reachable from the loss. Repeated backward
    calls accumulate into ``grad``; call :meth:`zero_grad` in between.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # elementwise helpers ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_lift(other, self.dtype))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), -self)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return mul(tsum(self), 1.0 / self.data.size)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def relu(self) -> "Tensor":
        return relu(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a = _lift(a, getattr(b, "dtype", np.float32))
    b = _lift(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _lift(a, getattr(b, "dtype", np.float32))
    if not isinstance(b, Tensor):
        scale = b
        out = a.data * np.asarray(scale, dtype=a.dtype)

        def backward_scalar(g):
            return (g * np.asarray(scale, dtype=g.dtype),)

        return _make(out, (a,), backward_scalar)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _make(out, (x,), backward)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis, in argument order."""
    if len(inputs) == 0:
        raise DimensionError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for t in inputs:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise DimensionError(f"cannot concatenate {t.shape} with {ref}")
    out = np.concatenate([t.data for t in inputs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs)))

    return _make(out, tuple(inputs), backward)


# ---------------------------------------------------------------------------
# network ops


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad_hw(x: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N,C,H,W), w: (K,C,kh,kw), b: (K,)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernels, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    k, kc, kh, kw = w.shape
    if kc != c:
        raise DimensionError(f"input has {c} channels but kernels expect {kc}")
    if stride < 1 or padding < 0:
        raise DimensionError("stride must be positive and padding non-negative")
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h}x{wd}+{padding}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)

    xp = _pad_hw(x.data, padding)
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo]
        out = np.einsum("nchw,kc->nkhw", cols, w.data[:, :, 0, 0], optimize=True)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, k, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g):
        gw = gb = gx = None
        if w.requires_grad:
            if kh == 1 and kw == 1:
                gw = np.einsum("nkhw,nchw->kc", g, cols, optimize=True)[:, :, None, None]
            else:
                gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            # gcol: (N,Ho,Wo,C,kh,kw)
            gcol = np.tensordot(g, w.data, axes=([1], [0]))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        gcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def max_pool2d(x: Tensor, size: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling with -inf padding. Gradient flows to the first argmax only."""
    n, c, h, wd = x.shape
    if size > h + 2 * padding or size > wd + 2 * padding:
        raise DimensionError(f"pool window {size} larger than input {h}x{wd} (padding {padding})")
    ho = conv_output_size(h, size, stride, padding)
    wo = conv_output_size(wd, size, stride, padding)
    xp = _pad_hw(x.data, padding, value=-np.inf)
    win = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, size * size)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        hp, wp = xp.shape[2:]
        rows = np.arange(ho).reshape(1, 1, ho, 1) * stride + idx // size
        cols = np.arange(wo).reshape(1, 1, 1, wo) * stride + idx % size
        plane = (np.arange(n * c).reshape(n, c, 1, 1)) * hp * wp
        lin = (plane + rows * wp + cols).ravel()
        gxp = np.bincount(lin, weights=g.ravel(), minlength=n * c * hp * wp)
        gxp = gxp.reshape(n, c, hp, wp).astype(g.dtype)
        if padding:
            gxp = gxp[:, :, padding:padding + h, padding:padding + wd]
        return (gxp,)

    return _make(np.ascontiguousarray(out), (x,), backward)


def _bins(size: int, out: int) -> list[tuple[int, int]]:
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def adaptive_avg_pool(x: Tensor, out: int) -> Tensor:
    """Average over ``out x out`` bins; bin i spans [floor(iH/out), ceil((i+1)H/out))."""
    n, c, h, wd = x.shape
    if out < 1 or out > h or out > wd:
        raise DimensionError(f"cannot pool {h}x{wd} into {out}x{out} bins")
    hb, wb = _bins(h, out), _bins(wd, out)
    res = np.empty((n, c, out, out), dtype=x.dtype)
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            res[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for i, (h0, h1) in enumerate(hb):
            for j, (w0, w1) in enumerate(wb):
                area = (h1 - h0) * (w1 - w0)
                gx[:, :, h0:h1, w0:w1] += (g[:, :, i, j] / area)[:, :, None, None]
        return (gx,)

    return _make(res, (x,), backward)


def _interp_index(src: int, dst: int):
    if src == 1 or dst == 1:
        lo = np.zeros(dst, dtype=np.intp)
        return lo, lo, np.zeros(dst)
    pos = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.minimum(np.floor(pos).astype(np.intp), src - 1)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def _interp_matrix(src: int, dst: int, dtype) -> np.ndarray:
    lo, hi, frac = _interp_index(src, dst)
    m = np.zeros((dst, src), dtype=np.float64)
    np.add.at(m, (np.arange(dst), lo), 1.0 - frac)
    np.add.at(m, (np.arange(dst), hi), frac)
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Corner-aligned bilinear resize to a size no smaller than the input."""
    n, c, h, wd = x.shape
    if target_h < h or target_w < wd:
        raise DimensionError(f"upsample target {target_h}x{target_w} smaller than source {h}x{wd}")
    hlo, hhi, hf = _interp_index(h, target_h)
    wlo, whi, wf = _interp_index(wd, target_w)
    hf = hf.astype(x.dtype).reshape(1, 1, -1, 1)
    wf = wf.astype(x.dtype).reshape(1, 1, 1, -1)
    # lo + frac*(hi - lo) keeps constant maps exactly constant
    a = x.data[:, :, hlo, :]
    rows = a + hf * (x.data[:, :, hhi, :] - a)
    b = rows[:, :, :, wlo]
    out = b + wf * (rows[:, :, :, whi] - b)

    def backward(g):
        mh = _interp_matrix(h, target_h, g.dtype)
        mw = _interp_matrix(wd, target_w, g.dtype)
        return (mh.T @ g @ mw,)

    return _make(np.ascontiguousarray(out), (x,), backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map x @ w + b with x: (N,D), w: (D,M), b: (M,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"dense: cannot multiply {x.shape} by {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"dense: bias shape {b.shape} does not match {w.shape[1]} outputs")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Accepts (N,K) logits with (N,) labels, or (N,K,H,W) per-pixel scores with
    (N,H,W) labels; the mean is then over every pixel.
    """
    labels = np.asarray(labels)
    x = logits.data
    if x.ndim == 4:
        n, k, h, w = x.shape
        flat = x.transpose(0, 2, 3, 1).reshape(-1, k)
        if labels.shape != (n, h, w):
            raise DimensionError(f"labels {labels.shape} do not match scores {x.shape}")
    elif x.ndim == 2:
        k = x.shape[1]
        flat = x
        if labels.shape != (x.shape[0],):
            raise DimensionError(f"labels {labels.shape} do not match logits {x.shape}")
    else:
        raise DimensionError(f"softmax_cross_entropy expects 2-D or 4-D logits, got {x.shape}")
    lab = labels.reshape(-1).astype(np.intp)
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise IndexError(f"label out of range [0, {k})")
    m = flat.shape[0]
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(m), lab]
    loss = np.asarray((lse - picked).mean(), dtype=x.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(m), lab] -= 1.0
        p *= g / m
        if x.ndim == 4:
            p = p.reshape(n, h, w, k).transpose(0, 3, 1, 2)
        return (p.astype(x.dtype, copy=False),)

    return _make(loss, (logits,), backward)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or eps <= 0:
            raise UsageError("invalid Adam hyperparameters")
        return cls(np.zeros_like(param), np.zeros_like(param), 0, lr, beta1, beta2, eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """Apply one bias-corrected Adam update in place; returns ``param``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam_step: shapes {param.shape}, {grad.shape}, {state.m.shape} disagree")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * (grad * grad)
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
    return param


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.states = [AdamState.for_param(p.data, lr, beta1, beta2, eps) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            if p.grad is not None:
                adam_step(p.data, p.grad, s)


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|,|b|,tiny), a scale-aware comparison for gradient checks."""
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = max(float(np.max(np.abs(a))) if a.size else 0.0, float(np.max(np.abs(b))) if b.size else 0.0, 1e-12)
    return num / den if not math.isnan(num) else math.inf
