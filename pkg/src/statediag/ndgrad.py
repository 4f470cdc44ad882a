"""Dense 2-D tensors with reverse-mode automatic differentiation and Adam.

Everything the model trains on is a plain 2-D matrix (windows, state
matrices, attention maps, hidden states), so this module deliberately
supports nothing else: a ``Tensor2`` wraps a row-major NumPy array, each
differentiable operation records its inputs and a backward rule while
gradients are enabled, and ``backward`` walks the recorded graph once in
reverse topological order, accumulating gradients additively into every
``requires_grad`` leaf.

Conventions:

* The tape is implicit: an operation whose inputs do not participate in
  differentiation produces a constant tensor with no recorded parents,
  so inference inside ``no_grad()`` builds no graph at all.
* ``backward`` may be called repeatedly; leaf gradients accumulate until
  cleared (``zero_grad`` or ``Adam.step``).
* Limited broadcasting only: a ``(1, c)`` row vector or ``(r, 1)`` column
  vector against an ``(r, c)`` operand in the elementwise ops.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor2",
    "tensor",
    "no_grad",
    "grad_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "transpose",
    "row_sum",
    "sum_all",
    "frobenius_sq",
    "softmax_rows",
    "layer_norm",
    "relu",
    "gelu",
    "log",
    "concat_cols",
    "split_cols",
    "backward",
    "Adam",
]

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor2:
    """A 2-D real tensor; optionally a differentiable leaf.

    ``value`` is always a C-contiguous 2-D ndarray (float32 or float64).
    ``grad`` is lazily allocated by ``backward`` for leaves that require
    gradients and has the same shape and dtype as ``value``.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(value)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor2 holds 2-D data only, got ndim={arr.ndim}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.value = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def dtype(self):
        return self.value.dtype

    def _needs(self) -> bool:
        return self.requires_grad or self._backward is not None

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor2(shape={self.shape}, dtype={self.value.dtype}{tag})"

    # -- operator sugar ------------------------------------------------------

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def tensor(value, requires_grad: bool = False, dtype=None, name: str = "") -> Tensor2:
    """Build a Tensor2, optionally coercing dtype."""
    t = Tensor2(value, requires_grad=requires_grad, name=name)
    if dtype is not None and t.value.dtype != dtype:
        t.value = t.value.astype(dtype)
    return t


def _from_op(value: np.ndarray, parents: tuple, backward_fn) -> Tensor2:
    """Wrap an op result; record the tape entry only when a parent needs it."""
    out = Tensor2(value)
    if _GRAD_ENABLED and any(p._needs() for p in parents):
        out._parents = parents
        out._backward = backward_fn
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum a gradient down to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor2, b: Tensor2, opname: str) -> tuple[int, int]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    try:
        res = np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}") from None
    # only row/column-vector broadcasting is supported
    if res != sa and res != sb:
        raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}")
    return res


# -- arithmetic --------------------------------------------------------------


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    """Matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def bw(g, acc):
        if a._needs():
            acc(a, g @ b.value.T)
        if b._needs():
            acc(b, a.value.T @ g)

    return _from_op(out, (a, b), bw)


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    _check_broadcast(a, b, "add")
    out = a.value + b.value

    def bw(g, acc):
        if a._needs():
            acc(a, _reduce_to(g, a.shape))
        if b._needs():
            acc(b, _reduce_to(g, b.shape))

    return _from_op(out, (a, b), bw)


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    _check_broadcast(a, b, "sub")
    out = a.value - b.value

    def bw(g, acc):
        if a._needs():
            acc(a, _reduce_to(g, a.shape))
        if b._needs():
            acc(b, _reduce_to(-g, b.shape))

    return _from_op(out, (a, b), bw)


def mul(a: Tensor2, b: Tensor2) -> Tensor2:
    """Elementwise (Hadamard) product with row/column-vector broadcasting."""
    _check_broadcast(a, b, "mul")
    out = a.value * b.value

    def bw(g, acc):
        if a._needs():
            acc(a, _reduce_to(g * b.value, a.shape))
        if b._needs():
            acc(b, _reduce_to(g * a.value, b.shape))

    return _from_op(out, (a, b), bw)


def div(a: Tensor2, b: Tensor2) -> Tensor2:
    """Elementwise quotient with row/column-vector broadcasting."""
    _check_broadcast(a, b, "div")
    out = a.value / b.value

    def bw(g, acc):
        if a._needs():
            acc(a, _reduce_to(g / b.value, a.shape))
        if b._needs():
            acc(b, _reduce_to(-g * a.value / (b.value * b.value), b.shape))

    return _from_op(out, (a, b), bw)


def scale(a: Tensor2, c: float) -> Tensor2:
    """Multiply by a python scalar constant."""
    c = float(c)
    out = a.value * c

    def bw(g, acc):
        if a._needs():
            acc(a, g * c)

    return _from_op(out, (a,), bw)


def add_scalar(a: Tensor2, c: float) -> Tensor2:
    """Add a python scalar constant."""
    out = a.value + float(c)

    def bw(g, acc):
        if a._needs():
            acc(a, g)

    return _from_op(out, (a,), bw)


def transpose(a: Tensor2) -> Tensor2:
    out = a.value.T.copy()

    def bw(g, acc):
        if a._needs():
            acc(a, g.T)

    return _from_op(out, (a,), bw)


def row_sum(a: Tensor2) -> Tensor2:
    """Sum each row; (m, n) -> (m, 1)."""
    out = a.value.sum(axis=1, keepdims=True)

    def bw(g, acc):
        if a._needs():
            acc(a, np.broadcast_to(g, a.shape))

    return _from_op(out, (a,), bw)


def sum_all(a: Tensor2) -> Tensor2:
    """Sum of all entries; (m, n) -> (1, 1)."""
    out = np.array([[a.value.sum()]], dtype=a.value.dtype)

    def bw(g, acc):
        if a._needs():
            acc(a, np.full(a.shape, g[0, 0], dtype=a.value.dtype))

    return _from_op(out, (a,), bw)


def frobenius_sq(a: Tensor2) -> Tensor2:
    """Squared Frobenius norm; (m, n) -> (1, 1)."""
    out = np.array([[float((a.value * a.value).sum())]], dtype=a.value.dtype)

    def bw(g, acc):
        if a._needs():
            acc(a, (2.0 * g[0, 0]) * a.value)

    return _from_op(out, (a,), bw)


def softmax_rows(a: Tensor2) -> Tensor2:
    """Row-wise softmax with per-row max subtraction for stability."""
    if not np.isfinite(a.value).all():
        raise NumericError("softmax_rows: non-finite input")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g, acc):
        if a._needs():
            acc(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _from_op(y, (a,), bw)


def layer_norm(a: Tensor2, gain: Tensor2, bias: Tensor2, eps: float) -> Tensor2:
    """Standardize each row to mean 0 / variance 1, then scale and shift.

    ``gain`` and ``bias`` must be (1, cols) row vectors; the variance
    denominator is sqrt(var + eps) with biased (1/n) variance.
    """
    if gain.shape != (1, a.cols) or bias.shape != (1, a.cols):
        raise ShapeError(
            f"layer_norm: gain/bias must be (1, {a.cols}), got {gain.shape} and {bias.shape}"
        )
    mu = a.value.mean(axis=1, keepdims=True)
    xc = a.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def bw(g, acc):
        if gain._needs():
            acc(gain, (g * xhat).sum(axis=0, keepdims=True))
        if bias._needs():
            acc(bias, g.sum(axis=0, keepdims=True))
        if a._needs():
            gx = g * gain.value
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            acc(a, inv * (gx - m1 - xhat * m2))

    return _from_op(out, (a, gain, bias), bw)


def relu(a: Tensor2) -> Tensor2:
    out = np.maximum(a.value, 0.0)

    def bw(g, acc):
        if a._needs():
            acc(a, g * (a.value > 0))

    return _from_op(out, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor2) -> Tensor2:
    """Gaussian error linear unit (tanh approximation); smooth everywhere."""
    x = a.value
    u = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def bw(g, acc):
        if a._needs():
            du = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            acc(a, g * d)

    return _from_op(out, (a,), bw)


def log(a: Tensor2) -> Tensor2:
    """Natural logarithm; every entry must be strictly positive."""
    if not (a.value > 0).all():
        raise NumericError("log: input has nonpositive entries")
    out = np.log(a.value)

    def bw(g, acc):
        if a._needs():
            acc(a, g / a.value)

    return _from_op(out, (a,), bw)


def concat_cols(parts: list[Tensor2]) -> Tensor2:
    """Concatenate tensors along columns; all must share the row count."""
    if not parts:
        raise ShapeError("concat_cols: empty list")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(
                f"concat_cols: row counts differ ({[q.shape for q in parts]})"
            )
    out = np.concatenate([p.value for p in parts], axis=1)
    widths = [p.cols for p in parts]

    def bw(g, acc):
        lo = 0
        for p, width in zip(parts, widths):
            if p._needs():
                acc(p, g[:, lo : lo + width])
            lo += width

    return _from_op(out, tuple(parts), bw)


def split_cols(a: Tensor2, h: int) -> list[Tensor2]:
    """Split into h equal column blocks; inverse of concat_cols."""
    if h < 1 or a.cols % h != 0:
        raise ShapeError(f"split_cols: cols={a.cols} not divisible by h={h}")
    width = a.cols // h
    outs = []
    for i in range(h):
        lo = i * width
        block = a.value[:, lo : lo + width].copy()

        def bw(g, acc, lo=lo):
            if a._needs():
                full = np.zeros(a.shape, dtype=a.value.dtype)
                full[:, lo : lo + width] = g
                acc(a, full)

        outs.append(_from_op(block, (a,), bw))
    return outs


# -- backward pass -----------------------------------------------------------


def backward(loss: Tensor2) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf below ``loss``.

    ``loss`` must be 1x1. Repeated calls without clearing gradients
    accumulate additively (leaf.grad += contribution).
    """
    if not isinstance(loss, Tensor2):
        raise ContractError("backward: loss must be a Tensor2")
    if loss.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.shape}")
    if not loss._needs():
        return  # nothing below requires gradients

    # iterative post-order topological sort over participating nodes
    topo: list[Tensor2] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor2, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._needs() and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1), dtype=loss.value.dtype)}

    def acc(target: Tensor2, contrib: np.ndarray) -> None:
        key = id(target)
        cur = grads.get(key)
        grads[key] = contrib if cur is None else cur + contrib

    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue  # dead branch: no path from the loss reached it
        if node._backward is not None:
            node._backward(g, acc)
        elif node.requires_grad:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.value.dtype, copy=True)
            else:
                node.grad += g


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Adam with bias correction over a fixed list of leaf parameters.

    Moments live alongside each parameter; ``t`` increases by exactly one
    per ``step``. ``step`` consumes and clears ``grad`` on every parameter
    and raises if any gradient is missing.
    """

    def __init__(self, params: list[Tensor2], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError(
                    f"Adam.step: parameter {p.name or p.shape} has no gradient"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.value.dtype, copy=False
            )
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for checkpointing."""
        out = {}
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            out[f"adam.m/{key}"] = self.m[i]
            out[f"adam.v/{key}"] = self.v[i]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            m = tensors.get(f"adam.m/{key}")
            v = tensors.get(f"adam.v/{key}")
            if m is None or v is None:
                raise ContractError(f"Adam.load_state_tensors: missing moments for {key}")
            if m.shape != p.value.shape or v.shape != p.value.shape:
                raise ShapeError(f"Adam.load_state_tensors: moment shape mismatch for {key}")
            self.m[i] = m.astype(p.value.dtype, copy=True)
            self.v[i] = v.astype(p.value.dtype, copy=True)
        self.t = int(t)
