"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every differentiable operation appends one node to a flat tape.  ``backward``
walks the tape in reverse append order, which is a valid reverse topological
order because a node can only consume tensors created before it.

Tensors built only from constants are not recorded.  When an operation mixes
tensors living on two different tapes, the tapes are merged (independent
sub-graphs can be concatenated without breaking the ordering).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "GraphError",
    "no_grad",
    "capture_branches",
    "replay_branches",
    "backward",
    "grad",
    "record",
    "sgd_step",
    "zero_grad",
    "conv2d",
    "maxpool2d",
    "fully_connected",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scalar_mul",
    "add_scalar",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "square",
    "concat",
    "channel_mean",
    "channel_max",
    "global_avg_pool",
    "upsample_copy",
    "reshape",
    "tensor_sum",
    "tensor_mean",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on misuse of the differentiation graph."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, detached passes)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


# Branch choices of the piecewise ops (leaky-ReLU signs, max winners) can be
# captured on one pass and replayed on another.  Replaying evaluates the
# network on the linear piece that holds at the captured point, which is
# what the gradient penalty needs for its directional differences.

@contextlib.contextmanager
def capture_branches():
    """Collect the branch choice of every piecewise op run inside the block."""
    prev = getattr(_state, "branches", None)
    store: list[tuple[str, np.ndarray]] = []
    _state.branches = ("capture", store, None)
    try:
        yield store
    finally:
        _state.branches = prev


@contextlib.contextmanager
def replay_branches(store: list[tuple[str, np.ndarray]], copies: int = 1):
    """Reuse captured choices, tiled ``copies`` times along the batch axis.

    The ops must run in the same order as during capture.
    """
    prev = getattr(_state, "branches", None)
    cursor = [0]
    _state.branches = ("replay", store, (cursor, copies))
    try:
        yield
        if cursor[0] != len(store):
            raise GraphError(f"replay used {cursor[0]} of {len(store)} captured branch choices")
    finally:
        _state.branches = prev


def _branch(kind: str, fresh: Callable[[], np.ndarray], shape: tuple) -> np.ndarray:
    mode = getattr(_state, "branches", None)
    if mode is None:
        return fresh()
    what, store, extra = mode
    if what == "capture":
        choice = fresh()
        store.append((kind, choice))
        return choice
    cursor, copies = extra
    if cursor[0] >= len(store):
        raise GraphError(f"replay: no captured choice left for {kind}")
    got, choice = store[cursor[0]]
    cursor[0] += 1
    if copies > 1:
        choice = np.concatenate([choice] * copies, axis=0)
    if got != kind or choice.shape != shape:
        raise GraphError(f"replay: expected {kind} {shape}, captured {got} {choice.shape}")
    return choice


class Tape:
    """Append-only record of operations."""

    __slots__ = ("nodes", "consumed", "_merged_into")

    def __init__(self):
        self.nodes: list[tuple[str, "Tensor", tuple["Tensor", ...], Callable]] = []
        self.consumed = False
        self._merged_into: Tape | None = None

    def resolve(self) -> "Tape":
        tape = self
        while tape._merged_into is not None:
            tape = tape._merged_into
        return tape

    def absorb(self, other: "Tape") -> None:
        if other.consumed or self.consumed:
            raise GraphError("cannot combine tensors from an already differentiated graph")
        self.nodes.extend(other.nodes)
        other.nodes = []
        other._merged_into = self


class Tensor:
    """An n-d float64 array that may participate in a differentiation graph.

    ``grad`` is allocated lazily by ``backward`` and only on leaf tensors
    (those not produced by a recorded operation) with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data if data.dtype == np.float64 else data.astype(np.float64)
        t.grad = None
        t.requires_grad = False
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    @property
    def tape(self) -> Tape | None:
        return None if self._tape is None else self._tape.resolve()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(
    op: str,
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``out_data`` in a Tensor and append its node to the right tape.

    ``backward_fn`` maps the upstream gradient to one gradient per input
    (``None`` for inputs that do not need one).  This is the extension point
    used by other modules to define new differentiable operations.
    """
    out = Tensor._wrap(out_data)
    if not _grad_enabled() or not any(t.requires_grad for t in inputs):
        return out
    tape = None
    for t in inputs:
        other = t.tape
        if other is None:
            continue
        if other.consumed:
            raise GraphError(f"{op}: input belongs to a graph already consumed by backward()")
        if tape is None:
            tape = other
        elif other is not tape:
            tape.absorb(other)
    if tape is None:
        tape = Tape()
    out.requires_grad = True
    out._tape = tape
    tape.nodes.append((op, out, tuple(inputs), backward_fn))
    return out


def _run_backward(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if tape is None:
        return grads
    if tape.consumed:
        raise GraphError("graph already consumed by a previous backward()")
    for op, out, inputs, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = fn(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.data.shape:
                raise ShapeError(f"{op}: gradient shape {gi.shape} != input shape {t.data.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.consumed = True
    tape.nodes = []
    return grads


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    tape = loss.tape
    leaves = _collect_leaves(tape) if tape is not None else [loss]
    grads = _run_backward(loss)
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def grad(loss: Tensor, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    """Return d(loss)/d(input) for each input without touching any ``.grad``.

    Consumes the graph exactly like ``backward``.  Inputs that do not
    influence the loss get a zero gradient.
    """
    grads = _run_backward(loss)
    return [grads.get(id(t), np.zeros_like(t.data)) for t in inputs]


def _collect_leaves(tape: Tape) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    for _, _, inputs, _ in tape.nodes:
        for t in inputs:
            if t._tape is None and t.requires_grad:
                seen.setdefault(id(t), t)
    return list(seen.values())


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """Plain gradient descent, p <- p - lr * grad; grads are cleared afterwards."""
    params = list(params)
    for p in params:
        if p.grad is None:
            label = p.name or repr(p)
            raise GraphError(f"sgd_step: parameter {label} has no gradient")
    for p in params:
        if lr != 0.0:
            p.data -= lr * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# shape helpers


def _check_ndim(t: Tensor, ndim: int, op: str, what: str = "input") -> None:
    if t.data.ndim != ndim:
        raise ShapeError(f"{op}: {what} must be {ndim}-d, got shape {t.shape}")


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    if len(a) != len(b):
        raise ShapeError(f"{op}: rank mismatch {a} vs {b}")
    out = []
    for axis, (x, y) in enumerate(zip(a, b)):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"{op}: dimension {axis} mismatch ({x} vs {y})")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; size-1 axes broadcast (equal rank required)."""
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; size-1 axes broadcast (equal rank required)."""
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return record("div", out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape),
                             _unbroadcast(-g * out / bd, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return record("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record("add_scalar", a.data + c, (a,), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return record("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = _branch("leaky_relu", lambda: a.data > 0, a.shape)
    out = np.where(pos, a.data, slope * a.data)
    return record("leaky_relu", out, (a,), lambda g: (np.where(pos, g, slope * g),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split on sign so exp never overflows
    out = np.empty_like(x)
    p = x >= 0
    out[p] = 1.0 / (1.0 + np.exp(-x[p]))
    e = np.exp(x[~p])
    out[~p] = e / (1.0 + e)
    return record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# structural


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return record("reshape", out, (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref):
            raise ShapeError(f"concat: rank mismatch {ref} vs {t.shape}")
        for d, (x, y) in enumerate(zip(ref, t.shape)):
            if d != ax and x != y:
                raise ShapeError(f"concat: dimension {d} mismatch ({x} vs {y})")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return record("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)))


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return record("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def tensor_mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return record("mean", np.array(a.data.mean()), (a,),
                  lambda g: (np.full(shape, float(g) / n),))


def channel_mean(a: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,1,H,W] mean over channels."""
    _check_ndim(a, 4, "channel_mean")
    c = a.shape[1]
    out = a.data.mean(axis=1, keepdims=True)
    shape = a.shape
    return record("channel_mean", out, (a,), lambda g: (np.broadcast_to(g / c, shape).copy(),))


def channel_max(a: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,1,H,W] max over channels; gradient goes to the first argmax."""
    _check_ndim(a, 4, "channel_max")
    idx = _branch("channel_max", lambda: a.data.argmax(axis=1)[:, None], (a.shape[0], 1) + a.shape[2:])
    out = np.take_along_axis(a.data, idx, axis=1)
    shape = a.shape

    def fn(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return record("channel_max", out, (a,), fn)


def global_avg_pool(a: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C]."""
    _check_ndim(a, 4, "global_avg_pool")
    b, c, h, w = a.shape
    out = a.data.mean(axis=(2, 3))
    return record("global_avg_pool", out, (a,),
                  lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), a.data.shape).copy(),))


def upsample_copy(a: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the two trailing axes."""
    _check_ndim(a, 4, "upsample_copy")
    out = a.data.repeat(factor, axis=2).repeat(factor, axis=3)
    b, c, h, w = a.shape

    def fn(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record("upsample_copy", out, (a,), fn)


# ---------------------------------------------------------------------------
# layers


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[B,N] x [M,N] + [M] -> [B,M]."""
    _check_ndim(x, 2, "fully_connected")
    _check_ndim(weight, 2, "fully_connected", "weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"fully_connected: input features {x.shape[1]} != weight in-features {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def fn(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return record("fully_connected", out, (x, weight, bias), fn)


def _im2col(xh: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Channels-last padded input [B,Hp,Wp,C] -> columns [B,H',W',k,k,C]."""
    b, _, _, c = xh.shape
    if k == 1 and stride == 1:
        return xh[:, :ho, :wo, None, None, :]
    cols = np.empty((b, ho, wo, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xh[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """2-D cross-correlation, [B,Cin,H,W] * [Cout,Cin/g,k,k] -> [B,Cout,H',W'].

    Zero padding.  H' = (H + 2*padding - k) // stride + 1.
    """
    _check_ndim(x, 4, "conv2d")
    _check_ndim(weight, 4, "conv2d", "weight")
    b, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if kh != kw or kh < 1:
        raise ShapeError(f"conv2d: kernel must be square and non-empty, got {kh}x{kw}")
    k = kh
    if groups < 1 or cin % groups:
        raise ShapeError(f"conv2d: input channels {cin} not divisible by groups={groups}")
    if cout % groups:
        raise ShapeError(f"conv2d: output channels {cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"conv2d: weight in-channels {cin_g} != input channels/groups {cin // groups}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: padded input {h + 2 * padding}x{w + 2 * padding} smaller than kernel {k}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")

    p = padding
    ho = (h + 2 * p - k) // stride + 1
    wo = (w + 2 * p - k) // stride + 1
    xh = np.zeros((b, h + 2 * p, w + 2 * p, cin))
    xh[:, p:p + h, p:p + w, :] = x.data.transpose(0, 2, 3, 1)
    cog = cout // groups
    kkc = k * k * cin_g
    # weights reordered to match the (k, k, C) column layout
    wmats = [weight.data[g * cog:(g + 1) * cog].transpose(0, 2, 3, 1).reshape(cog, kkc)
             for g in range(groups)]

    cols = []
    out = np.empty((b * ho * wo, cout))
    for g in range(groups):
        col = _im2col(xh[..., g * cin_g:(g + 1) * cin_g], k, stride, ho, wo).reshape(-1, kkc)
        out[:, g * cog:(g + 1) * cog] = col @ wmats[g].T
        cols.append(col)
    out += bias.data
    out = np.ascontiguousarray(out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2))
    need_x = x.requires_grad

    def fn(gout):
        gt = np.ascontiguousarray(gout.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = np.empty(weight.shape)
        gxh = np.zeros(xh.shape) if need_x else None
        for g in range(groups):
            gg = gt[:, g * cog:(g + 1) * cog]
            gw[g * cog:(g + 1) * cog] = (gg.T @ cols[g]).reshape(cog, k, k, cin_g).transpose(0, 3, 1, 2)
            if gxh is None:
                continue
            dcol = (gg @ wmats[g]).reshape(b, ho, wo, k, k, cin_g)
            dst = gxh[..., g * cin_g:(g + 1) * cin_g]
            for i in range(k):
                for j in range(k):
                    dst[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcol[:, :, :, i, j, :]
        gx = None
        if gxh is not None:
            gx = np.ascontiguousarray(gxh[:, p:p + h, p:p + w, :].transpose(0, 3, 1, 2))
        return gx, gw, gt.sum(axis=0)

    return record("conv2d", out, (x, weight, bias), fn)


def maxpool2d(x: Tensor, k: int = 2, stride: int | None = None) -> Tensor:
    """Max over k x k windows.  Ties route the gradient to the first cell in row-major order."""
    _check_ndim(x, 4, "maxpool2d")
    stride = k if stride is None else stride
    b, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"maxpool2d: window {k} larger than input {h}x{w}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(b, c, ho, wo, k * k)
    idx = _branch("maxpool2d", lambda: flat.argmax(axis=-1), flat.shape[:-1])
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def fn(g):
        gx = np.zeros((b, c, h, w))
        for i in range(k):
            for j in range(k):
                hit = idx == i * k + j
                if hit.any():
                    gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(hit, g, 0.0)
        return (gx,)

    return record("maxpool2d", out, (x,), fn)
