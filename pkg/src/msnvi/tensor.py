"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: every primitive op executes eagerly on a numpy array and,
when a tape is active and an input is differentiable, appends one entry to
that tape. ``backward`` replays the tape in reverse and returns gradients
for every watched leaf. float64 is the default dtype; float32 is available
for throughput-bound training runs, gradients then stay in float32 too.

Only what small MLPs and the bound estimators need is implemented: no
views, no in-place ops, no higher-order derivatives, matmul is strictly
2-D. Elementwise ops broadcast by numpy's trailing-dimension rule.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _expit

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "forward",
    "backward",
    "finite_diff_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tanh",
    "elu",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "sqrt",
    "square",
    "clip",
    "tsum",
    "tmean",
    "broadcast_to",
    "concat",
    "stack",
    "reshape",
    "logsumexp",
]

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Entries are appended in execution order, so the list is topologically
    sorted by construction: inputs of entry i were produced by entries
    j < i or are watched leaves.
    """

    __slots__ = ("entries", "_next_id", "leaf_ids")

    def __init__(self):
        self.entries: list[tuple[str, tuple[int, ...], int, object]] = []
        self._next_id = 0
        self.leaf_ids: set[int] = set()

    def fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def watch(self, t: "Tensor") -> int:
        """Register a differentiable leaf with this tape, idempotently."""
        if t.tape is not self:
            t.tape = self
            t.node_id = self.fresh_id()
            self.leaf_ids.add(t.node_id)
        return t.node_id

    def record(self, op, input_ids, output_id, backward_fn):
        self.entries.append((op, tuple(input_ids), output_id, backward_fn))

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.entries)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense real array, optionally attached to a differentiation tape.

    ``node_id`` identifies the tensor on ``tape``; constants have neither.
    """

    __slots__ = ("data", "requires_grad", "tape", "node_id")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.tape: Tape | None = None
        self.node_id: int | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self):
        """Flat row-major view of the entries."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        g = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={list(self.data.shape)}{g})"

    # operator sugar; all dispatch to the primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def tensor(data, dtype=None) -> Tensor:
    """Constant tensor; never gets a node id."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    """Differentiable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _node_id(t: Tensor, tape: Tape) -> int:
    # leaves get watched lazily the first time an op touches them
    if t.tape is not tape:
        return tape.watch(t)
    return t.node_id


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _finish(op, inputs: list[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap a forward result, recording on the active tape if needed."""
    tape = _active_tape()
    diff = tape is not None and any(
        (t.requires_grad or t.tape is tape) for t in inputs
    )
    out = Tensor(out_data)
    if diff:
        in_ids = tuple(
            _node_id(t, tape) if (t.requires_grad or t.tape is tape) else -1
            for t in inputs
        )
        out.tape = tape
        out.node_id = tape.fresh_id()
        out.requires_grad = True
        tape.record(op, in_ids, out.node_id, backward_fn)
    return out


def _check_broadcast(op, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast")


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("add", a, b)
    out = a.data + b.data

    def bw(g, acc, ia=0, ib=1, sa=a.data.shape, sb=b.data.shape):
        acc(ia, _unbroadcast(g, sa))
        acc(ib, _unbroadcast(g, sb))

    return _finish("add", [a, b], out, bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("sub", a, b)
    out = a.data - b.data

    def bw(g, acc, sa=a.data.shape, sb=b.data.shape):
        acc(0, _unbroadcast(g, sa))
        acc(1, _unbroadcast(-g, sb))

    return _finish("sub", [a, b], out, bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def bw(g, acc):
        acc(0, _unbroadcast(g * bd, ad.shape))
        acc(1, _unbroadcast(g * ad, bd.shape))

    return _finish("mul", [a, b], out, bw)


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError("div: zero denominator")
    out = ad / bd

    def bw(g, acc):
        acc(0, _unbroadcast(g / bd, ad.shape))
        acc(1, _unbroadcast(-g * out / bd, bd.shape))

    return _finish("div", [a, b], out, bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = -a.data

    def bw(g, acc):
        acc(0, -g)

    return _finish("neg", [a], out, bw)


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul: only 2-D operands are supported")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g, acc):
        acc(0, g @ bd.T)
        acc(1, ad.T @ g)

    return _finish("matmul", [a, b], out, bw)


# ---------------------------------------------------------------------------
# unary elementwise


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def bw(g, acc):
        acc(0, g * (1.0 - y * y))

    return _finish("tanh", [a], y, bw)


def elu(a) -> Tensor:
    """Exponential linear unit with alpha = 1."""
    a = _as_tensor(a)
    x = a.data
    neg_part = np.expm1(np.minimum(x, 0.0))
    y = np.where(x > 0.0, x, neg_part)

    def bw(g, acc):
        acc(0, g * np.where(x > 0.0, 1.0, neg_part + 1.0))

    return _finish("elu", [a], y, bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _expit(a.data)

    def bw(g, acc):
        acc(0, g * y * (1.0 - y))

    return _finish("sigmoid", [a], y, bw)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = np.logaddexp(x.dtype.type(0), x)

    def bw(g, acc):
        acc(0, g * _expit(x))

    return _finish("softplus", [a], y, bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)

    def bw(g, acc):
        acc(0, g * y)

    return _finish("exp", [a], y, bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    if np.any(x <= 0.0):
        raise DomainError("log: nonpositive input")
    y = np.log(x)

    def bw(g, acc):
        acc(0, g / x)

    return _finish("log", [a], y, bw)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    if np.any(x < 0.0):
        raise DomainError("sqrt: negative input")
    y = np.sqrt(x)

    def bw(g, acc):
        acc(0, g * (0.5 / y))

    return _finish("sqrt", [a], y, bw)


def square(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y = x * x

    def bw(g, acc):
        acc(0, g * (2.0 * x))

    return _finish("square", [a], y, bw)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside, zero outside."""
    a = _as_tensor(a)
    x = a.data
    y = np.clip(x, lo, hi)

    def bw(g, acc):
        acc(0, g * ((x >= lo) & (x <= hi)))

    return _finish("clip", [a], y, bw)


# ---------------------------------------------------------------------------
# reductions and structural ops


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    axes = _norm_axes(axis, x.ndim)
    y = x.sum(axis=axes, keepdims=keepdims)

    def bw(g, acc):
        gg = g
        if not keepdims and x.ndim:
            gg = np.expand_dims(gg, axes)
        acc(0, np.broadcast_to(gg, x.shape))

    return _finish("sum", [a], y, bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[i] for i in axes])) if x.ndim else 1
    y = x.mean(axis=axes, keepdims=keepdims)

    def bw(g, acc):
        gg = g
        if not keepdims and x.ndim:
            gg = np.expand_dims(gg, axes)
        acc(0, np.broadcast_to(gg, x.shape) / count)

    return _finish("mean", [a], y, bw)


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        y = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: {a.data.shape} -> {tuple(shape)}")

    def bw(g, acc, s=a.data.shape):
        acc(0, _unbroadcast(g, s))

    return _finish("broadcast", [a], y, bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {a.data.shape} -> {shape}")

    def bw(g, acc, s=a.data.shape):
        acc(0, g.reshape(s))

    return _finish("reshape", [a], y, bw)


def concat(tensors, axis=0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input list")
    ax = axis % ts[0].data.ndim if ts[0].data.ndim else 0
    try:
        y = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.data.shape for t in ts]}")
    sizes = [t.data.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(offsets[i], offsets[i + 1])
            acc(i, g[tuple(sl)])

    return _finish("concat", ts, y, bw)


def stack(tensors, axis=0) -> Tensor:
    """Join along a new axis; implemented as reshape + concat."""
    ts = [_as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def logsumexp(a, axis=None, keepdims=False) -> Tensor:
    """log(sum(exp(x))) with a max shift for stability."""
    a = _as_tensor(a)
    x = a.data
    axes = _norm_axes(axis, x.ndim)
    m = np.max(x, axis=axes, keepdims=True) if x.ndim else x
    e = np.exp(x - m)
    s = e.sum(axis=axes, keepdims=True)
    y_kd = np.log(s) + m
    y = y_kd if keepdims or not x.ndim else np.squeeze(y_kd, axis=axes)
    softmax = e / s

    def bw(g, acc):
        gg = g
        if not keepdims and x.ndim:
            gg = np.expand_dims(gg, axes)
        acc(0, gg * softmax)

    return _finish("logsumexp", [a], y, bw)


# ---------------------------------------------------------------------------
# dispatcher, backward pass, gradient checking

_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "tanh": tanh,
    "elu": elu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "clip": clip,
    "sum": tsum,
    "mean": tmean,
    "broadcast": broadcast_to,
    "reshape": reshape,
    "concat": concat,
    "stack": stack,
    "logsumexp": logsumexp,
}


def forward(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Name-based dispatch to the primitive ops."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ContractError(f"unknown op kind {op_kind!r}")
    if op_kind in ("concat", "stack"):
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


def backward(tape: Tape, output: Tensor) -> dict[int, Tensor]:
    """Reverse sweep over ``tape``; returns node-id -> gradient for leaves.

    Gradients accumulate additively over fan-out. Two sweeps over the same
    tape yield bit-identical results: entry order and accumulation order
    are fixed by the tape.
    """
    if output.data.size != 1:
        raise ContractError(f"backward: output must be scalar, got shape {output.data.shape}")
    if output.tape is not tape or output.node_id is None:
        if output.requires_grad:
            # output IS a leaf (identity function); gradient of itself is 1
            tape.watch(output)
        else:
            raise ContractError("backward: output was not produced on this tape")

    grads: dict[int, np.ndarray] = {
        output.node_id: np.ones_like(output.data)
    }

    for op, input_ids, output_id, bw in reversed(tape.entries):
        g = grads.pop(output_id, None)
        if g is None:
            continue

        def acc(slot, value, _ids=input_ids):
            nid = _ids[slot]
            if nid < 0:
                return
            prev = grads.get(nid)
            grads[nid] = value if prev is None else prev + value

        bw(g, acc)

    return {
        nid: Tensor(g) for nid, g in grads.items() if nid in tape.leaf_ids
    }


def grads_for(tape: Tape, output: Tensor, params: dict) -> dict:
    """Convenience: backward() mapped onto a name -> parameter dict."""
    gmap = backward(tape, output)
    out = {}
    for name, p in params.items():
        g = gmap.get(p.node_id) if p.tape is tape else None
        out[name] = g.data if g is not None else np.zeros_like(p.data)
    return out


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``f`` must be deterministic given fixed noise; it is called with
    ``params`` (a list of leaf Tensors) and must return a scalar Tensor.
    Error is |fd - analytic| / max(1, |analytic|), maximized over all
    parameter components.
    """
    tape = Tape()
    with tape:
        out = f(params)
    gmap = backward(tape, out)

    worst = 0.0
    for p in params:
        analytic = gmap.get(p.node_id)
        an = analytic.data if analytic is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        an_flat = np.asarray(an, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(params).item()
            flat[i] = orig - h
            fm = f(params).item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(fd - an_flat[i]) / max(1.0, abs(an_flat[i]))
            if err > worst:
                worst = err
    return worst
