"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every value is a :class:`Tensor` wrapping a C-order ``numpy`` array. While a
:class:`Tape` is active, each primitive that touches a gradient-requiring
input appends a record (output, inputs, vjp) to the tape; :func:`backward`
replays the records in reverse and accumulates adjoints into the leaves.

Primitive outputs are checked for NaN/Inf and a ``FloatingPointError`` is
raised on the first non-finite value, so numerical blow-ups surface at the
operation that produced them rather than at the end of a training step.
"""

from __future__ import annotations

import numpy as np

_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered record of primitives.

    Records are appended in forward order, which is by construction a
    topological order of the computation graph. Use as a context manager
    around the forward pass, then call :func:`backward`.
    """

    __slots__ = ("nodes", "produced")

    def __init__(self):
        self.nodes: list[tuple["Tensor", tuple["Tensor", ...], object]] = []
        self.produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic operators defer to the module-level primitives so that
    # everything lands on the tape through a single code path.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op}: non-finite value in output")


def _make(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap a forward result, recording the vjp if gradients are needed."""
    _check_finite(out_data, op)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append((out, inputs, vjp))
        tape.produced.add(id(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _make("add", a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _make("sub", a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make("mul", ad * bd, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _make("div", ad / bd, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a fixed scalar exponent."""
    p = float(exponent)
    ad = a.data

    def vjp(g):
        return (g * p * ad ** (p - 1.0),)

    return _make("power", ad ** p, (a,), vjp)


def absolute(a: Tensor) -> Tensor:
    ad = a.data

    def vjp(g):
        return (g * np.sign(ad),)

    return _make("abs", np.abs(ad), (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make("exp", out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _make("log", np.log(ad), (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return _make("sqrt", out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    ad = a.data

    def vjp(g):
        return (g * (ad > 0.0),)

    return _make("relu", np.maximum(ad, 0.0), (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make("sigmoid", out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow for large |x|."""
    ad = a.data
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    sig = np.empty_like(ad)
    pos = ad >= 0.0
    sig[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    sig[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * sig,)

    return _make("softplus", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Linear-algebra primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expected 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _make("matmul", ad @ bd, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose: expected 2D operand, got {a.shape}")

    def vjp(g):
        return (g.T,)

    return _make("transpose", a.data.T, (a,), vjp)


def kron(a: Tensor, b: Tensor) -> Tensor:
    """Kronecker product of two matrices with a native adjoint.

    The backward pass contracts the output gradient against the other
    factor directly instead of materializing intermediate reshuffles.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"kron: expected 2D operands, got {a.shape}, {b.shape}")
    ad, bd = a.data, b.data
    p, q = ad.shape
    r, s = bd.shape

    def vjp(g):
        blocks = g.reshape(p, r, q, s)
        ga = np.einsum("irjs,rs->ij", blocks, bd)
        gb = np.einsum("irjs,ij->rs", blocks, ad)
        return ga, gb

    return _make("kron", np.kron(ad, bd), (a, b), vjp)


# ---------------------------------------------------------------------------
# Shape primitives
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make("reshape", a.data.reshape(shape), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, vjp)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ash = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ash),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, ash),)

    return _make("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ash = a.shape
    if axis is None:
        count = a.size
    else:
        count = ash[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, ash),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx / count, ash),)

    return _make("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


# ---------------------------------------------------------------------------
# Gather / scatter primitives
# ---------------------------------------------------------------------------

def _check_index(idx: np.ndarray, bound: int, op: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise IndexError(f"{op}: index out of range [0, {bound})")
    return idx


def gather_rows(table: Tensor, idx) -> Tensor:
    """Select rows of a 2D tensor; the adjoint scatter-adds back into rows."""
    if table.ndim != 2:
        raise ValueError(f"gather_rows: expected 2D table, got {table.shape}")
    idx = _check_index(idx, table.shape[0], "gather_rows")
    td = table.data

    def vjp(g):
        gt = np.zeros_like(td)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make("gather_rows", td[idx], (table,), vjp)


def _segment_args(values: Tensor, segments, num_segments: int):
    seg = _check_index(segments, num_segments, "segment")
    vd = values.data
    squeeze = vd.ndim == 1
    if squeeze:
        vd = vd[:, None]
    if vd.ndim != 2:
        raise ValueError(f"segment: expected 1D or 2D values, got {values.shape}")
    if seg.shape != (vd.shape[0],):
        raise ValueError("segment: segment ids must match the leading axis")
    return seg, vd, squeeze


def segment_sum(values: Tensor, segments, num_segments: int) -> Tensor:
    seg, vd, squeeze = _segment_args(values, segments, num_segments)
    out = np.zeros((num_segments, vd.shape[1]))
    np.add.at(out, seg, vd)
    if squeeze:
        out = out[:, 0]

    def vjp(g):
        g2 = g[:, None] if squeeze else g
        gv = g2[seg]
        return (gv[:, 0] if values.ndim == 1 else gv,)

    return _make("segment_sum", out, (values,), vjp)


def segment_mean(values: Tensor, segments, num_segments: int) -> Tensor:
    """Per-segment mean; empty segments produce zero."""
    seg, vd, squeeze = _segment_args(values, segments, num_segments)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    out = np.zeros((num_segments, vd.shape[1]))
    np.add.at(out, seg, vd)
    out /= denom[:, None]
    if squeeze:
        out = out[:, 0]

    def vjp(g):
        g2 = g[:, None] if squeeze else g
        gv = (g2 / denom[:, None])[seg]
        return (gv[:, 0] if values.ndim == 1 else gv,)

    return _make("segment_mean", out, (values,), vjp)


def _segment_extreme(values: Tensor, segments, num_segments: int, mode: str) -> Tensor:
    """Shared min/max reduction. Ties route the gradient to the lowest
    contributing row index; empty segments produce zero and no gradient."""
    seg, vd, squeeze = _segment_args(values, segments, num_segments)
    n_rows, width = vd.shape
    fill = np.inf if mode == "min" else -np.inf
    out = np.full((num_segments, width), fill)
    ufunc = np.minimum if mode == "min" else np.maximum
    ufunc.at(out, seg, vd)
    counts = np.bincount(seg, minlength=num_segments)
    out[counts == 0] = 0.0

    # Lowest row index attaining the extreme, per (segment, column).
    arg = np.full((num_segments, width), n_rows, dtype=np.int64)
    if n_rows:
        hit = vd == out[seg]
        cand = np.where(hit, np.arange(n_rows, dtype=np.int64)[:, None], n_rows)
        np.minimum.at(arg, seg, cand)

    if squeeze:
        out = out[:, 0]

    def vjp(g):
        g2 = g[:, None] if squeeze else g
        gv = np.zeros((n_rows, width))
        si, ci = np.nonzero(arg < n_rows)
        np.add.at(gv, (arg[si, ci], ci), g2[si, ci])
        return (gv[:, 0] if values.ndim == 1 else gv,)

    return _make(f"segment_{mode}", out, (values,), vjp)


def segment_min(values: Tensor, segments, num_segments: int) -> Tensor:
    return _segment_extreme(values, segments, num_segments, "min")


def segment_max(values: Tensor, segments, num_segments: int) -> Tensor:
    return _segment_extreme(values, segments, num_segments, "max")


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/dx into every gradient-requiring leaf on the tape.

    Returns the map from leaf tensor to its adjoint. A leaf's ``grad`` field
    is created or added to, so repeated backward calls accumulate.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape.produced:
        raise ValueError("backward: loss was not recorded on this tape")

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for out, inputs, vjp in reversed(tape.nodes):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        grads = vjp(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            key = id(t)
            if key in adjoint:
                # New buffer: vjp outputs may alias other arrays.
                adjoint[key] = adjoint[key] + gt
            else:
                adjoint[key] = gt
                leaves[key] = t

    grad_map: dict[Tensor, np.ndarray] = {}
    for key, g in adjoint.items():
        t = leaves[key]
        g = np.asarray(g).reshape(t.shape)
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad = t.grad + g
        grad_map[t] = g
    return grad_map
