"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run tape: every operation appends a node to the active
``Graph`` and the backward pass replays the tape in strict reverse
insertion order, accumulating gradients additively.  The tape is meant
to be rebuilt per training step (cheap, and keeps recurrent unrolling
trivially correct).

Broadcasting is deliberately limited to bias addition; everything else
must shape-match exactly, which keeps every backward rule auditable.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import ContractError, DimensionError, NumericError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Handle to one node of a :class:`Graph`.

    Holds the forward value (dense float64 ndarray), the owning graph and
    the node id.  Tensors are immutable from the outside: no forward op
    writes into its inputs.
    """

    __slots__ = ("graph", "node_id", "value", "requires_grad")

    def __init__(self, graph: "Graph", node_id: int, value: np.ndarray, requires_grad: bool):
        self.graph = graph
        self.node_id = node_id
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(id={self.node_id}, shape={self.value.shape}, grad={self.requires_grad})"


class _Node:
    __slots__ = ("value", "input_ids", "backward_fn", "op", "requires_grad")

    def __init__(self, value, input_ids, backward_fn, op, requires_grad):
        self.value = value
        self.input_ids = input_ids
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad


class _SlicePiece:
    """Gradient of a slice op: a patch to scatter-add, not a full array."""

    __slots__ = ("axis", "start", "stop", "grad")

    def __init__(self, axis, start, stop, grad):
        self.axis = axis
        self.start = start
        self.stop = stop
        self.grad = grad


def _check_finite_array(a: np.ndarray, where: str) -> None:
    # a fast reduction; inf/nan poison the sum
    s = float(np.sum(a)) if a.size else 0.0
    if not math.isfinite(s):
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite values in {where}")


class Graph:
    """Append-only operation tape.

    ``validate=False`` skips per-op finiteness checks; the training engine
    uses it in the hot loop where loss and gradient finiteness are checked
    at step granularity instead.
    """

    def __init__(self, validate: bool = True):
        self.validate = validate
        self._nodes: list[_Node] = []
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    # -- node registration -------------------------------------------------

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        """Register a leaf holding ``data`` (converted to float64)."""
        value = np.asarray(data, dtype=np.float64)
        if self.validate:
            _check_finite_array(value, "leaf tensor")
        return self._register(value, (), None, "leaf", requires_grad)

    def _register(self, value, input_ids, backward_fn, op, requires_grad) -> Tensor:
        if self._consumed:
            raise ContractError("graph already consumed by backward(); build a new Graph")
        if self.validate and op != "leaf":
            _check_finite_array(value, f"output of op '{op}'")
        node_id = len(self._nodes)
        self._nodes.append(_Node(value, input_ids, backward_fn, op, requires_grad))
        return Tensor(self, node_id, value, requires_grad)

    def _op(self, op: str, inputs: Sequence[Tensor], value: np.ndarray,
            backward_fn: Optional[Callable]) -> Tensor:
        for t in inputs:
            if t.graph is not self:
                raise ContractError("all operands must live on the same Graph")
        req = any(t.requires_grad for t in inputs)
        ids = tuple(t.node_id for t in inputs)
        return self._register(value, ids, backward_fn if req else None, op, req)

    # -- backward ----------------------------------------------------------

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from ``loss``; returns {leaf node_id: gradient}.

        Only leaves created with ``requires_grad=True`` appear in the map.
        The graph is consumed afterwards.
        """
        if loss.graph is not self:
            raise ContractError("loss does not belong to this graph")
        if loss.value.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.value.shape}")
        if not self._nodes:
            raise ContractError("graph is empty")
        grads: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[loss.node_id] = np.ones_like(loss.value)
        for nid in range(loss.node_id, -1, -1):
            g = grads[nid]
            node = self._nodes[nid]
            if g is None or node.backward_fn is None:
                continue
            input_grads = node.backward_fn(g)
            for iid, ig in zip(node.input_ids, input_grads):
                if ig is None or not self._nodes[iid].requires_grad:
                    continue
                if isinstance(ig, _SlicePiece):
                    # scatter-add into a lazily allocated buffer: O(piece)
                    buf = grads[iid]
                    if buf is None:
                        buf = np.zeros_like(self._nodes[iid].value)
                        grads[iid] = buf
                    if ig.axis == 0:
                        buf[ig.start: ig.stop] += ig.grad
                    else:
                        buf[..., ig.start: ig.stop] += ig.grad
                elif grads[iid] is None:
                    grads[iid] = ig
                else:
                    grads[iid] = grads[iid] + ig
            # free as we sweep: this node's gradient and closure are done
            grads[nid] = None
            node.backward_fn = None
        out = {}
        for nid, node in enumerate(self._nodes):
            if node.op == "leaf" and node.requires_grad:
                g = grads[nid]
                out[nid] = np.zeros_like(node.value) if g is None else g
        self._consumed = True
        return out

    def reset(self) -> None:
        self._nodes.clear()
        self._consumed = False


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shape {a.value.shape} vs {b.value.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: shape {av.shape} vs {bv.shape}")
    if av.shape[1] == 1:
        # rank-1 GEMM is a slow BLAS path; broadcasting is equivalent
        value = av * bv[0]
    else:
        value = av @ bv

    def backward(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return a.graph._op("matmul", (a, b), value, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def backward(g):
        return (g, g)

    return a.graph._op("add", (a, b), a.value + b.value, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def backward(g):
        return (g, -g)

    return a.graph._op("sub", (a, b), a.value - b.value, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value

    def backward(g):
        return (g * bv, g * av)

    return a.graph._op("mul", (a, b), av * bv, backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Broadcast-add a 1-d bias over the leading axes of ``x``."""
    xv, bv = x.value, bias.value
    if bv.ndim != 1 or xv.shape[-1] != bv.shape[0]:
        raise DimensionError(f"add_bias: shape {xv.shape} vs {bv.shape}")

    def backward(g):
        gb = g.sum(axis=tuple(range(g.ndim - 1))) if g.ndim > 1 else g
        return (g, gb)

    return x.graph._op("add_bias", (x, bias), xv + bv, backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return x.graph._op("scale", (x,), x.value * c, backward)


def sin(x: Tensor) -> Tensor:
    xv = x.value

    def backward(g):
        return (g * np.cos(xv),)

    return x.graph._op("sin", (x,), np.sin(xv), backward)


def cos(x: Tensor) -> Tensor:
    xv = x.value

    def backward(g):
        return (-g * np.sin(xv),)

    return x.graph._op("cos", (x,), np.cos(xv), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)

    def backward(g):
        return (g * (1.0 - out * out),)

    return x.graph._op("tanh", (x,), out, backward)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.value)

    def backward(g):
        return (g * out * (1.0 - out),)

    return x.graph._op("sigmoid", (x,), out, backward)


def relu(x: Tensor) -> Tensor:
    xv = x.value
    out = np.maximum(xv, 0.0)

    def backward(g):
        return (g * (xv > 0.0),)

    return x.graph._op("relu", (x,), out, backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xv * xv)
        return (g * (cdf + xv * pdf),)

    return x.graph._op("gelu", (x,), xv * cdf, backward)


def square(x: Tensor) -> Tensor:
    xv = x.value

    def backward(g):
        return (2.0 * g * xv,)

    return x.graph._op("square", (x,), xv * xv, backward)


def tsum(x: Tensor) -> Tensor:
    shape = x.value.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return x.graph._op("sum", (x,), np.asarray(x.value.sum()), backward)


def tmean(x: Tensor) -> Tensor:
    shape = x.value.shape
    n = x.value.size

    def backward(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return x.graph._op("mean", (x,), np.asarray(x.value.mean()), backward)


def concat_last(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ContractError("concat_last: empty input list")
    lead = tensors[0].value.shape[:-1]
    for t in tensors[1:]:
        if t.value.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last: shape {tensors[0].value.shape} vs {t.value.shape}")
    widths = [t.value.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(widths)))

    value = np.concatenate([t.value for t in tensors], axis=-1)
    g0 = tensors[0].graph
    return g0._op("concat_last", tuple(tensors), value, backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    xv = x.value
    if not (0 <= start < stop <= xv.shape[-1]):
        raise DimensionError(f"slice_last: [{start}:{stop}] out of range for {xv.shape}")

    def backward(g):
        return (_SlicePiece(-1, start, stop, g),)

    return x.graph._op("slice_last", (x,), xv[..., start:stop].copy(), backward)


def repeat_rows(x: Tensor, reps: int) -> Tensor:
    """Repeat each row of a 2-d tensor ``reps`` times (gradient sums back)."""
    xv = x.value
    if xv.ndim != 2:
        raise DimensionError(f"repeat_rows: expected 2-d, got {xv.shape}")
    n, w = xv.shape

    def backward(g):
        return (g.reshape(n, reps, w).sum(axis=1),)

    return x.graph._op("repeat_rows", (x,), np.repeat(xv, reps, axis=0), backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-d tensors along axis 0 (backward splits the row blocks)."""
    if not tensors:
        raise ContractError("concat_rows: empty input list")
    w = tensors[0].value.shape[-1]
    for t in tensors:
        if t.value.ndim != 2 or t.value.shape[1] != w:
            raise DimensionError(
                f"concat_rows: shape {tensors[0].value.shape} vs {t.value.shape}")
    rows = [t.value.shape[0] for t in tensors]
    offsets = np.cumsum([0] + rows)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(rows)))

    value = np.concatenate([t.value for t in tensors], axis=0)
    return tensors[0].graph._op("concat_rows", tuple(tensors), value, backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    xv = x.value
    if not (0 <= start < stop <= xv.shape[0]):
        raise DimensionError(f"slice_rows: [{start}:{stop}] out of range for {xv.shape}")

    def backward(g):
        return (_SlicePiece(0, start, stop, g),)

    return x.graph._op("slice_rows", (x,), xv[start:stop].copy(), backward)


def lstm_gates(gates: Tensor, c_prev: Tensor) -> Tensor:
    """Fused LSTM cell tail: gate activations and state update.

    ``gates`` holds the (B, 4H) pre-activations ordered (i, f, g, o) and
    ``c_prev`` the (B, H) previous cell state.  Returns (B, 2H) laid out
    as [new hidden, new cell].  Fusing keeps the unrolled tape small.
    """
    gv, cv = gates.value, c_prev.value
    if gv.ndim != 2 or cv.ndim != 2 or gv.shape[0] != cv.shape[0] \
            or gv.shape[1] != 4 * cv.shape[1]:
        raise DimensionError(f"lstm_gates: shape {gv.shape} vs {cv.shape}")
    hdim = cv.shape[1]
    i = expit(gv[:, :hdim])
    f = expit(gv[:, hdim:2 * hdim])
    g = np.tanh(gv[:, 2 * hdim:3 * hdim])
    o = expit(gv[:, 3 * hdim:])
    c_new = f * cv + i * g
    th = np.tanh(c_new)
    out = np.concatenate([o * th, c_new], axis=1)

    def backward(grad):
        dh = grad[:, :hdim]
        dc = grad[:, hdim:] + dh * o * (1.0 - th * th)
        d_gates = np.empty_like(gv)
        d_gates[:, :hdim] = dc * g * i * (1.0 - i)
        d_gates[:, hdim:2 * hdim] = dc * cv * f * (1.0 - f)
        d_gates[:, 2 * hdim:3 * hdim] = dc * i * (1.0 - g * g)
        d_gates[:, 3 * hdim:] = dh * th * o * (1.0 - o)
        return (d_gates, dc * f)

    return gates.graph._op("lstm_gates", (gates, c_prev), out, backward)


def reshape(x: Tensor, shape) -> Tensor:
    xv = x.value
    old = xv.shape

    def backward(g):
        return (g.reshape(old),)

    return x.graph._op("reshape", (x,), xv.reshape(shape), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(fn: Callable[[Tensor], Tensor], x0, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must build a scalar-valued tensor program from a single leaf.
    Relative error per coordinate is |analytic - fd| / (|fd| + 1e-12).
    """
    if h <= 0:
        raise ContractError("grad_check: h must be positive")
    x0 = np.asarray(x0, dtype=np.float64)

    g = Graph()
    leaf = g.tensor(x0, requires_grad=True)
    out = fn(leaf)
    if out.value.size != 1:
        raise ContractError("grad_check: fn must be scalar-valued")
    analytic = g.backward(out)[leaf.node_id]

    flat = x0.ravel()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        for sgn, slot in ((1.0, 0), (-1.0, 1)):
            xp = flat.copy()
            xp[i] += sgn * h
            gg = Graph()
            val = fn(gg.tensor(xp.reshape(x0.shape))).value
            if slot == 0:
                fplus = float(val)
            else:
                fminus = float(val)
        fd[i] = (fplus - fminus) / (2.0 * h)
    err = np.abs(analytic.ravel() - fd) / (np.abs(fd) + 1e-12)
    return float(err.max()) if err.size else 0.0
