"""Dense float64 tensors with a reverse-mode differentiation graph.

Every tensor produced by an operation on gradient-carrying inputs keeps a
:class:`Node` describing how to push a cotangent back to its inputs. Node
creation order is a topological order (inputs always exist before outputs),
so backward simply walks the reachable nodes by decreasing id.

Backward rules are written in terms of tensor operations, which is what makes
``grad(..., create_graph=True)`` possible: when the graph is being built the
rules themselves are recorded and can be differentiated again. Only the ops in
:data:`DOUBLE_BACKWARD_OPS` promise rules that are correct under a second
differentiation; anything else raises :class:`UnsupportedOpError`.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

# ops whose backward rules stay valid when differentiated again
DOUBLE_BACKWARD_OPS = frozenset({
    "conv2d", "conv2d_input_grad", "conv2d_weight_grad",
    "linear", "matmul",
    "leaky_relu",
    "add", "sub", "neg", "mul",
    "sum", "power", "sqrt", "concat",
    # structural (linear) ops needed to express the rules above
    "reshape", "transpose", "broadcast_to", "getitem", "scatter",
})


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class BackwardError(RuntimeError):
    """Backward was called on something that cannot be differentiated."""


class UnsupportedOpError(BackwardError):
    """A graph built with ``create_graph`` contains an op without double-backward."""

    def __init__(self, op: str):
        super().__init__(f"op '{op}' does not support double-backward (create_graph=True)")
        self.op = op


_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def set_grad_enabled(mode: bool):
    prev = is_grad_enabled()
    _state.grad_enabled = mode
    try:
        yield
    finally:
        _state.grad_enabled = prev


def no_grad():
    return set_grad_enabled(False)


class Node:
    __slots__ = ("op", "inputs", "vjp", "meta")

    def __init__(self, op: str, inputs: tuple, vjp: Callable, meta: str = ""):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.meta = meta


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "id", "name", "_consumed", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._node: Node | None = None
        self.id = next(_ids)
        self.name = name
        self._consumed = False

    # -- basic properties -------------------------------------------------
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
    def op(self) -> str | None:
        return self._node.op if self._node is not None else None

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg}, op={self.op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return ops.mul(self, ops.power(other, -1.0))
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        return ops.neg(self)

    def __pow__(self, p):
        return ops.power(self, p)

    def __getitem__(self, idx):
        return ops.getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *perm):
        if len(perm) == 1 and isinstance(perm[0], (tuple, list)):
            perm = tuple(perm[0])
        return ops.transpose(self, perm)

    def sum(self, axis=None, keepdims=False):
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, op: str, inputs: Sequence[Tensor], vjp: Callable,
              meta: str = "") -> Tensor:
    """Wrap an op result, attaching a graph node when any input needs gradients."""
    track = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out._node = Node(op, tuple(inputs), vjp, meta)
        for tape in getattr(_state, "tapes", ()):
            tape._record(out)
    return out


# -- tapes --------------------------------------------------------------------

class Tape:
    """Records every graph node created while active, in creation order.

    Used for debugging and diffing: ``dump()`` yields one line per record.
    Backward itself does not need an active tape.
    """

    def __init__(self):
        self.records: list[Tensor] = []

    def _record(self, t: Tensor) -> None:
        self.records.append(t)

    def __enter__(self) -> "Tape":
        tapes = getattr(_state, "tapes", None)
        if tapes is None:
            tapes = _state.tapes = []
        tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.remove(self)

    def dump(self) -> str:
        return "\n".join(_format_record(t) for t in self.records)


def _format_record(t: Tensor) -> str:
    node = t._node
    ins = ",".join(str(i.id) for i in node.inputs)
    shapes = ",".join("x".join(map(str, i.shape)) or "()" for i in node.inputs)
    out_shape = "x".join(map(str, t.shape)) or "()"
    line = f"{node.op} in=[{ins}] out={t.id} shapes=[{shapes}]->{out_shape}"
    return f"{line} {node.meta}" if node.meta else line


def dump_graph(root: Tensor) -> str:
    """Text dump of every node reachable from ``root`` in creation order."""
    return "\n".join(_format_record(t) for t in sorted(_reachable(root, None), key=lambda t: t.id)
                     if t._node is not None)


# -- backward -----------------------------------------------------------------

def _reachable(root: Tensor, targets: set[int] | None) -> list[Tensor]:
    """Tensors reachable from ``root`` that require grad.

    With ``targets`` given, keep only tensors lying on a path to one of them.
    """
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in seen or not t.requires_grad:
            continue
        seen[t.id] = t
        if t._node is not None:
            stack.extend(t._node.inputs)
    if targets is None:
        return list(seen.values())
    # a tensor leads to a target if it is one or any input leads to one
    leads: dict[int, bool] = {}
    for t in sorted(seen.values(), key=lambda t: t.id):
        ok = t.id in targets
        if not ok and t._node is not None:
            ok = any(leads.get(i.id, False) for i in t._node.inputs)
        leads[t.id] = ok
    return [t for t in seen.values() if leads[t.id]]


def _accumulate(store: dict[int, Tensor], t: Tensor, g: Tensor) -> None:
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    prev = store.get(t.id)
    store[t.id] = g if prev is None else ops.add(prev, g)


def _run(root: Tensor, seed: Tensor, targets: set[int] | None, create_graph: bool) -> dict[int, Tensor]:
    order = sorted(_reachable(root, targets), key=lambda t: t.id, reverse=True)
    grads: dict[int, Tensor] = {root.id: seed}
    with set_grad_enabled(create_graph):
        for t in order:
            node = t._node
            g = grads.get(t.id)
            if node is None or g is None:
                continue
            if create_graph and node.op not in DOUBLE_BACKWARD_OPS:
                raise UnsupportedOpError(node.op)
            in_grads = node.vjp(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if targets is not None and inp.id not in targets and inp._node is None:
                    continue
                _accumulate(grads, inp, ig)
    return grads


def _check_scalar(loss: Tensor) -> None:
    if not isinstance(loss, Tensor):
        raise BackwardError("backward expects a Tensor")
    if loss.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise BackwardError("loss is not attached to any tensor that requires grad")


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every graph tensor requiring grad."""
    _check_scalar(loss)
    if loss._consumed:
        raise BackwardError("backward already ran on this loss; pass retain_graph=True to allow repeats")
    seed = Tensor(np.ones(loss.shape))
    grads = _run(loss, seed, None, create_graph=False)
    for t in _reachable(loss, None):
        g = grads.get(t.id)
        if g is None:
            g = Tensor(np.zeros(t.shape))
        t.grad = g.data if t.grad is None else t.grad + g.data
    if not retain_graph:
        loss._consumed = True


def grad(output: Tensor, inputs: Sequence[Tensor] | Tensor, create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` w.r.t. ``inputs`` without touching ``.grad``.

    With ``create_graph`` the returned tensors are themselves graph nodes, so
    a function of them can be differentiated again.
    """
    inputs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    if isinstance(output, Tensor) and output.size == 1 and not output.requires_grad:
        # output does not depend on anything differentiable
        return [Tensor(np.zeros(t.shape)) for t in inputs]
    _check_scalar(output)
    targets = {t.id for t in inputs}
    grads = _run(output, Tensor(np.ones(output.shape)), targets, create_graph)
    out = []
    for t in inputs:
        g = grads.get(t.id)
        out.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return out


def grad_of_grad(scalar: Tensor, wrt: Tensor) -> Tensor:
    """d(scalar)/d(wrt) built as graph nodes so a further backward can pass through it."""
    return grad(scalar, [wrt], create_graph=True)[0]


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def tensors_data(ts: Iterable[Tensor]) -> list[np.ndarray]:
    return [t.data for t in ts]


from . import ops  # noqa: E402  (ops needs Tensor defined)
