"""Dense tensor value type and the tape that records differentiable ops.

A :class:`Tensor` is a thin wrapper over a contiguous numpy array. When a
:class:`GradTape` is active and at least one input of an op has
``requires_grad`` set, the op appends a node (output, parents, backward
closure) to the tape. :meth:`GradTape.backward` then replays the nodes in
reverse execution order, which is always a valid reverse topological order.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFiniteError, ShapeError, UsageError

DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}

_ACTIVE_TAPE: contextvars.ContextVar["GradTape | None"] = contextvars.ContextVar(
    "rsrwkv_active_tape", default=None
)


def as_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str) and dtype in DTYPES:
        return DTYPES[dtype]
    dt = np.dtype(dtype)
    if dt not in DTYPES.values():
        raise ValueError(f"unsupported dtype {dtype!r}; use f32 or f64")
    return dt


class Tensor:
    """Row-major dense array with optional participation in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=as_dtype(dtype) if dtype is not None else None, copy=True)
        if arr.dtype not in DTYPES.values():
            arr = arr.astype(np.float64)
        if any(n == 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # operator sugar over the primitives in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


@dataclass(eq=False)
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str
    tape: "GradTape"


class GradTape:
    """Single-writer record of executed ops, consumed by :meth:`backward`.

    Use as a context manager; ops executed inside the ``with`` block that touch
    a ``requires_grad`` tensor are recorded. One tape per training step.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "GradTape":
        if self._token is not None:
            raise UsageError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from a scalar ``loss``.

        Each recorded node is visited exactly once. Every grad-enabled leaf that
        feeds the tape receives a fresh ``.grad`` of its own shape (zeros when
        the loss does not depend on it); previous ``.grad`` values are replaced.
        """
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in self.nodes:
            for p in node.parents:
                if p.requires_grad and p._node is None:
                    leaves[id(p)] = p
        if loss.requires_grad and loss._node is None:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"{node.name}: gradient shape {pg.shape} != {p.shape}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for key, leaf in leaves.items():
            g = grads.get(key)
            leaf.grad = Tensor._wrap(np.zeros_like(leaf.data) if g is None else g.astype(leaf.dtype, copy=False))


def active_tape() -> GradTape | None:
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor) -> None:
    """Run the reverse sweep on the tape that produced ``loss``."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._node.tape if loss._node is not None else active_tape()
    if tape is None:
        raise UsageError("loss was not produced under an active GradTape")
    tape.backward(loss)


def make_result(
    out: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    name: str,
) -> Tensor:
    """Wrap an op's output, enforce finiteness, and record it when needed."""
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{name} produced non-finite values")
    result = Tensor._wrap(out)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        result.requires_grad = True
        result._node = _Node(result, tuple(parents), backward_fn, name, tape)
        tape.record(result._node)
    return result


def ensure_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
