"""Tensors, the recording tape and parameter sets.

Every differentiable op records one node on the active :class:`Tape`.
Nodes are appended in execution order, so the tape is already
topologically sorted and a single reverse sweep computes all gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import DimensionError, TapeEmptyError

DTYPE = np.float64


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(values, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Records differentiable ops executed inside a ``with`` block.

    >>> with Tape() as tape:
    ...     loss = some_op(x)
    >>> tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.visits = 0

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple, backward) -> None:
        out.requires_grad = True
        out.is_leaf = False
        self.nodes.append(Node(out, inputs, backward))

    def backward(self, loss: Tensor, params: Optional["ParamSet"] = None) -> None:
        backward(self, loss, params)


def current_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def record(data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap ``data`` as an op output and record it if any input needs grad."""
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t is not None and t.requires_grad for t in inputs):
        tape.record(out, inputs, backward)
    return out


def backward(tape: Tape, loss: Tensor, params: Optional["ParamSet"] = None) -> None:
    """Reverse sweep over ``tape`` accumulating into leaf ``.grad`` slots.

    Parameters in ``params`` that the loss does not reach get a zero
    gradient so the optimizer can tell "unused" from "not computed".
    """
    if not tape.nodes:
        raise TapeEmptyError("backward called on an empty tape; run the forward pass inside the tape first")
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        tape.visits += 1
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp is None or gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                pending[key] = gi if key not in pending else pending[key] + gi

    if params is not None:
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


class ParamSet:
    """Ordered name -> Tensor mapping with trainable/frozen flags."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, values, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        if not trainable:
            self._frozen.add(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def freeze(self, name: str) -> None:
        self._params[name]  # KeyError on unknown names
        self._frozen.add(name)

    def unfreeze(self, name: str) -> None:
        self._frozen.discard(name)

    def is_trainable(self, name: str) -> bool:
        return name not in self._frozen

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def count(self, trainable_only: bool = False) -> int:
        return sum(p.size for n, p in self._params.items() if not trainable_only or self.is_trainable(n))

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, p in self._params.items():
            a = np.asarray(arrays[n], dtype=DTYPE)
            if a.shape != p.shape:
                raise DimensionError(f"parameter {n!r}: stored shape {a.shape} != model shape {p.shape}")
            p.data = a.copy()

    def copy(self) -> "ParamSet":
        new = ParamSet()
        for n, p in self._params.items():
            new.add(n, p.data.copy(), trainable=self.is_trainable(n))
        return new

    def __deepcopy__(self, memo):
        return self.copy()

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} tensors, {self.count()} values)"

