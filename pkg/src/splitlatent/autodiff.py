"""Reverse-mode automatic differentiation over dense float32 arrays.

Plain tensors are numpy float32 arrays in C (row-major) order. DiffTensor
wraps one value array together with a gradient buffer and, for results of
differentiable operations, a closure that routes the output gradient to the
operation's inputs. Graphs are built eagerly by the functions in ops.py and
are single-use: call backward() once per forward pass (calling it again
accumulates into existing gradients, which is the documented contract).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction, e.g. for validation passes."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled() -> bool:
    return _grad_enabled


def as_value(data) -> np.ndarray:
    """Coerce input to a C-contiguous float32 array (the package's tensor type)."""
    arr = np.asarray(data, dtype=np.float32)
    if not arr.flags["C_CONTIGUOUS"]:
        # ascontiguousarray would promote 0-d to 1-d, but 0-d is always contiguous
        arr = np.ascontiguousarray(arr)
    return arr


class DiffTensor:
    """A float32 array participating in reverse-mode gradient computation."""

    __slots__ = ("value", "_grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["DiffTensor"] = (),
        backward_fn: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.value = as_value(data)
        self._grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        self._grad += g

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad[...] = 0.0

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        """Populate grad on every reachable tensor with requires_grad set.

        Only valid on scalars (shape ()). Grads accumulate across calls.
        """
        if self.value.shape != ():
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.value.shape}"
            )
        topo: list[DiffTensor] = []
        visited: set[int] = set()
        stack: list[tuple[DiffTensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.accumulate_grad(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward_fn is not None and node._grad is not None:
                node._backward_fn(node._grad)

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def backward(loss: DiffTensor) -> None:
    """Run reverse-mode accumulation from a scalar loss."""
    loss.backward()


def make_result(value: np.ndarray, parents: Sequence[DiffTensor], backward_fn) -> DiffTensor:
    """Wrap an op result, retaining the graph only when needed."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    if not requires:
        return DiffTensor(value)
    return DiffTensor(value, requires_grad=True, parents=parents, backward_fn=backward_fn)
