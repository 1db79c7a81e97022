"""Named parameters and the store that owns them.

A Parameter is a named leaf tensor. Parameters with ``trainable=False``
stay fixed under ``sgd_step`` regardless of accumulated gradients, which is
how the frozen backbone is enforced.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterator

import numpy as np

from ..errors import ContractError
from .rng import RngStream
from .tensor import Tensor


class Parameter:
    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, name: str, tensor: Tensor, trainable: bool = True):
        self.name = name
        self.tensor = tensor
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class ParamStore:
    """Ordered collection of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, values, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name: {name}")
        # frozen parameters opt out of the tape: they never receive updates,
        # so computing their gradients would be pure overhead
        p = Parameter(name, Tensor(values, requires_grad=trainable), trainable=trainable)
        self._params[name] = p
        return p

    def uniform_init(
        self, name: str, shape: tuple[int, ...], fan_in: int, rng: RngStream,
        trainable: bool = True,
    ) -> Parameter:
        """Weight init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, shape), trainable=trainable)

    def zeros_init(self, name: str, shape: tuple[int, ...], trainable: bool = True) -> Parameter:
        return self.add(name, np.zeros(shape), trainable=trainable)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def count(self, predicate: Callable[[Parameter], bool] | None = None) -> int:
        """Total number of scalar entries across matching parameters."""
        return sum(p.tensor.size for p in self if predicate is None or predicate(p))

    def zero_grad(self) -> None:
        for p in self:
            p.tensor.zero_grad()

    def sgd_step(self, lr: float) -> None:
        """In-place gradient-descent update on trainable parameters."""
        for p in self:
            if p.trainable and p.tensor.grad is not None:
                p.tensor.data -= lr * p.tensor.grad

    def set_values(self, name: str, values: np.ndarray) -> None:
        p = self._params[name]
        values = np.asarray(values, dtype=np.float64)
        if values.shape != p.shape:
            raise ContractError(
                f"parameter {name}: cannot assign shape {values.shape} to {p.shape}"
            )
        p.tensor.data = np.asarray(values, dtype=np.float64, order="C")

    def checksum(self, predicate: Callable[[Parameter], bool] | None = None) -> str:
        """SHA-256 over the raw bytes of matching parameters, in name order."""
        h = hashlib.sha256()
        for p in self:
            if predicate is None or predicate(p):
                h.update(p.name.encode("utf-8"))
                h.update(p.data.astype("<f8").tobytes())
        return h.hexdigest()
