"""Packed symmetric tensors and the symmetrised Gaussian noise."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainMismatch


@lru_cache(maxsize=None)
def _layout(n: int, k: int):
    """Sorted multi-index classes, their multiplicities and the full->class map."""
    classes = list(itertools.combinations_with_replacement(range(n), k))
    lookup = {c: i for i, c in enumerate(classes)}
    mult = np.array(
        [math.factorial(k) // math.prod(math.factorial(c.count(j)) for j in set(c)) for c in classes],
        dtype=float,
    )
    grid = np.indices((n,) * k).reshape(k, -1).T
    class_of = np.array([lookup[tuple(sorted(ix))] for ix in grid.tolist()], dtype=np.intp)
    return tuple(classes), mult, class_of


def sym_dim(n: int, k: int) -> int:
    """Dimension of the space of symmetric k-way tensors on R^n."""
    return math.comb(n + k - 1, k)


@dataclass(eq=False)
class SymmetricTensor:
    """Symmetric ``k``-way tensor on R^n stored by sorted multi-index class.

    ``entries[c]`` is the common value of every entry whose sorted index is
    ``classes[c]``; ``multiplicity[c]`` counts those entries.
    """

    n: int
    k: int
    entries: np.ndarray
    _full: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.shape != (sym_dim(self.n, self.k),):
            raise DomainMismatch(
                f"expected {sym_dim(self.n, self.k)} packed entries, got {self.entries.shape}"
            )

    @property
    def classes(self):
        return _layout(self.n, self.k)[0]

    @property
    def multiplicity(self):
        return _layout(self.n, self.k)[1]

    @property
    def full(self) -> np.ndarray:
        if self._full is None:
            class_of = _layout(self.n, self.k)[2]
            self._full = self.entries[class_of].reshape((self.n,) * self.k)
        return self._full

    def __array__(self, dtype=None, copy=None):
        return self.full if dtype is None else self.full.astype(dtype)

    @classmethod
    def from_full(cls, A, atol=1e-12) -> "SymmetricTensor":
        A = np.asarray(A, dtype=float)
        k = A.ndim
        n = A.shape[0]
        if A.shape != (n,) * k:
            raise DomainMismatch("tensor must be cubical")
        classes, _, _ = _layout(n, k)
        entries = np.array([A[c] for c in classes])
        out = cls(n, k, entries)
        if not np.allclose(out.full, A, atol=atol, rtol=0):
            raise DomainMismatch("tensor is not symmetric")
        return out

    @classmethod
    def rank_one(cls, t, k: int) -> "SymmetricTensor":
        t = np.asarray(t, dtype=float)
        classes, _, _ = _layout(t.size, k)
        return cls(t.size, k, np.array([np.prod(t[list(c)]) for c in classes]))

    def inner(self, other: "SymmetricTensor") -> float:
        """Frobenius inner product over all ``n**k`` entries."""
        if (self.n, self.k) != (other.n, other.k):
            raise DomainMismatch("tensor shapes differ")
        return float(np.sum(self.multiplicity * self.entries * other.entries))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "entries": [
                {"index": list(c), "value": float(v)} for c, v in zip(self.classes, self.entries)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SymmetricTensor":
        n, k = int(obj["n"]), int(obj["k"])
        classes, _, _ = _layout(n, k)
        lookup = {c: i for i, c in enumerate(classes)}
        entries = np.zeros(len(classes))
        for item in obj["entries"]:
            idx = tuple(int(i) for i in item["index"])
            if list(idx) != sorted(idx) or len(idx) != k:
                raise DomainMismatch(f"index {idx} is not a nondecreasing {k}-tuple")
            entries[lookup[idx]] = float(item["value"])
        return cls(n, k, entries)


def sample_noise_tensor(n: int, k: int, rng: np.random.Generator) -> SymmetricTensor:
    """Symmetrised standard Gaussian tensor ``(1/k!) sum_pi G^pi``.

    Drawn class by class: the entry shared by ``r`` index arrangements has
    variance ``1/r``, which is the law of the symmetrisation without forming
    the ``k!`` permutations.
    """
    if n < 2 or k < 3:
        raise ValueError("noise tensors need n >= 2 and k >= 3")
    _, mult, _ = _layout(n, k)
    return SymmetricTensor(n, k, rng.standard_normal(mult.size) / np.sqrt(mult))


def contract(Y: np.ndarray, T: np.ndarray, r: int) -> np.ndarray:
    """Contract the last ``r`` axes of the full tensor ``Y`` with vectors ``T``.

    ``T`` has shape ``(..., n)``; the result has shape ``(..., n, ..., n)`` with
    ``k - r`` trailing axes.
    """
    k = Y.ndim
    n = Y.shape[0]
    batch = T.shape[:-1]
    Tf = T.reshape(-1, n)
    if r == 0:
        return np.broadcast_to(Y, batch + Y.shape).copy()
    A = Tf @ Y.reshape(-1, n).T  # (B, n**(k-1))
    for _ in range(r - 1):
        A = (A.reshape(A.shape[0], -1, n) @ Tf[:, :, None])[..., 0]
    return A.reshape(batch + (n,) * (k - r))
