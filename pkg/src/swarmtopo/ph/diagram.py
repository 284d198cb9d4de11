from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class PersistenceDiagram:
    """Multiset of ``(birth, death)`` pairs in one homology dimension.

    Essential classes carry ``death = inf``. Pairs are kept sorted
    lexicographically so that equal multisets have equal arrays.
    """

    dim: int
    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 2)
        if np.any(pairs[:, 1] < pairs[:, 0]):
            raise ValueError("death before birth in persistence pair")
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        self.pairs = pairs[order]

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.pairs, other.pairs)

    def __repr__(self) -> str:
        return f"PersistenceDiagram(dim={self.dim}, n={len(self)}, essential={self.n_essential})"

    @property
    def births(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def finite(self) -> np.ndarray:
        return self.pairs[np.isfinite(self.pairs[:, 1])]

    @property
    def essential(self) -> np.ndarray:
        """Births of the infinite bars."""
        return self.pairs[~np.isfinite(self.pairs[:, 1]), 0]

    @property
    def n_essential(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.pairs[:, 1])))

    def persistence(self) -> np.ndarray:
        return self.pairs[:, 1] - self.pairs[:, 0]

    @classmethod
    def empty(cls, dim: int) -> "PersistenceDiagram":
        return cls(dim, np.empty((0, 2)))
