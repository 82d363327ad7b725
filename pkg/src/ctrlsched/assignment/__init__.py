"""Rectangular linear-sum assignment: exact, greedy and brute force.

The exact solver runs on a compiled kernel when the extension was built and
falls back to a pure-Python implementation of the same algorithm otherwise.
``BACKEND`` names the kernel picked at import.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _lsa_py

try:
    from . import _lsa_ext
except ImportError:  # extension not built
    _lsa_ext = None

BACKEND = "cython" if _lsa_ext is not None else "python"
BRUTE_FORCE_LIMIT = 8

__all__ = ["Matching", "hungarian", "greedy", "brute_force", "BACKEND",
           "available_backends"]


def available_backends() -> list[str]:
    return ["cython", "python"] if _lsa_ext is not None else ["python"]


@dataclass(frozen=True)
class Matching:
    """Exclusive device-to-block pairs, sorted by device index."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    @property
    def devices(self) -> list[int]:
        return [i for i, _ in self.pairs]

    @property
    def blocks(self) -> list[int]:
        return [j for _, j in self.pairs]

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)

    def is_exclusive(self) -> bool:
        return (len(set(self.devices)) == len(self.pairs)
                and len(set(self.blocks)) == len(self.pairs))


def _check_cost(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    return cost


def _matching(cost, pairs) -> Matching:
    pairs = tuple(sorted((int(i), int(j)) for i, j in pairs))
    total = float(sum(cost[i, j] for i, j in pairs))
    return Matching(pairs=pairs, total_cost=total)


def hungarian(cost, backend: str | None = None) -> Matching:
    """Exact minimum-cost matching of cardinality ``min(m, n)``.

    Rows are devices, columns blocks. The smaller side is always the one
    inserted by the augmenting-path loop, so a tall matrix is solved on its
    transpose. Equal-cost alternatives resolve toward lower indices of the
    smaller side first.
    """
    cost = _check_cost(cost)
    backend = backend or BACKEND
    if backend == "cython":
        if _lsa_ext is None:
            raise RuntimeError("compiled assignment kernel is not available")
        solve = _lsa_ext.solve_lsa
    elif backend == "python":
        solve = _lsa_py.solve_lsa
    else:
        raise ValueError(f"unknown backend {backend!r}")
    m, n = cost.shape
    if m == 0 or n == 0:
        return Matching(pairs=(), total_cost=0.0)
    if m <= n:
        cols = solve(np.ascontiguousarray(cost))
        pairs = [(i, j) for i, j in enumerate(cols)]
    else:
        rows = solve(np.ascontiguousarray(cost.T))
        pairs = [(i, j) for j, i in enumerate(rows)]
    return _matching(cost, pairs)


def greedy(cost) -> Matching:
    """Accept the cheapest non-conflicting entries until one side is used up.

    Entries are visited in ascending cost, ties in row-major order.
    """
    cost = _check_cost(cost)
    m, n = cost.shape
    target = min(m, n)
    order = np.argsort(cost, axis=None, kind="stable")
    row_used = np.zeros(m, dtype=bool)
    col_used = np.zeros(n, dtype=bool)
    pairs = []
    for flat in order:
        if len(pairs) == target:
            break
        i, j = divmod(int(flat), n)
        if not row_used[i] and not col_used[j]:
            row_used[i] = col_used[j] = True
            pairs.append((i, j))
    return _matching(cost, pairs)


_PERM_CACHE_LIMIT = 1 << 20


@functools.lru_cache(maxsize=32)
def _permutation_array(n: int, k: int) -> np.ndarray:
    arr = np.array(list(itertools.permutations(range(n), k)), dtype=np.intp)
    arr.setflags(write=False)
    return arr


def _permutation_blocks(n: int, k: int, chunk: int):
    """Yield the ``k``-permutations of ``range(n)`` in lexicographic order."""
    if math.perm(n, k) <= _PERM_CACHE_LIMIT:
        yield _permutation_array(n, k)
        return
    perms = itertools.permutations(range(n), k)
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.intp)
        if block.size == 0:
            return
        yield block


def brute_force(cost, chunk: int = 1 << 16) -> Matching:
    """Exhaustive search; refuses instances with ``min(m, n) > 8``.

    Injections of the smaller side are enumerated in lexicographic order,
    scored a chunk at a time, and only a strictly cheaper one replaces the
    incumbent, so ties keep the lexicographically first optimum.
    """
    cost = _check_cost(cost)
    m, n = cost.shape
    k = min(m, n)
    if k > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to min(m, n) <= {BRUTE_FORCE_LIMIT}, got {k}")
    if k == 0:
        return Matching(pairs=(), total_cost=0.0)
    # work on the orientation whose rows are the smaller side
    c = cost if m <= n else cost.T
    best, best_perm = np.inf, None
    for block in _permutation_blocks(c.shape[1], k, chunk):
        total = c[0, block[:, 0]].copy()
        for r in range(1, k):  # left-to-right, like a scalar sum
            total += c[r, block[:, r]]
        idx = int(np.argmin(total))
        if total[idx] < best:
            best, best_perm = float(total[idx]), block[idx]
    if m <= n:
        pairs = [(i, int(j)) for i, j in enumerate(best_perm)]
    else:
        pairs = [(int(i), j) for j, i in enumerate(best_perm)]
    return _matching(cost, pairs)
