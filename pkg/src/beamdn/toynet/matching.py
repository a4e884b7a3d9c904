"""Bipartite matching of object queries to ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._backend import kernels


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]  # (query_index, gt_index), sorted by query
    n_query: int

    @property
    def query_indices(self) -> np.ndarray:
        return np.array([q for q, _ in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)

    def background(self) -> np.ndarray:
        bg = np.ones(self.n_query, dtype=bool)
        bg[self.query_indices] = False
        return bg

    def total_cost(self, cost) -> float:
        cost = np.asarray(cost)
        return float(sum(cost[q, g] for q, g in self.pairs))


def hungarian_match(cost) -> MatchResult:
    """Minimum-cost injection of ground truths (columns) into queries (rows).

    Among equal-cost optima the solver's scan order prefers the lowest free
    query index for each ground truth, giving the lexicographic pairing on
    ties such as an all-equal cost matrix.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2D (n_query, n_gt) matrix")
    n_query, n_gt = cost.shape
    if n_gt > n_query:
        raise CapacityError(f"{n_gt} ground truths cannot be matched to {n_query} queries")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    query_of_gt = kernels.hungarian(cost.T)
    pairs = tuple(sorted((int(q), g) for g, q in enumerate(query_of_gt)))
    return MatchResult(pairs, n_query)
