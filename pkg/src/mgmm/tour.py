"""Open-path TSP tours over goal cost matrices.

A cost matrix has one row/column per node; callers decide which index is the
start. Tours never return to the start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EXACT_LIMIT = 15


class TourSizeError(ValueError):
    pass


@dataclass(frozen=True)
class Tour:
    order: tuple
    cost: float


def _check_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("cost matrix must be square")
    return D


def tour_cost(D, start: int, order) -> float:
    D = np.asarray(D, dtype=float)
    cost, cur = 0.0, start
    for g in order:
        cost += float(D[cur, g])
        cur = g
    return cost


def greedy_tour(D, start: int, remaining) -> Tour:
    """Nearest-unvisited-next tour; ties go to the lowest goal index."""
    D = _check_matrix(D)
    left = sorted(set(remaining))
    if not left:
        raise ValueError("no goals to visit")
    order, cost, cur = [], 0.0, start
    while left:
        nxt = min(left, key=lambda g: (D[cur, g], g))
        cost += float(D[cur, nxt])
        order.append(nxt)
        left.remove(nxt)
        cur = nxt
    return Tour(tuple(order), cost)


def exact_tour(D, start: int, remaining) -> Tour:
    """Optimal open-path tour by Held-Karp dynamic programming."""
    D = _check_matrix(D)
    goals = sorted(set(remaining))
    k = len(goals)
    if k == 0:
        raise ValueError("no goals to visit")
    if k > EXACT_LIMIT:
        raise TourSizeError(f"exact tour supports at most {EXACT_LIMIT} goals, got {k}")
    sub = D[np.ix_(goals, goals)]
    first = D[start, goals]
    full = (1 << k) - 1
    # best[mask][j]: cheapest path from start covering mask and ending at goal j
    best = np.full((1 << k, k), math.inf)
    parent = np.full((1 << k, k), -1, dtype=np.int64)
    for j in range(k):
        best[1 << j, j] = first[j]
    for mask in range(1, full + 1):
        row = best[mask]
        for j in range(k):
            cj = row[j]
            if cj == math.inf:
                continue
            for nxt in range(k):
                bit = 1 << nxt
                if mask & bit:
                    continue
                c = cj + sub[j, nxt]
                m2 = mask | bit
                if c < best[m2, nxt]:
                    best[m2, nxt] = c
                    parent[m2, nxt] = j
    last = int(np.argmin(best[full]))
    cost = float(best[full, last])
    order = []
    mask = full
    while last >= 0:
        order.append(goals[last])
        prev = int(parent[mask, last])
        mask ^= 1 << last
        last = prev
    return Tour(tuple(reversed(order)), cost)


class SuffixTours:
    """Memoized optimal/greedy completions over a fixed goal-to-goal matrix.

    Used by planners to price many group tours that differ only in their first
    leg: ``best_from(g, rest)`` is the cheapest open path starting at goal g and
    covering `rest`.
    """

    def __init__(self, goal_costs, exact_limit: int = 10):
        self.D = np.asarray(goal_costs, dtype=float)
        self.exact_limit = exact_limit

        @lru_cache(maxsize=None)
        def best_from(g: int, rest: frozenset):
            if not rest:
                return 0.0, ()
            best = (math.inf, ())
            for h in sorted(rest):
                c, tail = best_from(h, rest - {h})
                c += self.D[g, h]
                if c < best[0]:
                    best = (c, (h,) + tail)
            return best

        self._best_from = best_from

    def tour(self, first_leg: dict) -> Tour:
        """Cheapest tour given the cost of reaching each remaining goal first."""
        rest = frozenset(first_leg)
        if not rest:
            return Tour((), 0.0)
        if len(rest) <= self.exact_limit:
            best = (math.inf, ())
            for g in sorted(rest):
                c, tail = self._best_from(g, rest - {g})
                c += first_leg[g]
                if c < best[0]:
                    best = (c, (g,) + tail)
            return Tour(best[1], float(best[0]))
        cur = min(rest, key=lambda g: (first_leg[g], g))
        order, cost, left = [cur], first_leg[cur], set(rest) - {cur}
        while left:
            nxt = min(left, key=lambda g: (self.D[cur, g], g))
            cost += self.D[cur, nxt]
            order.append(nxt)
            left.remove(nxt)
            cur = nxt
        return Tour(tuple(order), float(cost))
