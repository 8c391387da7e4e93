"""Hausdorff distance, the fuzzy sup-metric and the stopping rule.

The fuzzy metric is the supremum over membership levels of the Hausdorff
distance between level cuts.  Memberships are quantized, so only the
levels actually occurring in either argument matter: cuts are constant
in between, and the supremum is attained on that finite level set.

Iterations stop on any of three conditions: the planned iteration count
is reached, the last distance dropped below the configured tolerance, or
the distance repeated exactly three times in a row (stall).  Exact
equality is meaningful because memberships and net geometry are both
discrete, so the possible distance values form a finite set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .operators import DiscreteFuzzySet, DiscreteSet


class MetricError(ValueError):
    """Distance undefined for the given arguments."""


def _directed(a: np.ndarray, tree: cKDTree) -> float:
    return float(tree.query(a)[0].max())


def hausdorff(A: DiscreteSet, B: DiscreteSet) -> float:
    """Hausdorff distance between two nonempty sets on the same net."""
    if len(A) == 0 or len(B) == 0:
        raise MetricError("Hausdorff distance needs nonempty sets")
    if A.net is not B.net:
        raise MetricError("sets live on different nets")
    return _hausdorff_points(A.points(), B.points())


def _hausdorff_points(a: np.ndarray, b: np.ndarray) -> float:
    return max(_directed(a, cKDTree(b)), _directed(b, cKDTree(a)))


def d_infinity(u: DiscreteFuzzySet, v: DiscreteFuzzySet) -> float:
    """sup over membership levels of the Hausdorff distance between cuts.

    Both arguments must be normal, otherwise some cut is empty and the
    supremum is undefined.
    """
    if u.net is not v.net:
        raise MetricError("fuzzy sets live on different nets")
    if not u.is_normal or not v.is_normal:
        raise MetricError("d_infinity needs normal fuzzy sets")
    levels = np.union1d(np.unique(u.values), np.unique(v.values))
    levels = levels[levels > 0]
    pts = u.net.points()

    def cuts(values: np.ndarray):
        order = np.argsort(-values.astype(np.int64), kind="stable")
        counts = np.bincount(values, minlength=256)
        at_least = np.cumsum(counts[::-1])[::-1]  # at_least[k]: #points with value >= k
        return pts[order], at_least

    pu, cnt_u = cuts(u.values)
    pv, cnt_v = cuts(v.values)
    worst = 0.0
    for k in levels:
        a = pu[:cnt_u[k]]
        b = pv[:cnt_v[k]]
        if np.array_equal(a, b):
            continue
        worst = max(worst, _hausdorff_points(a, b))
    return worst


@dataclass
class IterationHistory:
    """Distances between consecutive iterates, plus the stop tolerance."""

    tol: float = 0.0
    values: list[float] = field(default_factory=list)

    def record(self, value: float) -> None:
        if value < 0.0:
            raise ValueError("distances are nonnegative")
        self.values.append(value)

    @property
    def stall_run(self) -> int:
        """Length of the trailing run of exactly equal values."""
        if not self.values:
            return 0
        run = 1
        for prev, cur in zip(self.values[-2::-1], self.values[::-1]):
            if prev != cur:
                break
            run += 1
        return run


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: Optional[str] = None


def should_stop(history: IterationHistory, n_done: int, N_max: int) -> StopDecision:
    """Stop on the iteration budget, the tolerance, or a three-fold stall."""
    if n_done >= N_max:
        return StopDecision(True, "max-iterations")
    if history.values and history.values[-1] < history.tol:
        return StopDecision(True, "tolerance")
    if len(history.values) >= 3 and history.stall_run >= 3:
        return StopDecision(True, "stall")
    return StopDecision(False)
