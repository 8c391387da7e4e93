"""System specifications, Lipschitz constants and resolution planning.

A system consists of L maps from the m-fold product of the box into the
box (arity m = 1 for classic systems) and, when fuzzy, one grey level
map per map.  The contraction factor of the whole system is the maximum
of the per-map Lipschitz constants; the arity-m constants are taken with
respect to the maximum metric on the product space.

For an affine map ``phi(u_1,...,u_m) = sum_i A_i u_i + c`` that constant
is ``sup { |sum_i A_i u_i| : |u_i| <= 1 }``, which by duality equals
``max_{|v|=1} sum_i |A_i^T v|`` -- a one-dimensional maximization over
the direction ``v`` in dimension 2 and a finite maximum in dimension 1.
That dual form is evaluated here deterministically (dense angular scan
plus golden-section refinement); the test suite cross-checks it against
random sampling and multi-start projected gradient ascent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import expr as ex
from .nets import Box


class LipschitzUnavailableError(ValueError):
    """Raised for non-affine maps without a user-supplied constant."""


def map_variables(m: int, d: int) -> list[str]:
    """Canonical input variable names: x1,y1,...,xm,ym (d=2) or x1..xm (d=1)."""
    names = []
    for i in range(1, m + 1):
        names.append(f"x{i}")
        if d == 2:
            names.append(f"y{i}")
    return names


def variable_aliases(m: int, d: int) -> dict[str, str]:
    """Aliases accepted in sources: plain x (and y) when the arity is 1."""
    if m != 1:
        return {}
    return {"x": "x1", "y": "y1"} if d == 2 else {"x": "x1"}


@dataclass
class MapSpec:
    """One map of the system, affine or expression-valued.

    ``matrix`` has shape (d, m*d) and columns ordered like the canonical
    variables; expression maps without an extractable affine form need
    ``lipschitz_override`` before the system can be planned.
    """

    arity: int
    dimension: int
    exprs: Optional[tuple[ex.Expression, ...]] = None
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    lipschitz_override: Optional[float] = None

    def __post_init__(self):
        if self.exprs is None and self.matrix is None:
            raise ValueError("map needs expressions or an affine form")
        if (self.matrix is None) != (self.offset is None):
            raise ValueError("affine form needs both matrix and offset")

    @property
    def is_affine(self) -> bool:
        return self.matrix is not None

    def evaluate(self, inputs: np.ndarray) -> np.ndarray:
        """Apply the map to rows of ``inputs`` (shape (N, m*d)) -> (N, d)."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if self.is_affine:
            return inputs @ self.matrix.T + self.offset
        names = map_variables(self.arity, self.dimension)
        bindings = {name: inputs[:, k] for k, name in enumerate(names)}
        for alias, canon in variable_aliases(self.arity, self.dimension).items():
            bindings[alias] = bindings[canon]
        cols = [np.broadcast_to(ex.evaluate_array(e, bindings), len(inputs)) for e in self.exprs]
        return np.stack(cols, axis=1)


@dataclass
class GreyMapSpec:
    """Grey level map rho: [0,1] -> [0,1] attached to one system map."""

    grey: ex.GreyMap

    def __call__(self, t: float) -> float:
        return ex.eval_grey(self.grey, t)

    def raw(self, t: float) -> float:
        return ex.eval_grey_raw(self.grey, t)


@dataclass
class SystemSpec:
    """A full IFS / IFZS / GIFS / GIFZS description."""

    box: Box
    arity: int
    maps: list[MapSpec]
    grey: Optional[list[GreyMapSpec]] = None
    _lipschitz: Optional[float] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.maps:
            raise ValueError("system needs at least one map")
        if self.grey is not None and len(self.grey) != len(self.maps):
            raise ValueError("one grey map per system map required")

    @property
    def is_fuzzy(self) -> bool:
        return self.grey is not None

    @property
    def L(self) -> int:
        return len(self.maps)

    @property
    def lipschitz(self) -> float:
        if self._lipschitz is None:
            self._lipschitz = lipschitz_system(self)
        return self._lipschitz


def try_extract_affine(exprs: Sequence[ex.Expression], m: int, d: int,
                       samples: int = 1000, seed: int = 2024) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Recover (matrix, offset) from expressions, or None if not affine.

    Coefficients are read off at the basis points; affinity is then
    verified on random inputs, so a nonlinear map cannot masquerade as
    affine.
    """
    names = map_variables(m, d)
    aliases = variable_aliases(m, d)
    k = len(names)

    def run(values: np.ndarray) -> Optional[np.ndarray]:
        bindings = {name: values[:, i] for i, name in enumerate(names)}
        for alias, canon in aliases.items():
            bindings[alias] = bindings[canon]
        try:
            cols = [np.broadcast_to(ex.evaluate_array(e, bindings), len(values)) for e in exprs]
        except ex.ExprDomainError:
            return None
        return np.stack(cols, axis=1)

    probe = np.vstack([np.zeros(k), np.eye(k)])
    out = run(probe)
    if out is None:
        return None
    offset = out[0]
    matrix = (out[1:] - offset).T
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(samples, k))
    got = run(pts)
    if got is None:
        return None
    want = pts @ matrix.T + offset
    scale = 1.0 + np.abs(want).max()
    if np.abs(got - want).max() > 1e-9 * scale:
        return None
    return matrix, offset


def _sigma_max(A: np.ndarray) -> float:
    """Largest singular value of a (d, d) block, closed form for d <= 2."""
    if A.shape == (1, 1):
        return abs(float(A[0, 0]))
    g = A.T @ A
    tr = g[0, 0] + g[1, 1]
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    disc = max(tr * tr - 4.0 * det, 0.0)
    return math.sqrt(max((tr + math.sqrt(disc)) / 2.0, 0.0))


def _blocks(map_spec: MapSpec) -> list[np.ndarray]:
    d = map_spec.dimension
    return [map_spec.matrix[:, i * d:(i + 1) * d] for i in range(map_spec.arity)]


def lipschitz_affine(map_spec: MapSpec) -> float:
    """Lipschitz constant of an affine map w.r.t. the maximum metric.

    Arity 1 is the largest singular value.  For arity m >= 2 the dual
    form ``max_{|v|=1} sum_i |A_i^T v|`` is maximized over the direction
    angle by a dense scan refined with golden-section search.
    """
    if not map_spec.is_affine:
        raise LipschitzUnavailableError("map has no affine form")
    blocks = _blocks(map_spec)
    if map_spec.arity == 1:
        return _sigma_max(blocks[0])
    if map_spec.dimension == 1:
        return float(sum(abs(float(B[0, 0])) for B in blocks))

    transposed = [B.T for B in blocks]

    def total(theta: np.ndarray) -> np.ndarray:
        v = np.stack([np.cos(theta), np.sin(theta)])
        out = np.zeros_like(theta)
        for Bt in transposed:
            w = Bt @ v
            out += np.sqrt((w * w).sum(axis=0))
        return out

    grid = np.linspace(0.0, math.pi, 8193)
    values = total(grid)
    i = int(np.argmax(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d_ = a + inv_phi * (b - a)
    fc = total(np.array([c]))[0]
    fd = total(np.array([d_]))[0]
    for _ in range(80):
        if fc > fd:
            b, d_, fd = d_, c, fc
            c = b - inv_phi * (b - a)
            fc = total(np.array([c]))[0]
        else:
            a, c, fc = c, d_, fd
            d_ = a + inv_phi * (b - a)
            fd = total(np.array([d_]))[0]
    return float(max(values[i], fc, fd))


def lipschitz_system(spec: SystemSpec) -> float:
    """max over the maps; per-map overrides win over computed values."""
    out = 0.0
    for k, m in enumerate(spec.maps):
        if m.lipschitz_override is not None:
            value = m.lipschitz_override
        elif m.is_affine:
            value = lipschitz_affine(m)
        else:
            raise LipschitzUnavailableError(
                f"map {k + 1} is not affine; supply a lipschitz override")
        out = max(out, value)
    return out


@dataclass(frozen=True)
class ResolutionPlan:
    """Net fineness and iteration count serving a target resolution."""

    delta: float
    theta: float
    epsilon: float
    iterations: int
    diameter: float
    alpha: float

    @property
    def predicted(self) -> float:
        return predicted_resolution(self.epsilon, self.iterations, self.alpha, self.diameter)

    @property
    def feasible(self) -> bool:
        return self.predicted <= self.delta * (1 + 1e-12)

    @property
    def degenerate(self) -> bool:
        """True when the target is so loose that no iterations are needed."""
        return self.iterations == 0


def plan_resolution(delta: float, theta: float, D: float, alpha: float) -> ResolutionPlan:
    """Split the budget: epsilon = (1-alpha)*theta*delta/5 and
    N = ceil(log((1-theta)*delta/D) / log(alpha)), floored at 0."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if delta <= 0.0 or D <= 0.0:
        raise ValueError("delta and D must be positive")
    epsilon = (1.0 - alpha) * theta * delta / 5.0
    ratio = (1.0 - theta) * delta / D
    iterations = 0 if ratio >= 1.0 else max(0, math.ceil(math.log(ratio) / math.log(alpha)))
    return ResolutionPlan(delta=delta, theta=theta, epsilon=epsilon,
                          iterations=iterations, diameter=D, alpha=alpha)


def predicted_resolution(epsilon: float, iterations: int, alpha: float, D: float) -> float:
    """Resolution bound 5*epsilon/(1-alpha) + alpha^N * D."""
    return 5.0 * epsilon / (1.0 - alpha) + alpha ** iterations * D


@dataclass
class ValidationReport:
    """Fatal failures block a run; warnings are informational."""

    failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"failure: {f}" for f in self.failures]
        out += [f"warning: {w}" for w in self.warnings]
        return out or ["ok"]


def validate_system(spec: SystemSpec, samples: int = 1000, grey_scan: int = 10000,
                    seed: int = 99) -> ValidationReport:
    """Check contraction, grey map admissibility and box invariance.

    Grey maps must satisfy rho(0) = 0 exactly, be nondecreasing on a
    dense scan, and at least one must reach rho(1) = 1.  Maps leaving the
    box are warnings only: the render pipeline clamps and counts those
    events rather than failing.
    """
    report = ValidationReport()
    try:
        alpha = spec.lipschitz
        if not alpha < 1.0:
            report.failures.append(f"system is not a contraction: alpha = {alpha}")
    except LipschitzUnavailableError as exc:
        report.failures.append(str(exc))

    if spec.is_fuzzy:
        ts = np.linspace(0.0, 1.0, grey_scan)
        top = 0.0
        for k, g in enumerate(spec.grey, start=1):
            try:
                vals = np.array([g.raw(float(t)) for t in ts])
            except ex.ExprError as exc:
                report.failures.append(f"grey map {k}: {exc}")
                continue
            if vals[0] != 0.0:
                report.failures.append(f"grey map {k}: rho(0) = {vals[0]}, must be 0")
            if np.any(np.diff(vals) < 0.0):
                report.failures.append(f"grey map {k}: not nondecreasing")
            if np.any((vals < 0.0) | (vals > 1.0)):
                report.warnings.append(f"grey map {k}: values escape [0,1] and will be clamped")
            top = max(top, float(vals[-1]))
        if top != 1.0:
            report.failures.append(f"no grey map reaches rho(1) = 1 (max is {top})")

    rng = np.random.default_rng(seed)
    k = spec.arity * spec.box.dimension
    lo = np.tile(spec.box.los, spec.arity)
    hi = np.tile(spec.box.his, spec.arity)
    pts = rng.uniform(lo, hi, size=(samples, k))
    for j, m in enumerate(spec.maps, start=1):
        try:
            img = m.evaluate(pts)
        except ex.ExprDomainError as exc:
            report.failures.append(f"map {j}: evaluation error on box samples: {exc}")
            continue
        outside = ~spec.box.contains(img, tol=1e-12)
        if np.any(outside):
            worst = img[np.argmax(outside)]
            report.warnings.append(
                f"map {j}: {int(outside.sum())}/{samples} sampled images leave the box "
                f"(e.g. {tuple(round(float(v), 6) for v in worst)}); they will be clamped")
    return report
