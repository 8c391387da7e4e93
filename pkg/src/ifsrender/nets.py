"""Finite nets of a box and projections onto them.

Two net kinds are supported on a 1- or 2-dimensional box:

* ``uniform`` -- the grid ``a + (i/n)(b - a)`` per axis, ``i = 0..n``,
  with the ceiling projection ``i_k = ceil(n (p_k - a_k)/(b_k - a_k))``.
* ``aleatory`` -- a random subset of the same grid, drawn as ``na``
  independent uniform grid points (the chaos game over the constant maps
  onto grid points degenerates to i.i.d. draws), deduplicated and sorted;
  projection is nearest-point with lexicographic tie break.

Net points are addressed by *local index*: the position of the point in
the lexicographically sorted point list.  For uniform nets this equals
the flattened grid index.  Nets are immutable and projections are pure,
so concurrent queries are safe.

Randomness comes from a counter-based SplitMix64 stream so aleatory nets
are reproducible across platforms and languages: draw ``i`` (0-based) of
the stream for seed ``s`` is::

    z = (s + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    z = z ^ (z >> 31)

(seed 0 yields 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, ... -- the
reference SplitMix64 sequence).  Sample ``k`` of an aleatory net in
dimension ``d`` uses draws ``k*d .. k*d + d - 1``, each reduced modulo
``n + 1`` to a grid index per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


class DomainError(ValueError):
    """A point lies outside the box it must belong to."""


_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)

# Relative slack for snapping near-integer grid coordinates and for
# detecting distance ties; keeps net points exact fixed points of the
# projections despite floating point noise.
_SNAP = 1e-9


def splitmix64(seed: int, indices: np.ndarray) -> np.ndarray:
    """Counter-based SplitMix64 draws for the given 0-based stream indices."""
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (indices.astype(np.uint64) + np.uint64(1)) * _SM64_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box, dimension 1 or 2."""

    los: tuple[float, ...]
    his: tuple[float, ...]

    def __post_init__(self):
        if len(self.los) != len(self.his):
            raise ValueError("mismatched interval endpoints")
        if len(self.los) not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        for a, b in zip(self.los, self.his):
            if not a < b:
                raise ValueError(f"degenerate interval [{a}, {b}]")

    @property
    def dimension(self) -> int:
        return len(self.los)

    @property
    def diameter(self) -> float:
        return float(np.hypot.reduce(np.subtract(self.his, self.los)))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.los) + np.asarray(self.his)) / 2.0

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Boolean mask of rows lying inside the box (with per-axis slack)."""
        p = np.atleast_2d(points)
        lo = np.asarray(self.los) - tol * self.widths
        hi = np.asarray(self.his) + tol * self.widths
        return np.all((p >= lo) & (p <= hi), axis=1)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.his) - np.asarray(self.los)


@dataclass(frozen=True, eq=False)
class Net:
    """A finite point set in a box with spacing metadata.

    ``epsilon`` is the guaranteed projection radius for uniform nets
    (half the cell diagonal, sqrt(d)/(2n) on the unit cube) and the
    *nominal* value for aleatory nets, where no covering guarantee
    exists.  ``epsilon_eff`` is the full cell diagonal: the ceiling
    projection can move a point almost that far, so all error bounds are
    computed with it.
    """

    kind: str
    box: Box
    n: int
    na: int = 0
    seed: int = 0
    grid_flats: Optional[np.ndarray] = None  # aleatory only; sorted unique
    _tree: list = field(default_factory=list, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def cell_widths(self) -> np.ndarray:
        return self.box.widths / self.n

    @property
    def epsilon(self) -> float:
        return float(np.hypot.reduce(self.cell_widths)) / 2.0

    @property
    def epsilon_eff(self) -> float:
        return float(np.hypot.reduce(self.cell_widths))

    @property
    def size(self) -> int:
        if self.kind == "uniform":
            return (self.n + 1) ** self.dimension
        return len(self.grid_flats)

    def grid_from_local(self, local: np.ndarray) -> np.ndarray:
        """Flattened grid index for each local index."""
        local = np.asarray(local, dtype=np.int64)
        if self.kind == "uniform":
            return local
        return self.grid_flats[local]

    def local_from_grid(self, grid_flat: np.ndarray) -> np.ndarray:
        grid_flat = np.asarray(grid_flat, dtype=np.int64)
        if self.kind == "uniform":
            return grid_flat
        local = np.searchsorted(self.grid_flats, grid_flat)
        if np.any(local >= len(self.grid_flats)) or np.any(self.grid_flats[np.minimum(local, len(self.grid_flats) - 1)] != grid_flat):
            raise ValueError("grid point is not part of this aleatory net")
        return local

    def grid_components(self, grid_flat: np.ndarray) -> np.ndarray:
        """(N, d) integer grid coordinates from flattened indices."""
        grid_flat = np.asarray(grid_flat, dtype=np.int64)
        if self.dimension == 1:
            return grid_flat[:, None]
        return np.stack([grid_flat // (self.n + 1), grid_flat % (self.n + 1)], axis=1)

    def flatten_components(self, comps: np.ndarray) -> np.ndarray:
        comps = np.asarray(comps, dtype=np.int64)
        if self.dimension == 1:
            return comps[:, 0]
        return comps[:, 0] * (self.n + 1) + comps[:, 1]

    def coords_from_grid(self, grid_flat: np.ndarray) -> np.ndarray:
        comps = self.grid_components(grid_flat)
        lo = np.asarray(self.box.los)
        return lo + (comps / self.n) * self.box.widths

    def points(self, local: Optional[np.ndarray] = None) -> np.ndarray:
        """Coordinates of the given local indices (all points if omitted)."""
        if local is None:
            local = np.arange(self.size)
        return self.coords_from_grid(self.grid_from_local(local))

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project box points to local indices, by the net's own rule."""
        if self.kind == "uniform":
            return project_uniform(self, points)
        return project_nearest(self, points)

    def _kdtree(self) -> cKDTree:
        if not self._tree:
            self._tree.append(cKDTree(self.points()))
        return self._tree[0]


def build_uniform_net(box: Box, n: int) -> Net:
    """Uniform net with (n+1)^d grid points."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return Net(kind="uniform", box=box, n=n)


def build_aleatory_net(box: Box, n: int, na: int, seed: int) -> Net:
    """Net of ``na`` uniform random grid points, deduplicated and sorted.

    A pure function of (box, n, na, seed); the draw sequence is the
    documented SplitMix64 stream, so results are reproducible anywhere.
    """
    if n < 1 or na < 1:
        raise ValueError("n and na must be >= 1")
    d = box.dimension
    flats: Optional[np.ndarray] = None
    chunk = 4_000_000
    for start in range(0, na, chunk):
        count = min(chunk, na - start)
        idx = np.arange(start * d, (start + count) * d, dtype=np.uint64)
        draws = splitmix64(seed, idx) % np.uint64(n + 1)
        comps = draws.reshape(count, d).astype(np.int64)
        part = np.unique(comps[:, 0] if d == 1 else comps[:, 0] * (n + 1) + comps[:, 1])
        flats = part if flats is None else np.union1d(flats, part)
    return Net(kind="aleatory", box=box, n=n, na=na, seed=seed, grid_flats=flats)


def _grid_axis_coords(net: Net, points: np.ndarray) -> np.ndarray:
    """Per-axis continuous grid coordinates z with 0 <= z <= n inside the box."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if p.shape[1] != net.dimension:
        raise ValueError(f"expected {net.dimension}-dimensional points")
    return (p - np.asarray(net.box.los)) * (net.n / net.box.widths)


def project_uniform(net: Net, points: np.ndarray) -> np.ndarray:
    """Ceiling projection of box points onto a uniform net (local indices).

    Net points are exact fixed points: coordinates within a relative
    1e-9 of a grid plane snap to it instead of being pushed up.
    Points outside the box raise :class:`DomainError`.
    """
    if net.kind != "uniform":
        raise ValueError("project_uniform requires a uniform net")
    z = _grid_axis_coords(net, points)
    if np.any(z < -_SNAP * net.n) or np.any(z > net.n * (1 + _SNAP)):
        raise DomainError("point outside the box")
    zr = np.rint(z)
    on_grid = np.abs(z - zr) <= _SNAP * net.n
    comps = np.where(on_grid, zr, np.ceil(z)).astype(np.int64)
    np.clip(comps, 0, net.n, out=comps)
    return net.flatten_components(comps)


def project_nearest(net: Net, points: np.ndarray) -> np.ndarray:
    """Nearest net point (local indices); ties go to the lexicographically
    smallest point, i.e. the lowest local index."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if net.kind == "uniform":
        z = _grid_axis_coords(net, p)
        # per-axis nearest with half-cell ties resolved downward
        comps = np.ceil(z - 0.5).astype(np.int64)
        np.clip(comps, 0, net.n, out=comps)
        return net.flatten_components(comps)
    tree = net._kdtree()
    dist, idx = tree.query(p, k=2 if net.size > 1 else 1)
    if net.size == 1:
        return np.zeros(len(p), dtype=np.int64)
    best = idx[:, 0].astype(np.int64)
    near_tie = dist[:, 1] <= dist[:, 0] * (1 + _SNAP)
    for row in np.flatnonzero(near_tie):
        radius = dist[row, 0] * (1 + _SNAP)
        cand = tree.query_ball_point(p[row], radius if radius > 0 else _SNAP)
        best[row] = min(cand)
    return best
