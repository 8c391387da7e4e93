"""Discrete Hutchinson operators, fuzzy steps and the inverse-image table.

Sets and fuzzy sets live on a :class:`~ifsrender.nets.Net`; memberships
are quantized to the 256-level grey scale ``k/255`` (round half up), so
a membership value is stored as its byte and "the metric stayed the
same" is exact equality.  All step operators are pure functions of their
inputs, and every reduction they perform is an associative max/min, so
chunked or reordered evaluation cannot change the result.

The inverse-image table holds one record ``(j, source, target)`` per map
``j`` and source m-tuple of net points, with ``target`` the projected
image of the source.  It is generated once and swept on every fuzzy
iteration; records are grouped by target so a sweep is sequential.  Two
backends exist: ``ram`` keeps the table as arrays, ``file`` stores the
records on disk in a fixed binary format (see :data:`PHI_MAGIC`) and
streams them back chunk by chunk, keeping the iteration working set
small.  Both backends hold the same logical record set and produce
bit-identical fuzzy steps.

File format, all integers little endian: magic ``PHIINV01`` (8 bytes),
u32 version=1, u32 L, u32 m, u32 d, u32 n, u64 record count; then per
record u32 j (1-based), m*d u32 source grid components, d u32 target
grid components, sorted by (target lexicographic, j, source
lexicographic).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .expr import eval_grey
from .nets import Net
from .systems import GreyMapSpec, MapSpec, SystemSpec

PHI_MAGIC = b"PHIINV01"
PHI_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIQ")

DEFAULT_STEP_BUDGET = 5_000_000_000
DEFAULT_TABLE_BUDGET_RAM = 60_000_000
DEFAULT_TABLE_BUDGET_FILE = 240_000_000
_CHUNK = 1 << 20


class BudgetExceededError(RuntimeError):
    """The requested computation is larger than the configured budget."""


def quantize(values: np.ndarray) -> np.ndarray:
    """Memberships in [0, 1] to the byte grid k/255, rounding half up."""
    v = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def grey_lut(grey: GreyMapSpec) -> np.ndarray:
    """Byte-to-byte table of a grey map on the quantized membership grid.

    Quantizing after the map commutes with the pointwise maxima taken by
    the operators (both are nondecreasing), so working through the table
    equals evaluating in floats and quantizing the final result.
    """
    ts = np.arange(256) / 255.0
    return quantize(np.array([eval_grey(grey.grey, float(t)) for t in ts]))


@dataclass
class StepDiagnostics:
    """Counts box-escape events clamped during map application."""

    clamp_events: int = 0


class DiscreteSet:
    """Finite set of net points, held as sorted unique local indices."""

    def __init__(self, net: Net, indices: np.ndarray):
        indices = np.unique(np.asarray(indices, dtype=np.int64))
        if len(indices) and (indices[0] < 0 or indices[-1] >= net.size):
            raise ValueError("index outside the net")
        self.net = net
        self.indices = indices

    @classmethod
    def from_points(cls, net: Net, points: np.ndarray) -> "DiscreteSet":
        return cls(net, net.project(points))

    def points(self) -> np.ndarray:
        return self.net.points(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        return (isinstance(other, DiscreteSet) and self.net is other.net
                and np.array_equal(self.indices, other.indices))

    def __repr__(self) -> str:
        return f"DiscreteSet({len(self)} points on {self.net.kind} net n={self.net.n})"


class DiscreteFuzzySet:
    """Membership byte per net point; byte 0 means "not a member"."""

    def __init__(self, net: Net, values: np.ndarray):
        values = np.asarray(values, dtype=np.uint8)
        if values.shape != (net.size,):
            raise ValueError("one membership byte per net point required")
        self.net = net
        self.values = values

    @classmethod
    def from_pairs(cls, net: Net, indices: np.ndarray, memberships: np.ndarray) -> "DiscreteFuzzySet":
        """Build from (local index, membership in [0,1]) pairs; duplicate
        indices keep the largest membership."""
        values = np.zeros(net.size, dtype=np.uint8)
        np.maximum.at(values, np.asarray(indices, dtype=np.int64), quantize(memberships))
        return cls(net, values)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values)

    @property
    def is_normal(self) -> bool:
        return bool(self.values.max(initial=0) == 255)

    def __eq__(self, other) -> bool:
        return (isinstance(other, DiscreteFuzzySet) and self.net is other.net
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"DiscreteFuzzySet({len(self.support())} support points on n={self.net.n})"


def characteristic(K: DiscreteSet) -> DiscreteFuzzySet:
    """Membership 1 on K, 0 elsewhere."""
    if len(K) == 0:
        raise ValueError("characteristic function of an empty set is not normal")
    values = np.zeros(K.net.size, dtype=np.uint8)
    values[K.indices] = 255
    return DiscreteFuzzySet(K.net, values)


def alpha_cut(u: DiscreteFuzzySet, alpha: float) -> DiscreteSet:
    """The crisp set of points with membership >= alpha, alpha in (0, 1]."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    threshold = int(np.ceil(alpha * 255.0 - 1e-9))
    return DiscreteSet(u.net, np.flatnonzero(u.values >= threshold))


def _apply_and_project(map_spec: MapSpec, net: Net, inputs: np.ndarray,
                       diagnostics: Optional[StepDiagnostics]) -> np.ndarray:
    """Map, clamp into the box (counting escapes), then project."""
    img = map_spec.evaluate(inputs)
    lo = np.asarray(net.box.los)
    hi = np.asarray(net.box.his)
    if diagnostics is not None:
        slack = 1e-9 * net.box.widths
        outside = np.any((img < lo - slack) | (img > hi + slack), axis=1)
        diagnostics.clamp_events += int(outside.sum())
    np.clip(img, lo, hi, out=img)
    return net.project(img)


def _tuple_coords(points: np.ndarray, linear: np.ndarray, m: int, count: int) -> np.ndarray:
    """Coordinates of source m-tuples given linear tuple indices."""
    cols = []
    rest = linear
    for _ in range(m):
        rest, digit = rest // count, rest % count
        cols.append(digit)
    cols.reverse()  # first digit is the most significant -> tuple slot 0
    return np.concatenate([points[c] for c in cols], axis=1)


def generalized_hutchinson_step(spec: SystemSpec, net: Net, W: DiscreteSet,
                                budget: int = DEFAULT_STEP_BUDGET,
                                diagnostics: Optional[StepDiagnostics] = None) -> DiscreteSet:
    """One step of the (generalized) Hutchinson operator on the net:
    project every phi_j image of every m-tuple drawn from W and merge."""
    if len(W) == 0:
        raise ValueError("cannot step an empty set")
    m = spec.arity
    count = len(W)
    total = count ** m * spec.L
    if total > budget:
        raise BudgetExceededError(
            f"{total} map evaluations exceed the step budget {budget}; "
            "reduce n, shrink the set, or use an aleatory net")
    points = W.points()
    mask = np.zeros(net.size, dtype=bool)
    tuples = count ** m
    for start in range(0, tuples, _CHUNK):
        stop = min(start + _CHUNK, tuples)
        if m == 1:
            inputs = points[start:stop]
        else:
            linear = np.arange(start, stop, dtype=np.int64)
            inputs = _tuple_coords(points, linear, m, count)
        for map_spec in spec.maps:
            mask[_apply_and_project(map_spec, net, inputs, diagnostics)] = True
    return DiscreteSet(net, np.flatnonzero(mask))


def hutchinson_step(spec: SystemSpec, net: Net, W: DiscreteSet,
                    diagnostics: Optional[StepDiagnostics] = None) -> DiscreteSet:
    """Classic arity-1 Hutchinson step: union of projected map images."""
    if spec.arity != 1:
        raise ValueError("hutchinson_step requires arity 1; use generalized_hutchinson_step")
    return generalized_hutchinson_step(spec, net, W, diagnostics=diagnostics)


def _nets_match(a: Net, b: Net) -> bool:
    if a is b:
        return True
    return (a.kind == b.kind and a.n == b.n and a.box == b.box
            and a.na == b.na and a.seed == b.seed)


class InverseImageTable:
    """Base interface shared by the two storage backends."""

    net: Net
    L: int
    m: int
    record_count: int

    def preimage_max(self, values: np.ndarray) -> np.ndarray:
        """(L, net.size) byte array: entry (j-1, x) is the largest
        min-membership over sources of the records (j, source, x),
        0 where no record targets x."""
        raise NotImplementedError

    def iter_records(self) -> Iterator[tuple[int, tuple, tuple]]:
        """Records as (j, source grid components, target grid components)
        in the canonical (target, j, source) order."""
        raise NotImplementedError


class RamInverseTable(InverseImageTable):
    """Table kept in memory, grouped by target for single-sweep steps.

    Sources are stored as their linear tuple index into the m-fold
    product of local net indices; the index decodes to the source tuple
    and is itself lexicographic in the source components.
    """

    def __init__(self, net: Net, L: int, m: int,
                 orders: list[np.ndarray], targets: list[np.ndarray]):
        self.net = net
        self.L = L
        self.m = m
        self.record_count = int(sum(len(t) for t in targets))
        self._orders = orders
        self._starts: list[np.ndarray] = []
        self._group_targets: list[np.ndarray] = []
        for t in targets:
            boundaries = np.flatnonzero(np.diff(t)) + 1
            starts = np.concatenate([[0], boundaries])
            self._starts.append(starts)
            self._group_targets.append(t[starts])
        self._targets = targets

    def preimage_max(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.L, self.net.size), dtype=np.uint8)
        size = self.net.size
        for j in range(self.L):
            order = self._orders[j]
            if len(order) == 0:
                continue
            w = values[order % size]
            rest = order // size
            for _ in range(self.m - 1):
                w = np.minimum(w, values[rest % size])
                rest = rest // size
            groups = np.maximum.reduceat(w, self._starts[j])
            out[j, self._group_targets[j]] = groups
        return out

    def iter_records(self) -> Iterator[tuple[int, tuple, tuple]]:
        js = np.concatenate([np.full(len(t), j + 1, dtype=np.int64)
                             for j, t in enumerate(self._targets)])
        tgts = np.concatenate(self._targets).astype(np.int64)
        orders = np.concatenate(self._orders).astype(np.int64)
        for row in np.lexsort((orders, js, tgts)):
            yield self._decode(int(js[row]), int(orders[row]), int(tgts[row]))

    def _decode(self, j: int, order: int, tgt_local: int) -> tuple[int, tuple, tuple]:
        size = self.net.size
        digits = []
        for _ in range(self.m):
            order, digit = divmod(order, size)
            digits.append(digit)
        digits.reverse()
        src = tuple(tuple(int(c) for c in
                          self.net.grid_components(self.net.grid_from_local(np.array([dig])))[0])
                    for dig in digits)
        tgt = tuple(int(c) for c in
                    self.net.grid_components(self.net.grid_from_local(np.array([tgt_local])))[0])
        return j, src, tgt


class FileInverseTable(InverseImageTable):
    """Table stored on disk; sweeps stream it in bounded chunks."""

    def __init__(self, path: Union[str, Path], net: Net):
        self.path = Path(path)
        self.net = net
        with open(self.path, "rb") as fh:
            header = fh.read(_HEADER.size)
        magic, version, L, m, d, n, count = _HEADER.unpack(header)
        if magic != PHI_MAGIC or version != PHI_VERSION:
            raise ValueError(f"{self.path} is not an inverse-image table")
        if d != net.dimension or n != net.n:
            raise ValueError("table was generated for a different net")
        self.L = L
        self.m = m
        self.record_count = count
        self._words = 1 + m * d + d

    def _chunks(self, rows: int = 2_000_000) -> Iterator[np.ndarray]:
        with open(self.path, "rb") as fh:
            fh.seek(_HEADER.size)
            while True:
                raw = fh.read(rows * self._words * 4)
                if not raw:
                    break
                data = np.frombuffer(raw, dtype="<u4")
                yield data.reshape(-1, self._words)

    def preimage_max(self, values: np.ndarray) -> np.ndarray:
        net, d, m = self.net, self.net.dimension, self.m
        out = np.zeros((self.L, net.size), dtype=np.uint8)
        for chunk in self._chunks():
            js = chunk[:, 0].astype(np.int64)
            w: Optional[np.ndarray] = None
            for i in range(m):
                comps = chunk[:, 1 + i * d:1 + (i + 1) * d].astype(np.int64)
                local = net.local_from_grid(net.flatten_components(comps))
                w = values[local] if w is None else np.minimum(w, values[local])
            tcomps = chunk[:, 1 + m * d:].astype(np.int64)
            tgt = net.local_from_grid(net.flatten_components(tcomps))
            # records are sorted by (target, j): runs of a combined key are
            # contiguous, so one reduceat per chunk replaces per-record updates
            key = tgt * (self.L + 1) + js
            starts = np.concatenate([[0], np.flatnonzero(np.diff(key)) + 1])
            groups = np.maximum.reduceat(w, starts)
            jg = js[starts] - 1
            tg = tgt[starts]
            out[jg, tg] = np.maximum(out[jg, tg], groups)
        return out

    def iter_records(self) -> Iterator[tuple[int, tuple, tuple]]:
        d, m = self.net.dimension, self.m
        for chunk in self._chunks():
            for row in chunk:
                src = tuple(tuple(int(c) for c in row[1 + i * d:1 + (i + 1) * d])
                            for i in range(m))
                tgt = tuple(int(c) for c in row[1 + m * d:])
                yield int(row[0]), src, tgt


def generate_inverse_table(spec: SystemSpec, net: Net, backend: str = "ram",
                           path: Optional[Union[str, Path]] = None,
                           budget: Optional[int] = None,
                           diagnostics: Optional[StepDiagnostics] = None) -> InverseImageTable:
    """Enumerate every (map, source m-tuple) over the net and record the
    projected image.  ``backend`` is ``ram`` or ``file`` (``path``
    required for ``file``)."""
    if backend not in ("ram", "file"):
        raise ValueError("backend must be 'ram' or 'file'")
    if backend == "file" and path is None:
        raise ValueError("file backend needs a path")
    if budget is None:
        budget = DEFAULT_TABLE_BUDGET_RAM if backend == "ram" else DEFAULT_TABLE_BUDGET_FILE
    m, L, size = spec.arity, spec.L, net.size
    per_map = size ** m
    if per_map * L > budget:
        hint = "" if backend == "file" else "; the file backend allows larger tables"
        raise BudgetExceededError(
            f"{per_map * L} inverse-table records exceed the budget {budget}{hint}")

    points = net.points()
    orders: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    for map_spec in spec.maps:
        tgt = np.empty(per_map, dtype=np.uint32)
        for start in range(0, per_map, _CHUNK):
            stop = min(start + _CHUNK, per_map)
            linear = np.arange(start, stop, dtype=np.int64)
            inputs = points[start:stop] if m == 1 else _tuple_coords(points, linear, m, size)
            tgt[start:stop] = _apply_and_project(map_spec, net, inputs, diagnostics)
        order = np.argsort(tgt, kind="stable").astype(np.uint32)
        orders.append(order)
        targets.append(tgt[order])
    table = RamInverseTable(net, L, m, orders, targets)
    if backend == "ram":
        return table
    _write_table(table, Path(path))
    return FileInverseTable(path, net)


def _write_table(table: RamInverseTable, path: Path) -> None:
    net, m, d = table.net, table.m, table.net.dimension
    js = np.concatenate([np.full(len(t), j + 1, dtype=np.int64)
                         for j, t in enumerate(table._targets)])
    tgts = np.concatenate(table._targets).astype(np.int64)
    orders = np.concatenate(table._orders).astype(np.int64)
    rank = np.lexsort((orders, js, tgts))
    words = 1 + m * d + d
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PHI_MAGIC, PHI_VERSION, table.L, m, d, net.n, len(rank)))
        size = net.size
        for start in range(0, len(rank), _CHUNK):
            rows = rank[start:start + _CHUNK]
            rec = np.empty((len(rows), words), dtype="<u4")
            rec[:, 0] = js[rows]
            rest = orders[rows]
            for i in range(m - 1, -1, -1):
                rest, digit = rest // size, rest % size
                comps = net.grid_components(net.grid_from_local(digit))
                rec[:, 1 + i * d:1 + (i + 1) * d] = comps
            rec[:, 1 + m * d:] = net.grid_components(net.grid_from_local(tgts[rows]))
            fh.write(rec.tobytes())


def _fuzzy_apply(spec: SystemSpec, table: InverseImageTable,
                 u: DiscreteFuzzySet) -> DiscreteFuzzySet:
    if not spec.is_fuzzy:
        raise ValueError("system has no grey maps")
    if not _nets_match(table.net, u.net):
        raise ValueError("table and fuzzy set live on different nets")
    if table.L != spec.L or table.m != spec.arity:
        raise ValueError("table does not match the system")
    if not u.is_normal:
        raise ValueError("input fuzzy set must be normal (some membership = 1)")
    inner = table.preimage_max(u.values)
    out = np.zeros(u.net.size, dtype=np.uint8)
    for j in range(spec.L):
        np.maximum(out, grey_lut(spec.grey[j])[inner[j]], out=out)
    return DiscreteFuzzySet(u.net, out)


def fuzzy_step(spec: SystemSpec, table: InverseImageTable,
               u: DiscreteFuzzySet) -> DiscreteFuzzySet:
    """One step of the discrete fuzzy Hutchinson operator (arity 1):
    v(x) = max_j rho_j(max{u(z) : record (j, z, x)}), empty max = 0."""
    if spec.arity != 1:
        raise ValueError("fuzzy_step requires arity 1; use generalized_fuzzy_step")
    return _fuzzy_apply(spec, table, u)


def generalized_fuzzy_step(spec: SystemSpec, table: InverseImageTable,
                           u: DiscreteFuzzySet) -> DiscreteFuzzySet:
    """Arity-m fuzzy step; source membership is the min over the m-tuple
    (the fuzzy product), then as in the arity-1 step."""
    return _fuzzy_apply(spec, table, u)
