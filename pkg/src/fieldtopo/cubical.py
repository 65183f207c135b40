"""Cubical superlevel-set topology on vertex grids.

A scalar field sampled on a vertex grid induces, for each level u, the
cubical complex of all grid cells (vertices, edges, squares, cubes) whose
corner values all sit at or above u. Cells are valued by the minimum over
their corners, so the family over decreasing u is a filtration. Ties are
broken by a total order on vertices (descending value, then ascending or
descending linear index), which makes every construction here deterministic
and lets tests check invariance of the nonzero persistence pairs under the
choice of tie rule.

Conventions:

* a pair (birth b, death dd) is alive at level u iff b >= u > dd;
* essential classes carry death = -inf;
* pairs with b == dd are dropped at diagram construction and never counted;
* "interior" means the feature's connected component (tracked through
  vertices and edges) does not meet the boundary of the sampling window.
  Curves evaluate interiority at the probe level; diagrams additionally
  store a flag evaluated at the birth level.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._hot import (
    component_stats,
    component_sweep,
    flood_fill_stats,
    label_components,
    pair_sweep,
    reduce_boundary,
)
from .errors import GeometryError
from .geometry import boundary_vertex_mask

TIE_RULES = ("asc", "desc")


def _as_field(values) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if arr.ndim not in (1, 2, 3):
        raise GeometryError(f"only 1-3 dimensional grids are supported, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("field values must be finite")
    return arr


def _vertex_order(flat: np.ndarray, tie: str) -> np.ndarray:
    idx = np.arange(flat.size, dtype=np.int64)
    if tie == "asc":
        return np.lexsort((idx, -flat)).astype(np.int64)
    if tie == "desc":
        return np.lexsort((-idx, -flat)).astype(np.int64)
    raise ValueError(f"tie rule must be one of {TIE_RULES}, got {tie!r}")


def _boundary_flat(shape) -> np.ndarray:
    return boundary_vertex_mask(shape).ravel().astype(np.uint8)


def local_maxima(values) -> np.ndarray:
    """Boolean mask of vertices whose value >= every axis neighbor."""
    arr = _as_field(values)
    out = np.ones(arr.shape, dtype=bool)
    for ax in range(arr.ndim):
        lead = [slice(None)] * arr.ndim
        lag = [slice(None)] * arr.ndim
        lead[ax] = slice(0, -1)
        lag[ax] = slice(1, None)
        a = arr[tuple(lead)]
        b = arr[tuple(lag)]
        out[tuple(lead)] &= a >= b
        out[tuple(lag)] &= b >= a
    return out


@dataclass(frozen=True)
class CubicalFiltration:
    """All cells of a vertex grid, sorted by (enter rank, dim, id)."""

    shape: tuple
    tie: str
    vertex_values: np.ndarray  # flat, C order
    order: np.ndarray  # vertex ids, descending value
    cell_dim: np.ndarray  # per sorted cell
    cell_value: np.ndarray
    cell_anchor: np.ndarray  # max-rank corner vertex id
    edge_u: np.ndarray  # endpoint vertex ids where dim == 1, else -1
    edge_v: np.ndarray
    indptr: np.ndarray  # GF(2) boundary matrix, CSR over sorted positions
    indices: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.cell_dim.size)

    @property
    def dim(self) -> int:
        return len(self.shape)


def build_filtration(values, tie: str = "asc") -> CubicalFiltration:
    arr = _as_field(values)
    shape = arr.shape
    d = arr.ndim
    V = arr.size
    flat = arr.ravel()
    order = _vertex_order(flat, tie)
    rank = np.empty(V, dtype=np.int64)
    rank[order] = np.arange(V, dtype=np.int64)
    rank_nd = rank.reshape(shape)
    lin_nd = np.arange(V, dtype=np.int64).reshape(shape)

    n_masks = 1 << d
    mask_shape = []
    mask_size = np.empty(n_masks, dtype=np.int64)
    for m in range(n_masks):
        ms = tuple(shape[a] - ((m >> a) & 1) for a in range(d))
        mask_shape.append(ms)
        mask_size[m] = int(np.prod(ms))
    mask_offset = np.zeros(n_masks + 1, dtype=np.int64)
    mask_offset[1:] = np.cumsum(mask_size)
    n_cells = int(mask_offset[-1])

    dim_g = np.empty(n_cells, dtype=np.int64)
    rank_g = np.empty(n_cells, dtype=np.int64)
    value_g = np.empty(n_cells, dtype=np.float64)
    anchor_g = np.empty(n_cells, dtype=np.int64)
    edge_u_g = np.full(n_cells, -1, dtype=np.int64)
    edge_v_g = np.full(n_cells, -1, dtype=np.int64)
    facet_blocks = []  # (mask, global ids, facet global ids (M, 2k))

    for m in range(n_masks):
        axes = [a for a in range(d) if (m >> a) & 1]
        k = len(axes)
        ms = mask_shape[m]
        lo, hi = int(mask_offset[m]), int(mask_offset[m + 1])
        corners_v = []
        corners_r = []
        corners_i = []
        for s in range(1 << k):
            sl = [slice(0, ms[a]) for a in range(d)]
            for bi, a in enumerate(axes):
                if (s >> bi) & 1:
                    sl[a] = slice(1, 1 + ms[a])
            sl = tuple(sl)
            corners_v.append(arr[sl].reshape(-1))
            corners_r.append(rank_nd[sl].reshape(-1))
            corners_i.append(lin_nd[sl].reshape(-1))
        vs = np.stack(corners_v)
        rs = np.stack(corners_r)
        ids = np.stack(corners_i)
        am = rs.argmax(axis=0)
        cols = np.arange(vs.shape[1])
        dim_g[lo:hi] = k
        rank_g[lo:hi] = rs[am, cols]
        value_g[lo:hi] = vs.min(axis=0)
        anchor_g[lo:hi] = ids[am, cols]
        if k == 1:
            edge_u_g[lo:hi] = corners_i[0]
            edge_v_g[lo:hi] = corners_i[1]
        if k >= 1:
            coords = np.indices(ms).reshape(d, -1)
            fac = np.empty((coords.shape[1], 2 * k), dtype=np.int64)
            for fi, a in enumerate(axes):
                m2 = m & ~(1 << a)
                ms2 = mask_shape[m2]
                fac[:, 2 * fi] = mask_offset[m2] + np.ravel_multi_index(coords, ms2)
                shifted = coords.copy()
                shifted[a] += 1
                fac[:, 2 * fi + 1] = mask_offset[m2] + np.ravel_multi_index(shifted, ms2)
            facet_blocks.append((m, np.arange(lo, hi, dtype=np.int64), fac))

    sort_idx = np.lexsort((np.arange(n_cells), dim_g, rank_g)).astype(np.int64)
    pos_of_id = np.empty(n_cells, dtype=np.int64)
    pos_of_id[sort_idx] = np.arange(n_cells, dtype=np.int64)

    counts = 2 * dim_g[sort_idx]
    indptr = np.zeros(n_cells + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(counts)
    indices = np.empty(int(indptr[-1]), dtype=np.int64)
    for _, gids, fac in facet_blocks:
        pos = pos_of_id[gids]
        rows = np.sort(pos_of_id[fac], axis=1)
        dest = indptr[pos][:, None] + np.arange(rows.shape[1])[None, :]
        indices[dest] = rows

    return CubicalFiltration(
        shape=shape,
        tie=tie,
        vertex_values=flat,
        order=order,
        cell_dim=dim_g[sort_idx],
        cell_value=value_g[sort_idx],
        cell_anchor=anchor_g[sort_idx],
        edge_u=edge_u_g[sort_idx],
        edge_v=edge_v_g[sort_idx],
        indptr=indptr,
        indices=indices,
    )


@dataclass(frozen=True)
class PersistenceDiagram:
    """Nonzero and essential superlevel persistence pairs of one field."""

    shape: tuple
    tie: str
    dims: np.ndarray
    births: np.ndarray
    deaths: np.ndarray  # -inf marks essential classes
    interior_at_birth: np.ndarray  # uint8, component interiority at birth level
    n_cells: int
    n_zero_pairs: int

    @property
    def n_pairs(self) -> int:
        return int(self.dims.size)

    def alive_count(self, u: float, q: int, interior: bool = False) -> int:
        sel = (self.dims == q) & (self.births >= u) & (self.deaths < u)
        if interior:
            sel &= self.interior_at_birth == 1
        return int(np.count_nonzero(sel))

    def persistent_rank(self, u_minus: float, u_plus: float, q: int) -> int:
        """Rank of the map on degree-q homology from level u_plus to u_minus."""
        if u_minus > u_plus:
            raise ValueError("need u_minus <= u_plus")
        sel = (self.dims == q) & (self.births >= u_plus) & (self.deaths < u_minus)
        return int(np.count_nonzero(sel))

    def persistent_ranks(self, rectangles: np.ndarray, q: int) -> np.ndarray:
        """Vectorized persistent_rank over rows (u_minus, u_plus)."""
        rect = np.asarray(rectangles, dtype=np.float64)
        if rect.ndim != 2 or rect.shape[1] != 2:
            raise ValueError("rectangles must be an (n, 2) array")
        if np.any(rect[:, 0] > rect[:, 1]):
            raise ValueError("need u_minus <= u_plus in every row")
        sel = self.dims == q
        b = self.births[sel]
        dd = self.deaths[sel]
        out = np.empty(rect.shape[0], dtype=np.int64)
        for i in range(rect.shape[0]):
            out[i] = np.count_nonzero((b >= rect[i, 1]) & (dd < rect[i, 0]))
        return out

    def to_rows(self):
        """Rows (dim, birth, death, interior) for serialization."""
        return [
            (int(self.dims[i]), float(self.births[i]), float(self.deaths[i]),
             int(self.interior_at_birth[i]))
            for i in range(self.n_pairs)
        ]


def _diagram_marks(filt: CubicalFiltration):
    """Reduce the boundary matrix and mark birth/death events per pair."""
    pivot_of_row, cleared = reduce_boundary(filt.indptr, filt.indices, filt.n_cells)
    rows = np.nonzero(pivot_of_row >= 0)[0]
    cols = pivot_of_row[rows]
    births = filt.cell_value[rows]
    deaths = filt.cell_value[cols]
    keep = births > deaths
    n_zero = int(np.count_nonzero(~keep))
    essential = np.nonzero((cleared == 1) & (pivot_of_row < 0))[0]

    birth_pos = np.concatenate([rows[keep], essential])
    death_pos = np.concatenate([cols[keep], np.full(essential.size, -1, dtype=np.int64)])
    srt = np.argsort(birth_pos, kind="stable")
    birth_pos = birth_pos[srt]
    death_pos = death_pos[srt]

    n_pairs = birth_pos.size
    birth_mark = np.full(filt.n_cells, -1, dtype=np.int64)
    death_mark = np.full(filt.n_cells, -1, dtype=np.int64)
    birth_mark[birth_pos] = np.arange(n_pairs, dtype=np.int64)
    has_death = death_pos >= 0
    death_mark[death_pos[has_death]] = np.arange(n_pairs, dtype=np.int64)[has_death]

    pair_dim = filt.cell_dim[birth_pos]
    pair_birth = filt.cell_value[birth_pos]
    pair_death = np.where(has_death, filt.cell_value[np.where(has_death, death_pos, 0)], -np.inf)
    pair_anchor = filt.cell_anchor[birth_pos]
    return birth_mark, death_mark, pair_dim, pair_birth, pair_death, pair_anchor, n_zero


def _event_arrays(filt: CubicalFiltration):
    kind = np.where(filt.cell_dim == 0, 0, np.where(filt.cell_dim == 1, 1, 2))
    v1 = np.where(filt.cell_dim == 0, filt.cell_anchor, filt.edge_u)
    v2 = filt.edge_v
    return kind.astype(np.int64), v1.astype(np.int64), v2.astype(np.int64)


def persistence_diagram(values, tie: str = "asc",
                        filtration: CubicalFiltration | None = None) -> PersistenceDiagram:
    filt = filtration if filtration is not None else build_filtration(values, tie)
    (birth_mark, death_mark, pair_dim, pair_birth, pair_death,
     pair_anchor, n_zero) = _diagram_marks(filt)
    kind, v1, v2 = _event_arrays(filt)
    boundary = _boundary_flat(filt.shape)
    no_levels = np.empty(0, dtype=np.float64)
    res = pair_sweep(
        kind, v1, v2, filt.cell_value, birth_mark, death_mark,
        np.zeros(pair_dim.size, dtype=np.uint8), pair_anchor,
        filt.vertex_values.size, boundary, no_levels,
    )
    return PersistenceDiagram(
        shape=filt.shape,
        tie=filt.tie,
        dims=pair_dim.astype(np.int64),
        births=pair_birth,
        deaths=pair_death,
        interior_at_birth=res[6],
        n_cells=filt.n_cells,
        n_zero_pairs=n_zero,
    )


@dataclass(frozen=True)
class BettiPath:
    """Degree-q Betti counts sampled on an ascending level grid.

    ``pos`` and ``neg`` split the count into its monotone parts: scanning
    levels downward, positive jumps accumulate into pos and negative jumps
    into neg, so count = pos - neg pointwise and both parts are
    non-increasing in u. Interior variants count only features whose
    component at the probe level avoids the window boundary.
    """

    q: int
    levels: np.ndarray
    count: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    interior_count: np.ndarray
    interior_pos: np.ndarray
    interior_neg: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.count, self.pos - self.neg):
            raise AssertionError("betti path decomposition violated")
        if not np.array_equal(self.interior_count, self.interior_pos - self.interior_neg):
            raise AssertionError("interior betti path decomposition violated")


def _check_levels(levels) -> np.ndarray:
    lv = np.asarray(levels, dtype=np.float64)
    if lv.ndim != 1 or lv.size == 0:
        raise ValueError("levels must be a nonempty 1d array")
    if np.any(np.diff(lv) <= 0):
        raise ValueError("levels must be strictly ascending")
    return lv


def betti_curve(values, levels, q: int = 0, tie: str = "asc",
                filtration: CubicalFiltration | None = None) -> BettiPath:
    """Sample beta_q of superlevel complexes on a level grid.

    q = 0 runs a single union-find sweep over vertices; q >= 1 reduces the
    boundary matrix once and walks the filtration tracking alive pairs.
    """
    lv = _check_levels(levels)
    if q < 0:
        raise ValueError("q must be nonnegative")
    if q == 0 and filtration is None:
        arr = _as_field(values)
        flat = arr.ravel()
        order = _vertex_order(flat, tie)
        shape = np.asarray(arr.shape, dtype=np.int64)
        boundary = _boundary_flat(arr.shape)
        f, fp, fn, i, ip, in_ = component_sweep(order, flat, shape, boundary, lv)
        return BettiPath(q=0, levels=lv, count=f, pos=fp, neg=fn,
                         interior_count=i, interior_pos=ip, interior_neg=in_)

    filt = filtration if filtration is not None else build_filtration(values, tie)
    (birth_mark, death_mark, pair_dim, _, _, pair_anchor, _) = _diagram_marks(filt)
    kind, v1, v2 = _event_arrays(filt)
    boundary = _boundary_flat(filt.shape)
    is_q = (pair_dim == q).astype(np.uint8)
    f, fp, fn, i, ip, in_, _ = pair_sweep(
        kind, v1, v2, filt.cell_value, birth_mark, death_mark,
        is_q, pair_anchor, filt.vertex_values.size, boundary, lv,
    )
    return BettiPath(q=q, levels=lv, count=f, pos=fp, neg=fn,
                     interior_count=i, interior_pos=ip, interior_neg=in_)


def betti_at(values, u: float, q: int = 0, interior: bool = False) -> int:
    """beta_q of the superlevel complex at a single level."""
    if q == 0:
        return components_at_level(values, u, interior=interior)
    path = betti_curve(values, np.asarray([u], dtype=np.float64), q=q)
    return int(path.interior_count[0] if interior else path.count[0])


def persistent_betti_components(values, u_minus: float, u_plus: float,
                                interior: bool = False) -> int:
    """Degree-0 persistent rank by labeling, no matrix reduction.

    Counts components of {F >= u_minus} that contain a vertex with
    F >= u_plus; with ``interior`` only components avoiding the window
    boundary count.
    """
    if u_minus > u_plus:
        raise ValueError("need u_minus <= u_plus")
    arr = _as_field(values)
    flat = arr.ravel()
    mask = flat >= u_minus
    labels, _ = label_components(mask.astype(np.uint8),
                                 np.asarray(arr.shape, dtype=np.int64))
    hit = np.unique(labels[(labels >= 0) & (flat >= u_plus)])
    if not interior:
        return int(hit.size)
    boundary = _boundary_flat(arr.shape).astype(bool)
    touched = np.unique(labels[(labels >= 0) & boundary])
    return int(np.setdiff1d(hit, touched, assume_unique=True).size)


def persistent_betti(values, u_minus: float, u_plus: float, q: int = 0,
                     diagram: PersistenceDiagram | None = None) -> int:
    """Rank of H_q(E(u_plus)) -> H_q(E(u_minus)), u_minus <= u_plus."""
    if diagram is not None:
        return diagram.persistent_rank(u_minus, u_plus, q)
    if q == 0:
        return persistent_betti_components(values, u_minus, u_plus)
    return persistence_diagram(values).persistent_rank(u_minus, u_plus, q)


def euler_curve(values, levels) -> np.ndarray:
    """Euler characteristic of superlevel complexes on a level grid.

    Needs no reduction: chi(u) = sum over dims q of (-1)^q #{q-cells with
    value >= u}, evaluated by binary search in sorted per-dim cell values.
    """
    arr = _as_field(values)
    lv = _check_levels(levels)
    d = arr.ndim
    shape = arr.shape
    out = np.zeros(lv.size, dtype=np.int64)
    for m in range(1 << d):
        axes = [a for a in range(d) if (m >> a) & 1]
        k = len(axes)
        ms = tuple(shape[a] - ((m >> a) & 1) for a in range(d))
        vals = None
        for s in range(1 << k):
            sl = [slice(0, ms[a]) for a in range(d)]
            for bi, a in enumerate(axes):
                if (s >> bi) & 1:
                    sl[a] = slice(1, 1 + ms[a])
            piece = arr[tuple(sl)]
            vals = piece if vals is None else np.minimum(vals, piece)
        sv = np.sort(vals.ravel())
        alive = sv.size - np.searchsorted(sv, lv, side="left")
        out += (1 if k % 2 == 0 else -1) * alive
    return out


def euler_at(values, u: float) -> int:
    return int(euler_curve(values, np.asarray([u], dtype=np.float64))[0])


@dataclass(frozen=True)
class ComponentRecord:
    """One connected component of a superlevel set of vertices."""

    level: float
    root: tuple
    reference_vertex: tuple  # the component's maximum vertex (ties by scan order)
    size: int
    touches_boundary: bool
    bbox_lo: tuple
    bbox_hi: tuple

    def extent(self) -> tuple:
        """Per-axis vertex-index extent of the bounding box."""
        return tuple(int(h - l) for l, h in zip(self.bbox_lo, self.bbox_hi))

    def diameter(self, spacing: float) -> float:
        """Sup-norm diameter upper bound in physical units."""
        return float(max(self.extent()) * spacing)


def components_at_level(values, u: float, interior: bool = False) -> int:
    arr = _as_field(values)
    mask = (arr.ravel() >= u).astype(np.uint8)
    shape = np.asarray(arr.shape, dtype=np.int64)
    labels, n = label_components(mask, shape)
    if not interior:
        return int(n)
    boundary = _boundary_flat(arr.shape).astype(bool)
    touched = np.unique(labels[(labels >= 0) & boundary])
    return int(n - touched.size)


def _component_max_vertices(labels: np.ndarray, flat: np.ndarray):
    """Per label (ascending), the flat id of its maximum-value vertex.

    Ties resolve to the smallest flat id, matching the "asc" scan order.
    Returns (sorted label roots, reference flat ids aligned with them).
    """
    on = np.nonzero(labels >= 0)[0]
    order = on[np.lexsort((on, -flat[on]))]
    roots, first = np.unique(labels[order], return_index=True)
    return roots, order[first]


def component_records(values, u: float) -> list:
    """Records for every component of {F >= u}, ordered by root vertex id."""
    arr = _as_field(values)
    shape = arr.shape
    flat = arr.ravel()
    mask = (flat >= u).astype(np.uint8)
    labels, _ = label_components(mask, np.asarray(shape, dtype=np.int64))
    boundary = _boundary_flat(shape)
    zeros = np.zeros(flat.size, dtype=np.uint8)
    roots, sizes, touch, _, lo, hi = component_stats(
        labels, np.asarray(shape, dtype=np.int64), boundary, zeros
    )
    ref_roots, refs = _component_max_vertices(labels, flat)
    assert np.array_equal(ref_roots, roots)
    out = []
    for k in range(roots.size):
        out.append(ComponentRecord(
            level=float(u),
            root=tuple(int(c) for c in np.unravel_index(int(roots[k]), shape)),
            reference_vertex=tuple(int(c) for c in np.unravel_index(int(refs[k]), shape)),
            size=int(sizes[k]),
            touches_boundary=bool(touch[k]),
            bbox_lo=tuple(int(c) for c in lo[k]),
            bbox_hi=tuple(int(c) for c in hi[k]),
        ))
    return out


def component_containing(values, u: float, start: Sequence[int]):
    """Record for the component of {F >= u} containing ``start``, or None."""
    arr = _as_field(values)
    shape = arr.shape
    start_idx = tuple(int(c) for c in start)
    if len(start_idx) != arr.ndim:
        raise GeometryError("start index dimension mismatch")
    for c, m in zip(start_idx, shape):
        if not 0 <= c < m:
            raise GeometryError(f"start index {start_idx} outside grid {shape}")
    flat_start = int(np.ravel_multi_index(start_idx, shape))
    found, touches, size, lo, hi = flood_fill_stats(
        arr.ravel(), np.asarray(shape, dtype=np.int64), float(u), flat_start
    )
    if not found:
        return None
    flat = arr.ravel()
    mask = (flat >= u).astype(np.uint8)
    labels, _ = label_components(mask, np.asarray(shape, dtype=np.int64))
    root = int(labels[flat_start])
    members = np.nonzero(labels == root)[0]
    ref = int(members[np.lexsort((members, -flat[members]))[0]])
    return ComponentRecord(
        level=float(u),
        root=tuple(int(c) for c in np.unravel_index(root, shape)),
        reference_vertex=tuple(int(c) for c in np.unravel_index(ref, shape)),
        size=int(size),
        touches_boundary=bool(touches),
        bbox_lo=tuple(int(c) for c in lo),
        bbox_hi=tuple(int(c) for c in hi),
    )


def split_monotone(path: BettiPath, interior: bool = False):
    """The positive/negative monotone parts of a sampled Betti path.

    Returns (pos, neg): both are non-increasing in the level and their
    difference reproduces the sampled counts exactly.
    """
    if interior:
        return path.interior_pos.copy(), path.interior_neg.copy()
    return path.pos.copy(), path.neg.copy()


def critical_values(values) -> np.ndarray:
    """Ascending distinct vertex values: the discrete critical-level set.

    Every level at which the complex of {F >= u} changes is a vertex value,
    so every jump of every Betti path lies in this list.
    """
    arr = _as_field(values)
    return np.unique(arr.ravel())


def betti_jump_levels(values, q: int = 0, tie: str = "asc",
                      diagram: PersistenceDiagram | None = None) -> np.ndarray:
    """Exact levels where u -> beta_q({F >= u}) jumps, descending scan.

    A level v carries a jump iff the number of dimension-q births at v
    differs from the number of deaths at v (zero-persistence pairs are
    already dropped from the diagram).
    """
    dg = diagram if diagram is not None else persistence_diagram(values, tie=tie)
    sel = dg.dims == q
    births = dg.births[sel]
    deaths = dg.deaths[sel]
    deaths = deaths[np.isfinite(deaths)]
    cand = np.unique(np.concatenate([births, deaths]))
    n_birth = np.searchsorted(np.sort(births), cand, side="right") - \
        np.searchsorted(np.sort(births), cand, side="left")
    n_death = np.searchsorted(np.sort(deaths), cand, side="right") - \
        np.searchsorted(np.sort(deaths), cand, side="left")
    return cand[n_birth != n_death]
