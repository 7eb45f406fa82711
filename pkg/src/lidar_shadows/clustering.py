"""Deterministic DBSCAN with hash-grid neighbour search.

The result reproduces the classic scan-order algorithm exactly: clusters are
seeded by the first unassigned core point in input order, and a border point
joins the first cluster that reaches it. Cluster indices are then renumbered
by the lexicographically smallest member coordinate.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

NOISE = -1
METRICS = ("euclidean_3d", "euclidean_2d", "chebyshev_grid")

# Buckets are enlarged by this relative margin so that float rounding in the
# floor division can never separate two points that are within eps.
_BUCKET_MARGIN = 1e-9


@dataclass(frozen=True)
class DbscanParams:
    eps: float
    min_pts: int
    metric: str = "euclidean_3d"

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; expected one of {METRICS}")


@dataclass
class ClusterLabels:
    assignment: np.ndarray  # int64, NOISE or cluster index
    core_flags: np.ndarray  # bool
    n_clusters: int = field(default=0)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def clusters(self) -> list[np.ndarray]:
        return [self.members(k) for k in range(self.n_clusters)]


def _coords(items, metric: str) -> np.ndarray:
    a = np.asarray(items, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(0, 3)
    if metric == "euclidean_3d":
        return a[:, :3]
    if metric == "euclidean_2d":
        return a[:, :2]
    return a


def _within(diff: np.ndarray, eps: float, metric: str) -> np.ndarray:
    if metric == "chebyshev_grid":
        return np.abs(diff).max(axis=-1) <= eps
    return np.einsum("...i,...i->...", diff, diff) <= eps * eps


class GridIndex:
    """Hash grid with bucket size eps for single radius queries."""

    def __init__(self, items, eps: float, metric: str = "euclidean_3d"):
        self.metric = metric
        self.eps = float(eps)
        self.coords = _coords(items, metric)
        self.size = self.eps * (1.0 + _BUCKET_MARGIN)
        self.buckets: dict[tuple, list[int]] = defaultdict(list)
        keys = np.floor(self.coords / self.size).astype(np.int64)
        for i, k in enumerate(map(tuple, keys)):
            self.buckets[k].append(i)
        self._offsets = list(itertools.product((-1, 0, 1), repeat=self.coords.shape[1]))

    def query(self, center) -> list[int]:
        c = np.asarray(center, dtype=np.float64)[: self.coords.shape[1]]
        key = np.floor(c / self.size).astype(np.int64)
        cand: list[int] = []
        for off in self._offsets:
            cand.extend(self.buckets.get(tuple(key + off), ()))
        if not cand:
            return []
        cand_arr = np.array(sorted(cand), dtype=np.int64)
        ok = _within(self.coords[cand_arr] - c, self.eps, self.metric)
        return cand_arr[ok].tolist()


def region_query(items, center, eps: float, metric: str = "euclidean_3d") -> set[int]:
    return set(GridIndex(items, eps, metric).query(center))


def _pack(cells: np.ndarray, pad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mixed-radix integer keys for cell tuples, padded so offsets up to ``pad`` never wrap."""
    lo = cells.min(axis=0) - pad
    span = cells.max(axis=0) - lo + pad + 1
    radix = np.concatenate([[1], np.cumprod(span[:0:-1])])[::-1]
    return (cells - lo) @ radix, radix, lo


def neighbor_pairs(coords: np.ndarray, eps: float, metric: str,
                   rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (i, j) within eps, self-pairs included, via a sorted hash grid.

    ``rows`` restricts the query side to a subset of indices.
    """
    n, d = coords.shape
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    if n == 0 or rows.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    size = eps * (1.0 + _BUCKET_MARGIN)
    cells = np.floor(coords / size).astype(np.int64)
    keys, radix, _ = _pack(cells, 1)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    qkeys = keys[rows]

    out_i, out_j = [], []
    for off in itertools.product((-1, 0, 1), repeat=d):
        nkeys = qkeys + np.asarray(off, dtype=np.int64) @ radix
        start = np.searchsorted(sorted_keys, nkeys, side="left")
        counts = np.searchsorted(sorted_keys, nkeys, side="right") - start
        total = int(counts.sum())
        if total == 0:
            continue
        i = np.repeat(rows, counts)
        base = np.repeat(start - np.cumsum(counts) + counts, counts)
        j = order[base + np.arange(total)]
        ok = _within(coords[j] - coords[i], eps, metric)
        out_i.append(i[ok])
        out_j.append(j[ok])
    if not out_i:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(out_i), np.concatenate(out_j)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _fine_grid(coords: np.ndarray, eps: float, metric: str):
    """Cells small enough that any two points sharing one are within eps."""
    d = coords.shape[1]
    side = eps * (1.0 - _BUCKET_MARGIN)
    if metric != "chebyshev_grid":
        side /= math.sqrt(d)
    reach = int(math.ceil(eps / side))
    offsets = []
    for off in itertools.product(range(-reach, reach + 1), repeat=d):
        gap = [max(abs(o) - 1, 0) * side for o in off]
        near = max(gap) if metric == "chebyshev_grid" else math.sqrt(sum(g * g for g in gap))
        if near <= eps:
            offsets.append(off)
    cells = np.floor(coords / side).astype(np.int64)
    return cells, np.array(offsets, dtype=np.int64), reach


def _core_components(coords: np.ndarray, core: np.ndarray, cell_id: np.ndarray,
                     cells: np.ndarray, offsets: np.ndarray, reach: int,
                     eps: float, metric: str) -> np.ndarray:
    """Component label per point (meaningful for cores) by linking fine cells."""
    core_idx = np.flatnonzero(core)
    n_cells = len(cells)
    uf = _UnionFind(n_cells)
    has_core = np.zeros(n_cells, dtype=bool)
    has_core[cell_id[core_idx]] = True
    core_cells = np.flatnonzero(has_core)
    keys, radix, _ = _pack(cells, reach)
    key_order = np.argsort(keys)
    sorted_keys = keys[key_order]

    members: dict[int, np.ndarray] = {}
    order = np.argsort(cell_id[core_idx], kind="stable")
    grouped = core_idx[order]
    bounds = np.searchsorted(cell_id[grouped], core_cells)
    bounds = np.append(bounds, len(grouped))
    for k, c in enumerate(core_cells.tolist()):
        members[c] = grouped[bounds[k]:bounds[k + 1]]

    # Candidate cell pairs, nearest offsets first so union-find can skip most.
    shells = np.abs(offsets).sum(axis=1)
    pairs_a, pairs_b = [], []
    for off in offsets[np.argsort(shells, kind="stable")]:
        if not off.any():
            continue
        nk = keys[core_cells] + off @ radix
        pos = np.minimum(np.searchsorted(sorted_keys, nk), len(sorted_keys) - 1)
        hit = sorted_keys[pos] == nk
        other = key_order[pos[hit]]
        a = core_cells[hit]
        sel = (other > a) & has_core[other]
        pairs_a.append(a[sel])
        pairs_b.append(other[sel])
    if pairs_a:
        for a, b in zip(np.concatenate(pairs_a).tolist(), np.concatenate(pairs_b).tolist()):
            if uf.find(a) == uf.find(b):
                continue
            pa, pb = coords[members[a]], coords[members[b]]
            chunk = max(1, 4096 // max(len(pb), 1))
            for s in range(0, len(pa), chunk):
                diff = pa[s:s + chunk, None, :] - pb[None, :, :]
                if _within(diff, eps, metric).any():
                    uf.union(a, b)
                    break
    roots = np.array([uf.find(c) for c in range(n_cells)], dtype=np.int64)
    return roots[cell_id]


def canonical_order(coords: np.ndarray, assignment: np.ndarray, n_clusters: int) -> np.ndarray:
    """Map old cluster index -> new index, ordered by lexicographic min member."""
    if n_clusters == 0:
        return np.empty(0, dtype=np.int64)
    lex = np.lexsort(coords.T[::-1])
    seen: list[int] = []
    marked = np.zeros(n_clusters, dtype=bool)
    for lab in assignment[lex]:
        if lab >= 0 and not marked[lab]:
            marked[lab] = True
            seen.append(int(lab))
            if len(seen) == n_clusters:
                break
    remap = np.empty(n_clusters, dtype=np.int64)
    remap[np.array(seen)] = np.arange(n_clusters)
    return remap


def dbscan(items, params: DbscanParams) -> ClusterLabels:
    coords = _coords(items, params.metric)
    n = len(coords)
    eps, metric, min_pts = params.eps, params.metric, params.min_pts
    assignment = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return ClusterLabels(assignment, np.empty(0, dtype=bool), 0)

    cells, offsets, reach = _fine_grid(coords, eps, metric)
    uniq, cell_id, pop = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    cell_id = cell_id.ravel()
    # Every point of a well-populated cell is core; others are counted explicitly.
    dense = pop[cell_id] >= min_pts
    sparse_rows = np.flatnonzero(~dense)
    rows, cols = neighbor_pairs(coords, eps, metric, rows=sparse_rows)
    core = dense.copy()
    if sparse_rows.size:
        counts = np.bincount(rows, minlength=n)
        core[sparse_rows] = counts[sparse_rows] >= min_pts

    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return ClusterLabels(assignment, core, 0)
    comp = _core_components(coords, core, cell_id, uniq, offsets, reach, eps, metric)

    # Scan order: the cluster whose earliest core point comes first is created first.
    comp_core = comp[core_idx]
    _, first = np.unique(comp_core, return_index=True)
    creation = comp_core[np.sort(first)]
    rank = np.full(int(comp.max()) + 1, -1, dtype=np.int64)
    rank[creation] = np.arange(len(creation))
    assignment[core_idx] = rank[comp_core]

    # Border points join the earliest-created cluster among adjacent cores.
    link = core[cols] & ~core[rows]
    if link.any():
        big = np.iinfo(np.int64).max
        best = np.full(n, big, dtype=np.int64)
        np.minimum.at(best, rows[link], rank[comp[cols[link]]])
        border = np.flatnonzero(best != big)
        assignment[border] = best[border]

    k = len(creation)
    remap = canonical_order(coords, assignment, k)
    labelled = assignment >= 0
    assignment[labelled] = remap[assignment[labelled]]
    return ClusterLabels(assignment, core, k)
