"""Spatial weight structures: distance matrices, KNN and contiguity graphs,
and the kernel specification used by the local regression engines."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .data import ObservationTable
from .errors import GwrlabError

VALID_FAMILIES = ("bisquare", "gaussian")
VALID_MODES = ("adaptive", "fixed")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth mode.

    Adaptive bandwidths are nearest-neighbour counts (the k-th nearest
    point, counting the location itself, sets the truncation distance);
    fixed bandwidths are distances in the units of the coordinates. The
    bandwidth value may be left None and supplied or selected at fit time.
    """

    family: str = "bisquare"
    mode: str = "adaptive"
    bandwidth: float | int | None = None

    def __post_init__(self):
        if self.family not in VALID_FAMILIES:
            raise ValueError(f"kernel family must be one of {VALID_FAMILIES}")
        if self.mode not in VALID_MODES:
            raise ValueError(f"kernel mode must be one of {VALID_MODES}")
        if self.bandwidth is not None:
            if self.mode == "fixed" and not self.bandwidth > 0:
                raise ValueError("fixed bandwidth must be positive")
            if self.mode == "adaptive" and int(self.bandwidth) < 1:
                raise ValueError("adaptive bandwidth must be a positive neighbour count")

    @property
    def adaptive(self) -> bool:
        return self.mode == "adaptive"

    def with_bandwidth(self, bandwidth) -> "KernelSpec":
        return replace(self, bandwidth=bandwidth)

    @property
    def family_code(self) -> int:
        return kernels.family_code(self.family)


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    """Dense symmetric Euclidean distance matrix in coordinate units."""
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("coords must be an (n, 2) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("coordinates must be finite")
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dy = pts[:, 1][:, None] - pts[:, 1][None, :]
    D = np.sqrt(dx * dx + dy * dy)
    np.fill_diagonal(D, 0.0)
    return D


def bandwidth_distances(D_sorted: np.ndarray, spec: KernelSpec,
                        bandwidth=None) -> np.ndarray:
    """Per-location truncation distances for a spec (adaptive or fixed)."""
    bw = spec.bandwidth if bandwidth is None else bandwidth
    if bw is None:
        raise ValueError("kernel bandwidth is unset")
    n = D_sorted.shape[0]
    if spec.adaptive:
        return kernels.adaptive_bw_distances(D_sorted, int(bw))
    return np.full(n, float(bw))


def kernel_weights_at(i: int, spec: KernelSpec, distances: np.ndarray,
                      bandwidth=None) -> np.ndarray:
    """Kernel weight vector at location i given the full distance matrix."""
    D = np.asarray(distances, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("distances must be the full n x n matrix")
    bw = spec.bandwidth if bandwidth is None else bandwidth
    if bw is None:
        raise ValueError("kernel bandwidth is unset")
    if spec.adaptive:
        k = int(bw)
        n = D.shape[0]
        if not 1 <= k <= n:
            raise ValueError(f"adaptive neighbour count k={k} outside [1, {n}]")
        b = np.sort(D[i])[k - 1] * kernels.BW_EPS
    else:
        b = float(bw)
    return kernels.kernel_weights(D[i], b, spec.family_code)


class SpatialWeights:
    """Sparse neighbour weights over the ordered units of a table.

    style is "binary" or "row" (row-standardized: each nonempty row sums
    to 1). includes_self marks the self-inclusive variant used by Gi*.
    """

    def __init__(self, matrix: sp.spmatrix, ids: Sequence[str],
                 style: str = "binary", includes_self: bool = False):
        m = sp.csr_matrix(matrix, dtype=np.float64)
        m.eliminate_zeros()
        if m.shape[0] != m.shape[1]:
            raise ValueError("weight matrix must be square")
        if len(ids) != m.shape[0]:
            raise ValueError("id count does not match matrix size")
        if m.nnz and m.data.min() < 0:
            raise ValueError("negative weights are not allowed")
        diag = m.diagonal()
        if not includes_self and np.any(diag != 0):
            raise ValueError("self-loops present but includes_self is False")
        if style not in ("binary", "row"):
            raise ValueError("style must be 'binary' or 'row'")
        if style == "row":
            sums = np.asarray(m.sum(axis=1)).ravel()
            occupied = sums != 0
            if np.any(np.abs(sums[occupied] - 1.0) > 1e-12):
                raise ValueError("row-standardized rows must sum to 1")
        self.matrix = m
        self.ids = tuple(str(i) for i in ids)
        self.style = style
        self.includes_self = includes_self

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def s0(self) -> float:
        return float(self.matrix.sum())

    @property
    def s1(self) -> float:
        t = self.matrix + self.matrix.T
        return float(t.multiply(t).sum()) / 2.0

    @property
    def s2(self) -> float:
        r = np.asarray(self.matrix.sum(axis=1)).ravel()
        c = np.asarray(self.matrix.sum(axis=0)).ravel()
        return float(np.sum((r + c) ** 2))

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def neighbor_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def islands(self) -> tuple[str, ...]:
        counts = self.neighbor_counts()
        return tuple(self.ids[i] for i in np.nonzero(counts == 0)[0])

    def row_standardized(self) -> "SpatialWeights":
        sums = self.row_sums()
        inv = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 0.0)
        m = sp.diags(inv) @ self.matrix
        return SpatialWeights(m, self.ids, style="row", includes_self=self.includes_self)

    def with_self(self) -> "SpatialWeights":
        """Binary self-inclusive variant (the Gi* 'star' weighting)."""
        m = self.matrix.copy()
        m.data = np.ones_like(m.data)
        m = m + sp.eye(self.n, format="csr")
        m.data = np.minimum(m.data, 1.0)
        return SpatialWeights(m, self.ids, style="binary", includes_self=True)

    def to_triplets_csv(self, path: str) -> None:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "w"])
            for idx in order:
                writer.writerow([self.ids[coo.row[idx]], self.ids[coo.col[idx]], repr(float(coo.data[idx]))])

    @classmethod
    def from_triplets_csv(cls, path: str, ids: Sequence[str],
                          style: str = "binary", includes_self: bool = False) -> "SpatialWeights":
        index = {str(v): i for i, v in enumerate(ids)}
        rows, cols, vals = [], [], []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                try:
                    rows.append(index[rec["i"]])
                    cols.append(index[rec["j"]])
                except KeyError as exc:
                    raise GwrlabError(f"triplet references unknown id {exc}") from None
                vals.append(float(rec["w"]))
        n = len(ids)
        m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(m, ids, style=style, includes_self=includes_self)


def _knn_neighbor_lists(D: np.ndarray, k: int) -> tuple[list[np.ndarray], bool]:
    n = D.shape[0]
    neighbors = []
    tie_warning = False
    for i in range(n):
        row = D[i].copy()
        row[i] = np.inf  # self never a KNN neighbour
        # stable tie-break: distance first, then id (row) order
        order = np.lexsort((np.arange(n), row))
        chosen = order[:k]
        if k < n - 1 and row[order[k - 1]] == row[order[k]]:
            tie_warning = True
        neighbors.append(np.sort(chosen))
    return neighbors, tie_warning


def build_knn_weights(table: ObservationTable | np.ndarray, k: int, *,
                      symmetrize: bool = False, row_standardize: bool = False,
                      include_self: bool = False,
                      ids: Sequence[str] | None = None) -> SpatialWeights:
    """Binary k-nearest-neighbour weights from unit locations.

    Equal-distance ties at the k boundary are broken deterministically by
    id (row) order, with a warning. symmetrize makes i~j whenever either
    selects the other.
    """
    if isinstance(table, ObservationTable):
        coords = table.coords
        ids = table.ids
    else:
        coords = np.asarray(table, dtype=np.float64)
        if ids is None:
            ids = [str(i) for i in range(len(coords))]
    n = len(coords)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} outside [1, {n - 1}]")
    D = distance_matrix(coords)
    neighbors, tied = _knn_neighbor_lists(D, k)
    if tied:
        warnings.warn("duplicate distances at the k-th neighbour; ties broken by id order")
    rows = np.repeat(np.arange(n), [len(nb) for nb in neighbors])
    cols = np.concatenate(neighbors)
    m = sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(n, n))
    if symmetrize:
        m = m.maximum(m.T)
    w = SpatialWeights(m, ids, style="binary")
    if include_self:
        w = w.with_self()
    if row_standardize:
        w = w.row_standardized()
    return w


def _ring_edges(ring) -> Iterable[tuple]:
    pts = list(ring)
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    for a, b in zip(pts, pts[1:] + pts[:1]):
        yield (a, b) if a <= b else (b, a)


def build_contiguity_weights(table: ObservationTable, rule: str = "queen", *,
                             row_standardize: bool = False,
                             include_self: bool = False) -> SpatialWeights:
    """Binary contiguity weights from unit polygons.

    queen: units sharing at least one vertex are neighbours. rook: units
    sharing a full edge (a boundary segment of positive length). Islands
    are kept with empty rows and reported via a warning.
    """
    if rule not in ("queen", "rook"):
        raise ValueError("rule must be 'queen' or 'rook'")
    if not table.has_polygons:
        raise ValueError("contiguity weights need polygons on every unit")
    n = table.n
    feature_owner: dict = {}
    pairs: set[tuple[int, int]] = set()

    def touch(key, i):
        owners = feature_owner.setdefault(key, set())
        for o in owners:
            if o != i:
                pairs.add((min(o, i), max(o, i)))
        owners.add(i)

    for i, unit in enumerate(table.units):
        for ring in unit.polygon:
            if rule == "queen":
                pts = list(ring)
                if len(pts) >= 2 and pts[0] == pts[-1]:
                    pts = pts[:-1]
                for pt in pts:
                    touch(("v", pt), i)
            else:
                for edge in _ring_edges(ring):
                    touch(("e", edge), i)

    if pairs:
        arr = np.array(sorted(pairs), dtype=np.int64)
        rows = np.concatenate([arr[:, 0], arr[:, 1]])
        cols = np.concatenate([arr[:, 1], arr[:, 0]])
        m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    else:
        m = sp.csr_matrix((n, n))
    w = SpatialWeights(m, table.ids, style="binary")
    isolates = w.islands()
    if isolates:
        warnings.warn(f"{len(isolates)} island(s) with no neighbours: {', '.join(isolates[:5])}")
    if include_self:
        w = w.with_self()
    if row_standardize:
        w = w.row_standardized()
    return w
