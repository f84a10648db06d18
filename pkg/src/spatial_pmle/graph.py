"""Region adjacency graphs and their incidence / Laplacian matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

#: Ridge used when a regularized Laplacian is requested without an explicit value.
DEFAULT_RIDGE = 1e-3


class GraphError(ValueError):
    """Raised for malformed region graphs."""


@dataclass(frozen=True)
class RegionGraph:
    """Undirected weighted graph on ``n`` regions.

    Edges are stored canonically with ``heads[k] < tails[k]``.
    """

    n: int
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    region_ids: tuple = field(default=())

    def __post_init__(self):
        heads = np.asarray(self.heads, dtype=np.int64)
        tails = np.asarray(self.tails, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=float)
        if not (heads.shape == tails.shape == weights.shape) or heads.ndim != 1:
            raise GraphError("edge arrays must be 1-d and of equal length")
        if self.n < 0:
            raise GraphError("region count must be nonnegative")
        if heads.size:
            if np.any(heads >= tails):
                raise GraphError("edges must satisfy i < j (no self-loops)")
            if heads.min() < 0 or tails.max() >= self.n:
                raise GraphError("edge endpoint out of range")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise GraphError("edge weights must be positive and finite")
            keys = heads * self.n + tails
            if np.unique(keys).size != keys.size:
                raise GraphError("duplicate edge")
        ids = tuple(self.region_ids) if len(self.region_ids) else tuple(range(self.n))
        if len(ids) != self.n:
            raise GraphError("region_ids length must equal n")
        for arr in (heads, tails, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "region_ids", ids)

    @property
    def n_edges(self) -> int:
        return int(self.heads.size)

    def edges(self):
        """Iterate over ``(i, j, w)`` triples."""
        return zip(self.heads.tolist(), self.tails.tolist(), self.weights.tolist())

    def adjacency(self) -> sp.csr_matrix:
        w = sp.coo_matrix((self.weights, (self.heads, self.tails)), shape=(self.n, self.n))
        return (w + w.T).tocsr()

    def subgraph(self, idx: Sequence[int]) -> "RegionGraph":
        """Induced subgraph on ``idx``, relabelled in the given order."""
        idx = np.asarray(idx, dtype=np.int64)
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[idx] = np.arange(idx.size)
        a, b = pos[self.heads], pos[self.tails]
        keep = (a >= 0) & (b >= 0)
        a, b, w = a[keep], b[keep], self.weights[keep]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        return RegionGraph(idx.size, lo, hi, w, tuple(self.region_ids[i] for i in idx))

    def permute(self, perm: Sequence[int]) -> "RegionGraph":
        """Relabel so that new region ``k`` is old region ``perm[k]``."""
        return self.subgraph(perm)


def build_graph(
    edge_list: Iterable[tuple], region_ids: Sequence[Hashable]
) -> RegionGraph:
    """Build a canonical graph from ``(id_i, id_j[, weight])`` tuples.

    Weight defaults to 1.0 when a tuple has only two entries.
    """
    region_ids = list(region_ids)
    index = {}
    for k, rid in enumerate(region_ids):
        if rid in index:
            raise GraphError(f"duplicate region id {rid!r}")
        index[rid] = k
    heads, tails, weights = [], [], []
    seen = set()
    for edge in edge_list:
        if len(edge) == 2:
            a, b = edge
            w = 1.0
        else:
            a, b, w = edge
        for rid in (a, b):
            if rid not in index:
                raise GraphError(f"unknown region id {rid!r}")
        if a == b:
            raise GraphError(f"self-loop at region {a!r}")
        w = float(w)
        if not math.isfinite(w) or w <= 0:
            raise GraphError(f"non-positive weight {w} on edge ({a!r}, {b!r})")
        i, j = sorted((index[a], index[b]))
        if (i, j) in seen:
            raise GraphError(f"duplicate edge ({a!r}, {b!r})")
        seen.add((i, j))
        heads.append(i)
        tails.append(j)
        weights.append(w)
    return RegionGraph(len(region_ids), np.array(heads, dtype=np.int64),
                       np.array(tails, dtype=np.int64), np.array(weights, dtype=float),
                       tuple(region_ids))


def lattice_graph(m: int, region_ids: Sequence[Hashable] | None = None) -> RegionGraph:
    """Unweighted rook-adjacency graph of an ``m x m`` grid.

    Cell ``(r, c)`` (row ``r`` along the second axis, column ``c`` along the
    first) has index ``r * m + c``.
    """
    idx = np.arange(m * m).reshape(m, m)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    up = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    e = np.concatenate([right, up])
    order = np.lexsort((e[:, 1], e[:, 0]))
    e = e[order]
    ids = tuple(region_ids) if region_ids is not None else tuple(range(m * m))
    return RegionGraph(m * m, e[:, 0], e[:, 1], np.ones(len(e)), ids)


def incidence(g: RegionGraph) -> sp.csr_matrix:
    """Signed edge-by-region incidence matrix with entries ``+-sqrt(w)``."""
    k = np.arange(g.n_edges)
    s = np.sqrt(g.weights)
    rows = np.concatenate([k, k])
    cols = np.concatenate([g.heads, g.tails])
    vals = np.concatenate([s, -s])
    return sp.csr_matrix((vals, (rows, cols)), shape=(g.n_edges, g.n))


def laplacian(g: RegionGraph, delta: float = 0.0) -> sp.csr_matrix:
    """Graph Laplacian ``D - W + delta * I``."""
    if delta is None:
        delta = DEFAULT_RIDGE
    if delta < 0 or not math.isfinite(delta):
        raise GraphError("ridge delta must be nonnegative and finite")
    w = g.adjacency()
    deg = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(deg + delta) - w).tocsr()


def partition_laplacian(L, train_idx):
    """Split ``L`` into ``(L11, L12, L21, L22)`` blocks for a train/test split.

    Test indices are the complement of ``train_idx`` in increasing order.
    """
    L = sp.csr_matrix(L)
    n = L.shape[0]
    train = np.asarray(train_idx, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[train] = True
    if train.size == 0 or mask.sum() == n:
        raise GraphError("train and test sets must both be nonempty")
    test = np.flatnonzero(~mask)
    L11 = L[train][:, train]
    L12 = L[train][:, test]
    L21 = L[test][:, train]
    L22 = L[test][:, test]
    return L11, L12, L21, L22
