"""Dijkstra oracle: shortest paths on the grid graph under g_tau edge lengths.

An independent route to the g_tau distance used for cross-checking the
eikonal solver.  Nodes are the chart lattice; every node connects to its
3^n - 1 neighbors; an edge's weight is the g_tau length of the straight
segment between its endpoints (Simpson quadrature of the metric along the
segment).  Graph paths are a restricted class of curves, so the oracle
overestimates by the stencil's angular quantization; agreement within a few
percent at moderate anisotropy is the expected behavior, not equality.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .grid import GridChart, ScalarField
from .structures import SubRiemannianStructure

__all__ = ["grid_graph_distance"]


def _primal_metric(S: SubRiemannianStructure, points: np.ndarray, tau: float) -> np.ndarray:
    """Primal metric tensor G = M^{-1} of g_tau at the given points."""
    M = S.dual_metric(points, tau)
    return np.linalg.inv(M)


def grid_graph_distance(
    S: SubRiemannianStructure,
    chart: GridChart,
    origin,
    tau: float,
) -> ScalarField:
    """Dijkstra distance from the node nearest `origin` on the 3^n-1 stencil."""
    origin = np.asarray(origin, dtype=float)
    shape = chart.shape
    n = chart.n
    N = chart.node_count
    pts = chart.points().reshape(N, n)
    G_nodes = _primal_metric(S, pts, tau)
    h = np.asarray(chart.spacing)

    idx = np.arange(N).reshape(shape)

    rows = []
    cols = []
    weights = []
    offsets = [
        off for off in itertools.product((-1, 0, 1), repeat=n) if any(off)
    ]
    # Each undirected edge once: keep lexicographically positive offsets.
    offsets = [off for off in offsets if off > tuple([0] * n)]

    def seg_norm_sq(Gm, delta):
        return np.einsum("...k,...kl,...l->...", delta, Gm, delta)

    for off in offsets:
        src = tuple(
            slice(None, -1) if o == 1 else (slice(1, None) if o == -1 else slice(None))
            for o in off
        )
        dst = tuple(
            slice(1, None) if o == 1 else (slice(None, -1) if o == -1 else slice(None))
            for o in off
        )
        a = idx[src].ravel()
        b = idx[dst].ravel()
        delta = np.asarray(off, dtype=float) * h
        mid = 0.5 * (pts[a] + pts[b])
        G_mid = _primal_metric(S, mid, tau)
        na = np.sqrt(np.maximum(seg_norm_sq(G_nodes[a], delta), 0.0))
        nb = np.sqrt(np.maximum(seg_norm_sq(G_nodes[b], delta), 0.0))
        nm = np.sqrt(np.maximum(seg_norm_sq(G_mid, delta), 0.0))
        w = (na + 4.0 * nm + nb) / 6.0
        rows.append(a)
        cols.append(b)
        weights.append(w)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    graph = csr_matrix((weights, (rows, cols)), shape=(N, N))

    source = int(np.ravel_multi_index(chart.nearest_index(origin), shape))
    dist = dijkstra(graph, directed=False, indices=source)
    return ScalarField(chart, dist.reshape(shape))
