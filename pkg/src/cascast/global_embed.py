"""Positional embeddings of the global context graph.

Randomized truncated SVD of the random-walk matrix D^{-1}A gives the
base factors U sqrt(Sigma); a Chebyshev band-pass propagation over the
normalized Laplacian spreads them spectrally. The factorization runs
per connected component with the sketch seed reset for each component,
so identical components embed identically and isolated nodes get exact
zero rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import svd as dense_svd

from .cascade_io import GlobalGraph
from .graph_core import (
    SparseMatrix,
    adjacency_from_edges,
    cheb_apply,
    cheb_fit,
    normalized_laplacian,
    random_walk_matrix,
)


@dataclass(frozen=True)
class GlobalEmbedConfig:
    output_dim: int = 8
    oversampling: int = 10
    power_iterations: int = 2
    prop_order: int = 10
    mu: float = 0.2
    theta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.output_dim < 1:
            raise ValueError("output dim must be >= 1")
        if self.oversampling < 0 or self.power_iterations < 0:
            raise ValueError("oversampling and power iterations must be >= 0")


class EmbeddingTable:
    """Dense per-user rows plus the id map; tracks lookup misses."""

    def __init__(self, matrix: np.ndarray, id_map: dict):
        self.matrix = matrix
        self.id_map = id_map
        self.miss_count = 0

    @property
    def dim(self):
        return self.matrix.shape[1]

    def lookup(self, user_id) -> np.ndarray:
        row = self.id_map.get(user_id)
        if row is None:
            self.miss_count += 1
            return np.zeros(self.dim)
        return self.matrix[row]


def lookup_global(table: EmbeddingTable, user_id) -> np.ndarray:
    return table.lookup(user_id)


def _transpose_csr(m: SparseMatrix) -> SparseMatrix:
    entries = []
    for i in range(m.rows):
        lo, hi = m.offsets[i], m.offsets[i + 1]
        for j, v in zip(m.indices[lo:hi], m.values[lo:hi]):
            entries.append((int(j), i, v))
    return SparseMatrix.from_entries(m.cols, m.rows, entries)


def _fix_signs(u, v):
    """Largest-magnitude entry of each left vector made positive."""
    for j in range(u.shape[1]):
        col = u[:, j]
        pivot = np.argmax(np.abs(col))
        if col[pivot] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return u, v


def randomized_tsvd(m: SparseMatrix, k: int, p: int = 10, q: int = 2, seed: int = 0):
    """Seeded Gaussian sketch + power iterations with re-orthonormalization.

    Returns (U_k, sigma_k, V_k) with the deterministic sign convention.
    """
    small = min(m.rows, m.cols)
    if k + p > small:
        raise ValueError(
            f"sketch width k+p={k + p} exceeds matrix dimension {small}"
        )
    rng = np.random.default_rng(seed)
    mt = _transpose_csr(m)
    sketch = rng.standard_normal((m.cols, k + p))
    y = m.matmat(sketch)
    for _ in range(q):
        y, _ = np.linalg.qr(y)
        z = mt.matmat(y)
        z, _ = np.linalg.qr(z)
        y = m.matmat(z)
    qmat, _ = np.linalg.qr(y)
    b = mt.matmat(qmat).T  # (k+p) x cols, dense and small
    ub, s, vt = dense_svd(b, full_matrices=False)
    u = qmat @ ub[:, :k]
    v = vt[:k].T
    u, v = _fix_signs(u, v)
    return u, s[:k].copy(), v


def _band_pass_filter(cfg: GlobalEmbedConfig):
    mu, theta = cfg.mu, cfg.theta
    return cheb_fit(
        lambda lam: np.exp(-0.5 * theta * ((lam - mu) ** 2 - 1.0)),
        interval=(0.0, 2.0),
        order=cfg.prop_order,
    )


def _components(graph: GlobalGraph):
    nbrs = graph.neighbors()
    seen = np.zeros(graph.node_count, dtype=bool)
    for start in range(graph.node_count):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        head = 0
        while head < len(comp):
            for v in nbrs[comp[head]]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
            head += 1
        yield sorted(comp)


def global_embed(graph: GlobalGraph, cfg: GlobalEmbedConfig) -> EmbeddingTable:
    """Embed every node; rows indexed by dense id, looked up by original id."""
    if graph.node_count == 0:
        raise ValueError("empty global graph")
    out = np.zeros((graph.node_count, cfg.output_dim))
    filt = _band_pass_filter(cfg)
    nbrs = graph.neighbors()
    for comp in _components(graph):
        if len(comp) == 1:
            continue  # isolated: exact zero row
        local = {node: i for i, node in enumerate(comp)}
        edges = set()
        for node in comp:
            for v in nbrs[node]:
                edges.add((min(local[node], local[v]), max(local[node], local[v])))
        adj = adjacency_from_edges(len(comp), sorted(edges))
        k = min(cfg.output_dim, len(comp))
        p = min(cfg.oversampling, len(comp) - k)
        u, s, _ = randomized_tsvd(
            random_walk_matrix(adj), k, p, cfg.power_iterations, cfg.seed
        )
        base = u * np.sqrt(np.maximum(s, 0.0))
        lap = normalized_laplacian(adj, isolated_diag=1.0)
        propagated = cheb_apply(filt, lap, base)
        out[np.asarray(comp), :k] = propagated
    return EmbeddingTable(out, dict(graph.id_map))
