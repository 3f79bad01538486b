"""Sparse-graph linear algebra shared by the embedding modules.

A hand-rolled CSR container (the layout is part of the contract), the
symmetric-normalized Laplacian, a dense eigendecomposition for small
graphs (the oracle path), and Chebyshev polynomial filters for the
scalable path. Chebyshev coefficients are fitted by cosine-node
collocation and applied with the standard three-term recurrence without
ever densifying the operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

EIG_N_MAX = 2000


class SparseMatrix:
    """Square-or-rectangular CSR: sorted column indices, no stored zeros."""

    __slots__ = ("rows", "cols", "offsets", "indices", "values")

    def __init__(self, rows, cols, offsets, indices, values):
        self.rows = int(rows)
        self.cols = int(cols)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.offsets.shape != (self.rows + 1,):
            raise ValueError("offset array must have rows+1 entries")
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.indices):
            raise ValueError("offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be monotone")

    @classmethod
    def from_entries(cls, rows, cols, entries):
        """Build from (i, j, v) triples; duplicates summed, zeros dropped."""
        merged = {}
        for i, j, v in entries:
            key = (int(i), int(j))
            merged[key] = merged.get(key, 0.0) + float(v)
        offsets = np.zeros(rows + 1, dtype=np.int64)
        idx, val = [], []
        for (i, j), v in sorted(merged.items()):
            if v == 0.0:
                continue
            offsets[i + 1] += 1
            idx.append(j)
            val.append(v)
        np.cumsum(offsets, out=offsets)
        return cls(rows, cols, offsets, np.array(idx, dtype=np.int64), np.array(val))

    @property
    def nnz(self):
        return len(self.values)

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(self.rows)
        for i in range(self.rows):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            if lo != hi:
                out[i] = self.values[lo:hi] @ x[self.indices[lo:hi]]
        return out

    def matmat(self, x):
        """Sparse @ dense, vectorized over the nnz pattern."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.cols:
            raise ValueError(f"matmat dimension mismatch {self.cols} vs {x.shape[0]}")
        contrib = self.values[:, None] * x[self.indices]
        row_of = np.repeat(np.arange(self.rows), np.diff(self.offsets))
        out = np.zeros((self.rows, x.shape[1]))
        np.add.at(out, row_of, contrib)
        return out

    def to_dense(self):
        dense = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            dense[i, self.indices[lo:hi]] = self.values[lo:hi]
        return dense

    def is_symmetric(self, tol=0.0):
        if self.rows != self.cols:
            return False
        d = self.to_dense() if self.rows <= 4096 else None
        if d is None:
            raise ValueError("symmetry check limited to 4096 rows")
        return np.allclose(d, d.T, atol=tol, rtol=0.0)


def adjacency_from_edges(n, edges):
    """Undirected adjacency (0/1) over dense node ids [0, n)."""
    seen = set()
    triples = []
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in seen:
            continue
        seen.add(key)
        triples.append((u, v, 1.0))
        triples.append((v, u, 1.0))
    return SparseMatrix.from_entries(n, n, triples)


def degrees(adj: SparseMatrix):
    return np.diff(adj.offsets).astype(np.float64)


def normalized_laplacian(adj: SparseMatrix, isolated_diag: float = 1.0) -> SparseMatrix:
    """L = I - D^{-1/2} A D^{-1/2}.

    Isolated nodes have no defined degree scaling; their diagonal is set
    to ``isolated_diag`` (1.0 treats them as already-normalized
    singletons, 0.0 makes the heat kernel act as the identity there).
    """
    n = adj.rows
    if n == 0:
        raise ValueError("empty graph has no Laplacian")
    deg = degrees(adj)
    inv_sqrt = np.zeros(n)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    entries = []
    for i in range(n):
        lo, hi = adj.offsets[i], adj.offsets[i + 1]
        diag = 1.0 if deg[i] > 0 else float(isolated_diag)
        if diag != 0.0:
            entries.append((i, i, diag))
        for j, v in zip(adj.indices[lo:hi], adj.values[lo:hi]):
            entries.append((i, int(j), -v * inv_sqrt[i] * inv_sqrt[j]))
    return SparseMatrix.from_entries(n, n, entries)


def random_walk_matrix(adj: SparseMatrix) -> SparseMatrix:
    """D^{-1} A; rows of isolated nodes stay zero."""
    deg = degrees(adj)
    entries = []
    for i in range(adj.rows):
        lo, hi = adj.offsets[i], adj.offsets[i + 1]
        if deg[i] == 0:
            continue
        for j, v in zip(adj.indices[lo:hi], adj.values[lo:hi]):
            entries.append((i, int(j), v / deg[i]))
    return SparseMatrix.from_entries(adj.rows, adj.cols, entries)


def eig_small(m: SparseMatrix, n_max: int = EIG_N_MAX):
    """Dense symmetric eigendecomposition, the oracle path.

    Returns (eigenvalues ascending, eigenvectors as columns).
    """
    if m.rows != m.cols:
        raise ValueError("eig_small needs a square matrix")
    if m.rows > n_max:
        raise ValueError(f"matrix order {m.rows} exceeds n_max={n_max}")
    dense = m.to_dense()
    if not np.allclose(dense, dense.T, atol=1e-10, rtol=0.0):
        raise ValueError("eig_small requires a symmetric matrix")
    lam, u = eigh(dense)
    return lam, u


@dataclass(frozen=True)
class ChebFilter:
    """Chebyshev coefficients c_0..c_K on a spectral interval."""

    coefficients: tuple
    lam_min: float
    lam_max: float

    def __post_init__(self):
        if len(self.coefficients) < 2:
            raise ValueError("filter order K must be >= 1")
        if not self.lam_max > self.lam_min:
            raise ValueError("spectral interval must be nonempty")

    @property
    def order(self):
        return len(self.coefficients) - 1


def cheb_fit(fn, interval=(0.0, 2.0), order=30, tol=None, grid=1000):
    """Fit Chebyshev coefficients to ``fn`` on ``interval``.

    Uses collocation at the K+1 Chebyshev nodes (discrete cosine
    transform of the sampled values). When ``tol`` is given the sup
    error over a uniform grid is checked and a ValueError reporting the
    achieved error is raised if the tolerance is unreachable.
    """
    a, b = interval
    k = order
    theta = np.pi * (np.arange(k + 1) + 0.5) / (k + 1)
    x = np.cos(theta)  # nodes in [-1, 1]
    lam = 0.5 * (b - a) * (x + 1.0) + a
    f = np.asarray([fn(v) for v in lam], dtype=np.float64)
    coeffs = np.zeros(k + 1)
    for j in range(k + 1):
        coeffs[j] = (2.0 / (k + 1)) * np.sum(f * np.cos(j * theta))
    coeffs[0] *= 0.5
    filt = ChebFilter(tuple(coeffs), float(a), float(b))
    if tol is not None:
        grid_lam = np.linspace(a, b, grid)
        approx = cheb_eval(filt, grid_lam)
        exact = np.asarray([fn(v) for v in grid_lam])
        err = np.abs(approx - exact).max()
        if err > tol:
            raise ValueError(
                f"Chebyshev fit at order {k} reached sup error {err:.3e} > tol {tol:.1e}"
            )
    return filt


def cheb_fit_heat(scale, interval=(0.0, 2.0), order=30, tol=1e-6):
    """Coefficients for the heat kernel g(lambda) = exp(-scale*lambda)."""
    if scale < 0:
        raise ValueError("heat-kernel scale must be non-negative")
    return cheb_fit(lambda lam: np.exp(-scale * lam), interval, order, tol)


def cheb_eval(filt: ChebFilter, lam):
    """Evaluate the fitted polynomial at scalar eigenvalues (oracle use)."""
    lam = np.asarray(lam, dtype=np.float64)
    a, b = filt.lam_min, filt.lam_max
    x = (2.0 * lam - (a + b)) / (b - a)
    t_prev = np.ones_like(x)
    t_cur = x.copy()
    out = filt.coefficients[0] * t_prev + filt.coefficients[1] * t_cur
    for c in filt.coefficients[2:]:
        t_next = 2.0 * x * t_cur - t_prev
        out += c * t_next
        t_prev, t_cur = t_cur, t_next
    return out


def cheb_apply(filt: ChebFilter, lap: SparseMatrix, x):
    """g(L) @ X via the three-term recurrence; L is never densified."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if lap.rows != lap.cols or lap.rows != x.shape[0]:
        raise ValueError(f"cheb_apply dimension mismatch: L is {lap.rows}x{lap.cols}, X has {x.shape[0]} rows")
    a, b = filt.lam_min, filt.lam_max
    alpha = 2.0 / (b - a)
    beta = -(a + b) / (b - a)

    def shifted(v):
        return alpha * lap.matmat(v) + beta * v

    t_prev = x
    t_cur = shifted(x)
    out = filt.coefficients[0] * t_prev + filt.coefficients[1] * t_cur
    for c in filt.coefficients[2:]:
        t_next = 2.0 * shifted(t_cur) - t_prev
        out += c * t_next
        t_prev, t_cur = t_cur, t_next
    return out[:, 0] if squeeze else out
