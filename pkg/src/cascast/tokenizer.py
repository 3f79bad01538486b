"""Cascade tokenization: fuse embeddings and build patch token sequences.

A cascade observed over [0, t_o] is cut into N uniform time patches.  The
token for patch n concatenates the fused embeddings of every user who adopted
at or before the patch boundary, in propagation order, truncated to the l
earliest adopters and zero-padded up to a fixed width S = l*d.
"""

from dataclasses import dataclass

import numpy as np

from .cascade_io import CascadeGraph


@dataclass(frozen=True)
class TokenizerConfig:
    num_patches: int = 8
    max_length: int = 32
    observation_time: float = 20.0

    def __post_init__(self):
        if self.num_patches < 2:
            raise ValueError("num_patches must be >= 2")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.observation_time <= 0:
            raise ValueError("observation_time must be positive")


@dataclass
class TokenSequence:
    """N patch tokens for one cascade.

    tokens: (N, S) float array, S = max_length * embed_dim
    active_counts: adopters at or before each boundary (pre-truncation)
    boundaries: the N patch boundary times
    """

    tokens: np.ndarray
    active_counts: np.ndarray
    boundaries: np.ndarray


def fuse(le: np.ndarray, ge: np.ndarray, d_l: int, d_g: int) -> np.ndarray:
    """Concatenate a user's local and global embeddings, local part first."""
    le = np.asarray(le, dtype=np.float64)
    ge = np.asarray(ge, dtype=np.float64)
    if le.shape != (d_l,):
        raise ValueError(f"local embedding has shape {le.shape}, expected ({d_l},)")
    if ge.shape != (d_g,):
        raise ValueError(f"global embedding has shape {ge.shape}, expected ({d_g},)")
    return np.concatenate([le, ge])


def patch_boundaries(t_o: float, n_patches: int) -> np.ndarray:
    """Uniform boundaries t_n = n * t_o / N for n = 1..N; t_N = t_o exactly."""
    if t_o <= 0:
        raise ValueError("observation time must be positive")
    if n_patches < 2:
        raise ValueError("need at least 2 patches")
    bounds = np.arange(1, n_patches + 1, dtype=np.float64) * (t_o / n_patches)
    bounds[-1] = t_o
    return bounds


def build_token(graph: CascadeGraph, t_n: float, table: dict, max_length: int) -> np.ndarray:
    """Token for one patch boundary.

    Users with adoption time <= t_n are taken in (time, id) order, the first
    min(count, max_length) embeddings are concatenated, and the row is
    zero-padded to max_length * d.
    """
    dims = {v.shape[0] for v in table.values()}
    if len(dims) != 1:
        raise ValueError("embedding table rows have inconsistent dims")
    d = dims.pop()
    out = np.zeros(max_length * d, dtype=np.float64)
    # graph.users is already sorted by (adoption-time, user-id)
    filled = 0
    for user, when in graph.users:
        if when > t_n or filled == max_length:
            break
        out[filled * d : (filled + 1) * d] = table[user]
        filled += 1
    return out


def active_count(graph: CascadeGraph, t_n: float) -> int:
    return sum(1 for _, when in graph.users if when <= t_n)


def build_sequence(graph: CascadeGraph, cfg: TokenizerConfig, table: dict) -> TokenSequence:
    bounds = patch_boundaries(cfg.observation_time, cfg.num_patches)
    tokens = np.stack([build_token(graph, t, table, cfg.max_length) for t in bounds])
    counts = np.array([active_count(graph, t) for t in bounds], dtype=np.int64)
    return TokenSequence(tokens, counts, bounds)
