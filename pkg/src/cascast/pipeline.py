"""Corpus-to-dataset assembly.

Bridges the raw cascade corpus and the trainer: per-cascade local embedding
rows, the global embedding table, fused token datasets, hand-built baseline
features, and retokenization (with rebuilt local embeddings) for
cross-partition inference at a different observation time.
"""

import math

import numpy as np

from .cascade_io import CascadeRecord, Corpus, build_cascade_graph, split_corpus
from .global_embed import EmbeddingTable, GlobalEmbedConfig, global_embed
from .local_embed import LocalEmbedConfig, local_embed
from .model import zero_global_columns
from .tokenizer import TokenizerConfig, build_sequence
from .training import TokenDataset


def split_map(corpus: Corpus, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> dict:
    train, val, test = split_corpus(corpus, ratios, seed)
    out = {}
    for name, bucket in (("train", train), ("val", val), ("test", test)):
        for rec in bucket:
            out[rec.cascade_id] = name
    return out


def local_rows(records, t_obs: float, cfg: LocalEmbedConfig) -> dict:
    """Per cascade: local embedding rows aligned with the observed user order."""
    out = {}
    for rec in records:
        graph = build_cascade_graph(rec, t_obs)
        table = local_embed(graph, cfg)
        out[rec.cascade_id] = np.stack([table[u] for u, _ in graph.users])
    return out


def global_table(corpus: Corpus, cfg: GlobalEmbedConfig) -> EmbeddingTable:
    """Global embedding table, standardized per coordinate.

    Rows are L2-normalized first: the factorization encodes a node's
    neighborhood identity in the direction of its row, while the norm
    mostly tracks degree, and carrying the norm through would force any
    downstream readout to be scale-invariant before it can use the
    direction. Columns are then standardized because raw spectral rows
    live on a much smaller scale than the local wavelet coordinates, so
    the fused tokens would otherwise be dominated by the local half. The
    padding convention is untouched: the tokenizer writes its zeros after
    fusion, not from this table.
    """
    raw = global_embed(corpus.global_graph, cfg)
    norms = np.linalg.norm(raw.matrix, axis=1, keepdims=True)
    unit = raw.matrix / np.where(norms < 1e-12, 1.0, norms)
    mu = unit.mean(axis=0)
    sd = unit.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return EmbeddingTable((unit - mu) / sd, raw.id_map)


def fuse_cascade(graph, rows: np.ndarray, table: EmbeddingTable) -> dict:
    """Per-user fused vectors [local | global] for one observed cascade."""
    fused = {}
    for i, (user, _) in enumerate(graph.users):
        fused[user] = np.concatenate([rows[i], table.lookup(user)])
    return fused


def build_token_dataset(
    records,
    splits: dict,
    table: EmbeddingTable,
    local_cfg: LocalEmbedConfig,
    tok_cfg: TokenizerConfig,
    name: str = "synthetic",
    rows_cache: dict = None,
) -> TokenDataset:
    tokens = {}
    targets = {}
    t_obs = tok_cfg.observation_time
    for rec in records:
        graph = build_cascade_graph(rec, t_obs)
        if rows_cache is not None and rec.cascade_id in rows_cache:
            rows = rows_cache[rec.cascade_id]
        else:
            emb = local_embed(graph, local_cfg)
            rows = np.stack([emb[u] for u, _ in graph.users])
        fused = fuse_cascade(graph, rows, table)
        seq = build_sequence(graph, tok_cfg, fused)
        tokens[rec.cascade_id] = seq.tokens
        targets[rec.cascade_id] = rec.final_popularity
    return TokenDataset(
        name=name,
        t_obs=t_obs,
        tokens=tokens,
        targets=targets,
        splits={cid: splits[cid] for cid in tokens},
    )


def cross_partition_tokenizer(
    train_cfg: TokenizerConfig, t_obs_prime: float, max_context: int
) -> TokenizerConfig:
    """Tokenizer for a new observation window reusing the trained patch length.

    Keeps the patch duration fixed at delta = t_obs_train / N_train and sets
    N' = round(t_obs' / delta); t_obs' must be a whole number of patches.
    """
    delta = train_cfg.observation_time / train_cfg.num_patches
    n_prime = int(round(t_obs_prime / delta))
    if not math.isclose(n_prime * delta, t_obs_prime, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(
            f"observation time {t_obs_prime} is not a whole number of "
            f"{delta}-long patches"
        )
    if n_prime < 2:
        raise ValueError(f"{t_obs_prime} spans fewer than 2 patches of {delta}")
    if n_prime - 1 > max_context:
        raise ValueError(
            f"{n_prime} patches need context {n_prime - 1} > max_context "
            f"{max_context}; rebuild the backbone with a larger max-context"
        )
    return TokenizerConfig(
        num_patches=n_prime,
        max_length=train_cfg.max_length,
        observation_time=n_prime * delta,
    )


def zeroed_global_dataset(
    data: TokenDataset, max_length: int, d_l: int, d_g: int
) -> TokenDataset:
    """Copy of the dataset with every token's global columns zeroed."""
    tokens = {
        cid: zero_global_columns(toks, max_length, d_l, d_g)
        for cid, toks in data.tokens.items()
    }
    return TokenDataset(data.name, data.t_obs, tokens, data.targets, data.splits)


# -- baseline features --------------------------------------------------------


def cascade_features(rec: CascadeRecord, tok_cfg: TokenizerConfig) -> np.ndarray:
    """Hand features: per-boundary popularity, log size, mean gap, depth."""
    t_obs = tok_cfg.observation_time
    graph = build_cascade_graph(rec, t_obs)
    times = np.array([t for _, t in graph.users])
    bounds = np.arange(1, tok_cfg.num_patches + 1) * (t_obs / tok_cfg.num_patches)
    pops = np.array([(times <= b).sum() for b in bounds], dtype=np.float64)
    log_pop = np.log2(pops[-1] + 1.0)
    gaps = np.diff(np.sort(times))
    mean_gap = float(gaps.mean()) if gaps.size else 0.0
    depth = {rec.root_user: 0}
    max_depth = 0
    for e in graph.edges:
        d = depth.get(e.parent, 0) + 1
        depth[e.child] = d
        max_depth = max(max_depth, d)
    return np.concatenate([pops, [log_pop, mean_gap, float(max_depth)]])


def feature_table(records, tok_cfg: TokenizerConfig) -> dict:
    return {rec.cascade_id: cascade_features(rec, tok_cfg) for rec in records}
