"""Is the deferred-mass signal linearly readable from the real embeddings?

Fits least squares on per-cascade features of increasing richness:
  A: the actual Feat feature set (per-patch pops, log size, mean gap, depth)
  B: A + ground-truth per-patch slow-exposure sums (the corpus oracle)
  C: A + per-patch sums of global-embedding rows over observed adopters
  D: A + per-patch sums of local-embedding rows
  E: A + both embedding sums
and reports how well a linear readout of a node's embedding row recovers
its slow-neighbor fraction (the quantity the mechanism defers on).
"""

import dataclasses
import sys
import time

import numpy as np

from cascast import config as cfgmod
from cascast.cascade_io import _community_graph, build_cascade_graph, generate_synthetic_corpus
from cascast.pipeline import feature_table, global_table, local_rows, split_map
from cascast.tokenizer import patch_boundaries

t0 = time.perf_counter()
cp = cfgmod.load_config()
ccfg = cfgmod.corpus_config(cp)
if len(sys.argv) > 1:
    ccfg = dataclasses.replace(ccfg, graph_size=int(sys.argv[1]))
if len(sys.argv) > 3:
    ccfg = dataclasses.replace(
        ccfg, bridge_rate=float(sys.argv[2]), bridge_ramp=float(sys.argv[3])
    )
print(f"graph_size {ccfg.graph_size} bridge {ccfg.bridge_rate}x{ccfg.bridge_ramp}")
corpus = generate_synthetic_corpus(ccfg)
splits = split_map(corpus, seed=0)
table = global_table(corpus, cfgmod.global_config(cp))
# same rng replay the generator used, so the mask matches the corpus graph
_, fast = _community_graph(
    ccfg.graph_size, ccfg.attach_m, ccfg.fast_communities,
    ccfg.bridge_rate, ccfg.bridge_ramp, np.random.default_rng(ccfg.seed),
)
nbrs = corpus.global_graph.neighbors()
slow_deg = np.array([(~fast[nbrs[i]]).sum() for i in range(ccfg.graph_size)], dtype=float)
print(f"[{time.perf_counter()-t0:.1f}s] corpus + table; fast fraction {fast.mean():.3f}")

tok = cfgmod.tokenizer_config(cp)
bounds = patch_boundaries(tok.observation_time, tok.num_patches)
local_cfg = cfgmod.local_config(cp)
lrows = local_rows(corpus.records, tok.observation_time, local_cfg)
feats = feature_table(corpus.records, tok)
print(f"[{time.perf_counter()-t0:.1f}s] locals + feat table")

feats_b, feats_c, feats_d, feats_e, ys = {}, {}, {}, {}, {}
for rec in corpus.records:
    graph = build_cascade_graph(rec, tok.observation_time)
    times = np.array([t for _, t in graph.users])
    users = [u for u, _ in graph.users]
    dense = np.array([corpus.global_graph.id_map[u] for u in users])
    exposure = slow_deg[dense]
    ge = table.matrix[dense]
    le = lrows[rec.cascade_id]
    base = feats[rec.cascade_id]
    expo_sums = np.array([exposure[times <= b].sum() for b in bounds])
    ge_sums = np.stack([ge[times <= b].sum(axis=0) for b in bounds]).ravel()
    le_sums = np.stack([le[times <= b].sum(axis=0) for b in bounds]).ravel()
    feats_b[rec.cascade_id] = np.concatenate([base, expo_sums])
    feats_c[rec.cascade_id] = np.concatenate([base, ge_sums])
    feats_d[rec.cascade_id] = np.concatenate([base, le_sums])
    feats_e[rec.cascade_id] = np.concatenate([base, ge_sums, le_sums])
    ys[rec.cascade_id] = rec.final_popularity

from cascast.training import fit_linear_baseline

for label, fs in (("A feat", feats), ("B +exposure", feats_b),
                  ("C +ge-sums", feats_c), ("D +le-sums", feats_d),
                  ("E +both", feats_e)):
    m, p, _ = fit_linear_baseline(fs, ys, splits)
    print(f"{label:12s} msle {m:.4f} mape {p:.4f}")

# node-level: linear readout of slow-neighbor fraction from the embedding row
deg = corpus.global_graph.degrees().astype(float)
frac = np.where(deg > 0, slow_deg / np.maximum(deg, 1.0), 0.0)
rng = np.random.default_rng(0)
n_s = min(ccfg.graph_size, 5000)
n_tr = int(n_s * 0.8)
idx = rng.choice(ccfg.graph_size, n_s, replace=False)
x = np.concatenate([table.matrix[idx], np.ones((n_s, 1))], axis=1)
y = frac[idx]
coef, *_ = np.linalg.lstsq(x[:n_tr], y[:n_tr], rcond=None)
pred = x[n_tr:] @ coef
ss_res = ((y[n_tr:] - pred) ** 2).sum()
ss_tot = ((y[n_tr:] - y[n_tr:].mean()) ** 2).sum()
fm = fast[idx][n_tr:]
print(f"slow-fraction-from-ge R^2 {1 - ss_res / ss_tot:.3f} "
      f"(fast-node subset: "
      f"{1 - (((y[n_tr:]-pred)**2)[fm].sum() / ((y[n_tr:][fm] - y[n_tr:][fm].mean())**2).sum()):.3f})")
print(f"[{time.perf_counter()-t0:.1f}s] done")
