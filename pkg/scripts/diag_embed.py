"""Which structures does the rank-8 global embedding actually resolve?

Checks, on the default corpus graph:
  1. multinomial community recovery from embedding rows (fast nodes only)
  2. linear recovery of the community-mean exposure share
  3. cascade-level oracle with community-mean exposure instead of exact
     per-node slow degree (is community identity enough?)
  4. singular values of the factorization, for rank placement
"""

import numpy as np

from cascast import config as cfgmod
from cascast.cascade_io import _community_graph, build_cascade_graph, generate_synthetic_corpus
from cascast.global_embed import global_embed
from cascast.pipeline import feature_table, global_table, split_map
from cascast.tokenizer import patch_boundaries
from cascast.training import fit_linear_baseline

cp = cfgmod.load_config()
ccfg = cfgmod.corpus_config(cp)
corpus = generate_synthetic_corpus(ccfg)
splits = split_map(corpus, seed=0)
gcfg = cfgmod.global_config(cp)
table = global_table(corpus, gcfg)

_, fast = _community_graph(
    ccfg.graph_size, ccfg.attach_m, ccfg.fast_communities,
    ccfg.bridge_rate, ccfg.bridge_ramp, np.random.default_rng(ccfg.seed),
)
n = ccfg.graph_size
slow_size = n // 2
fast_total = n - slow_size
k = ccfg.fast_communities
sizes = [fast_total // k + (1 if i < fast_total % k else 0) for i in range(k)]
comm = np.full(n, k)  # slow block label k
off = 0
for c, s in enumerate(sizes):
    comm[off:off + s] = c
    off += s

nbrs = corpus.global_graph.neighbors()
slow_deg = np.array([(~fast[nbrs[i]]).sum() for i in range(n)], dtype=float)
deg = corpus.global_graph.degrees().astype(float)
frac = slow_deg / np.maximum(deg, 1.0)
comm_share = np.array([frac[comm == c].mean() for c in range(k + 1)])
print("community mean exposure:", np.round(comm_share, 4))

# 1. community recovery from embeddings, fast nodes only
from sklearn.linear_model import LogisticRegression

rng = np.random.default_rng(0)
fidx = np.flatnonzero(fast)
pick = rng.permutation(fidx)[:5000]
x, y = table.matrix[pick], comm[pick]
clf = LogisticRegression(max_iter=3000).fit(x[:4000], y[:4000])
acc = clf.score(x[4000:], y[4000:])
base = max(np.bincount(y[4000:]) / len(y[4000:]))
print(f"fast-community-from-ge accuracy {acc:.3f} (base {base:.3f})")

# 2. community-mean exposure via linear readout
xx = np.concatenate([x, np.ones((len(x), 1))], axis=1)
target = comm_share[y]
coef, *_ = np.linalg.lstsq(xx[:4000], target[:4000], rcond=None)
pred = xx[4000:] @ coef
ss = 1 - ((target[4000:] - pred) ** 2).sum() / ((target[4000:] - target[4000:].mean()) ** 2).sum()
print(f"community-share-from-ge R^2 {ss:.3f}")

# 3. cascade-level oracle with community-mean exposure
tok = cfgmod.tokenizer_config(cp)
bounds = patch_boundaries(tok.observation_time, tok.num_patches)
feats = feature_table(corpus.records, tok)
fb = {}
ys = {}
for rec in corpus.records:
    graph = build_cascade_graph(rec, tok.observation_time)
    times = np.array([t for _, t in graph.users])
    dense = np.array([corpus.global_graph.id_map[u] for u, _ in graph.users])
    cs = comm_share[comm[dense]]
    sums = np.array([cs[times <= b].sum() for b in bounds])
    fb[rec.cascade_id] = np.concatenate([feats[rec.cascade_id], sums])
    ys[rec.cascade_id] = rec.final_popularity
m, p, _ = fit_linear_baseline(feats, ys, splits)
print(f"A feat        msle {m:.4f}")
m, p, _ = fit_linear_baseline(fb, ys, splits)
print(f"B' +comm-share msle {m:.4f}")

# 4. singular values
raw = global_embed(corpus.global_graph, gcfg)
print("col norms of raw U*sqrt(S):", np.round(np.linalg.norm(raw.matrix, axis=0), 3))
