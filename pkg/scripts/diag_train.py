"""Per-epoch train/val/test MSLE trajectories for one variant.

Answers two questions the aggregate runs cannot: is the early minimum on
the validation split real structure or metric noise, and does the test
split keep improving after the stopper would have fired?

Usage: python3 scripts/diag_train.py [variant] [hidden_dim] [epochs]
"""

import sys
import time

import numpy as np

from cascast import config as cfgmod
from cascast.autograd import Tape, backward, set_mode
from cascast.cascade_io import generate_synthetic_corpus
from cascast.model import CascadeModel
from cascast.pipeline import build_token_dataset, feature_table, global_table, split_map
from cascast.training import Adam, batch_loss, evaluate, fit_linear_baseline

variant = sys.argv[1] if len(sys.argv) > 1 else "full"
hidden = int(sys.argv[2]) if len(sys.argv) > 2 else 0
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 40

cp = cfgmod.load_config()
ccfg = cfgmod.corpus_config(cp)
corpus = generate_synthetic_corpus(ccfg)
splits = split_map(corpus, seed=0)
table = global_table(corpus, cfgmod.global_config(cp))
data = build_token_dataset(
    corpus.records, splits, table, cfgmod.local_config(cp), cfgmod.tokenizer_config(cp)
)
feats = feature_table(corpus.records, cfgmod.tokenizer_config(cp))
ys = {r.cascade_id: r.final_popularity for r in corpus.records}
remap = {"train": "train", "val": "test", "test": "unused"}
lin_val = fit_linear_baseline(feats, ys, {k: remap[v] for k, v in splits.items()})[0]
lin_test = fit_linear_baseline(feats, ys, splits)[0]
print(f"linear val {lin_val:.4f} test {lin_test:.4f}")

mcfg = cfgmod.model_config(cp)
import dataclasses

mcfg = dataclasses.replace(
    mcfg,
    token_dim=data.token_shape[1],
    hidden_dim=hidden if hidden > 0 else mcfg.hidden_dim,
)
set_mode("train")
model = CascadeModel(mcfg, variant=variant)
tcfg = cfgmod.train_config(cp)

train_ids = data.ids("train")
mean_log = float(np.mean([data.targets[i] for i in train_ids]))
if "head.2.b" in model.adapter.tensors:
    model.adapter.tensors["head.2.b"].values[:] = mean_log

opt = Adam(model.trainable(), tcfg.learning_rate)
rng = np.random.default_rng(tcfg.seed)
t0 = time.perf_counter()
for epoch in range(1, epochs + 1):
    order = rng.permutation(len(train_ids))
    tot, nb = 0.0, 0
    for lo in range(0, len(order), tcfg.batch_size):
        ids = [train_ids[i] for i in order[lo : lo + tcfg.batch_size]]
        toks, targets = data.stack(ids)
        tape = Tape()
        loss, _ = batch_loss(tape, model, toks, targets, tcfg.loss_weight)
        backward(tape, loss)
        opt.step()
        tot += float(loss.values.item())
        nb += 1
    tr = evaluate(model, data, "train")[0]
    va = evaluate(model, data, "val")[0]
    te = evaluate(model, data, "test")[0]
    print(
        f"ep {epoch:3d} loss {tot/nb:.4f} train {tr:.4f} val {va:.4f} "
        f"test {te:.4f} [{time.perf_counter()-t0:.0f}s]"
    )
set_mode("test")
