"""Measurement run for the end-to-end acceptance numbers.

Builds the standard synthetic corpus, trains full/wo-auto/wo-llm, fits the
feature baselines, and runs the cross-partition comparison, printing stage
timings and metrics as it goes.
"""

import time

from cascast import config as cfgmod
from cascast.autograd import set_mode
from cascast.cascade_io import generate_synthetic_corpus
from cascast.model import CascadeModel
from cascast.pipeline import (
    build_token_dataset,
    cross_partition_tokenizer,
    feature_table,
    global_table,
    local_rows,
    split_map,
)
from cascast.training import evaluate, fit_linear_baseline, fit_mlp_baseline, train_model

t0 = time.perf_counter()


def mark(label):
    print(f"[{time.perf_counter() - t0:8.1f}s] {label}", flush=True)


cp = cfgmod.load_config()
corpus = generate_synthetic_corpus(cfgmod.corpus_config(cp))
pops = [r.final_popularity for r in corpus.records]
mark(f"corpus: {corpus.size} cascades, pop median {sorted(pops)[len(pops)//2]}, max {max(pops)}")

splits = split_map(corpus, seed=cp["dataset"].getint("split_seed"))
table = global_table(corpus, cfgmod.global_config(cp))
mark("global table")

local_cfg = cfgmod.local_config(cp)
tok_cfg = cfgmod.tokenizer_config(cp)
data = build_token_dataset(corpus.records, splits, table, local_cfg, tok_cfg)
mark(f"tokens: shape {data.token_shape}")

feats = feature_table(corpus.records, tok_cfg)
targets = {r.cascade_id: r.final_popularity for r in corpus.records}
lin_msle, lin_mape, _ = fit_linear_baseline(feats, targets, splits)
mark(f"feat-linear: msle {lin_msle:.4f} mape {lin_mape:.4f}")
mlp_msle, mlp_mape = fit_mlp_baseline(feats, targets, splits)
mark(f"feat-mlp: msle {mlp_msle:.4f} mape {mlp_mape:.4f}")

set_mode("train")
mcfg = cfgmod.model_config(cp)
tcfg = cfgmod.train_config(cp)

results = {}
for variant in ("full", "wo-auto", "wo-llm"):
    model = CascadeModel(mcfg, variant=variant)
    rep = train_model(model, data, tcfg, run_id=variant)
    results[variant] = (rep, model)
    mark(
        f"{variant}: msle {rep.msle:.4f} mape {rep.mape:.4f} "
        f"epochs {rep.epochs} train {rep.wall_clock_s:.1f}s "
        f"learnable {rep.learnable_params} total {rep.total_params}"
    )
    print(f"  first-5 train losses: {[round(v, 4) for v in rep.train_losses[:5]]}")
    print(f"  val: {[round(v, 4) for v in rep.val_losses[:10]]} ...", flush=True)

full_rep, full_model = results["full"]
print()
print(f"full vs linear: {full_rep.msle / lin_msle:.4f} (need <= 0.90)")
print(f"full vs wo-auto: {full_rep.msle:.4f} vs {results['wo-auto'][0].msle:.4f}")
print(f"full vs wo-llm: {full_rep.msle:.4f} vs {results['wo-llm'][0].msle:.4f}", flush=True)

tok15 = cross_partition_tokenizer(tok_cfg, 15.0, mcfg.backbone.max_context)
data15 = build_token_dataset(corpus.records, splits, table, local_cfg, tok15)
mark(f"cross tokens: shape {data15.token_shape}")
cross_msle, cross_mape = evaluate(full_model, data15, "test")
mark(f"cross-partition: msle {cross_msle:.4f} mape {cross_mape:.4f}")

retrain = CascadeModel(mcfg)
rep15 = train_model(retrain, data15, tcfg, run_id="retrain15")
mark(f"retrained@15: msle {rep15.msle:.4f} epochs {rep15.epochs}")
print(f"cross gap: |{cross_msle:.4f} - {rep15.msle:.4f}| / {rep15.msle:.4f} = "
      f"{abs(cross_msle - rep15.msle) / rep15.msle:.4f} (need <= 0.15)")
mark("done")
