"""Command-line surface: generate, embed, tokenize, train, eval, infer,
ablate, and report."""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .adapter import popularity_from_log
from .cascade_io import generate_synthetic_corpus, load_corpus, write_corpus
from .global_embed import EmbeddingTable
from .model import VARIANTS, CascadeModel
from .pipeline import (
    build_token_dataset,
    cross_partition_tokenizer,
    global_table,
    local_rows,
    split_map,
    zeroed_global_dataset,
)
from .storage import (
    load_embedding,
    load_into,
    load_local_rows,
    load_token_dataset,
    save_checkpoint,
    save_embedding,
    save_local_rows,
    save_token_dataset,
)
from .training import (
    CSV_COLUMNS,
    RunReport,
    TrainAbort,
    evaluate,
    predict_split,
    train_model,
)


def _load(args):
    try:
        return cfgmod.load_config(args.config, args.set or ())
    except FileNotFoundError as e:
        raise FileNotFoundError(f"--config: {e}") from e


def _add_common(sub):
    sub.add_argument("--config", help="INI config file (defaults used if omitted)")
    sub.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override a config value; repeatable",
    )


def _global_table(cp, corpus, path):
    if path:
        matrix = load_embedding(path).astype(np.float64)
        return EmbeddingTable(matrix, corpus.global_graph.id_map)
    return global_table(corpus, cfgmod.global_config(cp))


def _build_model(cp, token_width, variant):
    mcfg = dataclasses.replace(cfgmod.model_config(cp), token_dim=token_width)
    return CascadeModel(mcfg, variant=variant)


def _dataset_for_variant(cp, data, variant):
    if variant != "wo-global":
        return data
    tok = cfgmod.tokenizer_config(cp)
    return zeroed_global_dataset(
        data, tok.max_length, cfgmod.local_config(cp).dim,
        cfgmod.global_config(cp).output_dim,
    )


def cmd_generate(args):
    cp = _load(args)
    corpus = generate_synthetic_corpus(cfgmod.corpus_config(cp))
    write_corpus(corpus, args.out)
    print(
        f"wrote {corpus.size} cascades over "
        f"{corpus.global_graph.node_count} users to {args.out}"
    )
    return 0


def cmd_embed_local(args):
    cp = _load(args)
    corpus = load_corpus(args.corpus)
    t_obs = cfgmod.tokenizer_config(cp).observation_time
    rows = local_rows(corpus.records, t_obs, cfgmod.local_config(cp))
    save_local_rows(args.out, rows)
    print(f"wrote local rows for {len(rows)} cascades to {args.out}")
    return 0


def cmd_embed_global(args):
    cp = _load(args)
    corpus = load_corpus(args.corpus)
    table = global_table(corpus, cfgmod.global_config(cp))
    save_embedding(args.out, table.matrix)
    print(f"wrote {table.matrix.shape[0]}x{table.matrix.shape[1]} table to {args.out}")
    return 0


def cmd_tokenize(args):
    cp = _load(args)
    corpus = load_corpus(args.corpus)
    splits = split_map(corpus, seed=cp["dataset"].getint("split_seed"))
    table = _global_table(cp, corpus, args.global_table)
    rows_cache = load_local_rows(args.local_rows) if args.local_rows else None
    data = build_token_dataset(
        corpus.records,
        splits,
        table,
        cfgmod.local_config(cp),
        cfgmod.tokenizer_config(cp),
        name=cp["dataset"].get("name"),
        rows_cache=rows_cache,
    )
    save_token_dataset(args.out, data)
    n, s = data.token_shape
    print(f"wrote {len(data.tokens)} token sequences ({n}x{s}) to {args.out}")
    return 0


def _report_lines(report: RunReport):
    return [",".join(CSV_COLUMNS), report.csv_row()]


def cmd_train(args):
    cp = _load(args)
    data = load_token_dataset(args.tokens)
    data = _dataset_for_variant(cp, data, args.variant)
    n, s = data.token_shape
    model = _build_model(cp, s, args.variant)
    report = train_model(model, data, cfgmod.train_config(cp), run_id=args.run_id)
    save_checkpoint(args.ckpt, model.trainable())
    if args.report:
        Path(args.report).write_text(report.to_json())
    print("\n".join(_report_lines(report)))
    return 0


def cmd_eval(args):
    cp = _load(args)
    data = load_token_dataset(args.tokens)
    data = _dataset_for_variant(cp, data, args.variant)
    n, s = data.token_shape
    model = _build_model(cp, s, args.variant)
    load_into(model.trainable(), args.ckpt)
    test_msle, test_mape = evaluate(model, data, args.split)
    print(f"split={args.split} msle={test_msle:.6f} mape={test_mape:.6f}")
    return 0


def cmd_infer(args):
    cp = _load(args)
    corpus = load_corpus(args.corpus)
    train_tok = cfgmod.tokenizer_config(cp)
    max_ctx = cfgmod.backbone_config(cp).max_context
    tok = cross_partition_tokenizer(train_tok, args.t_obs, max_ctx)
    splits = split_map(corpus, seed=cp["dataset"].getint("split_seed"))
    table = _global_table(cp, corpus, args.global_table)
    data = build_token_dataset(
        corpus.records, splits, table, cfgmod.local_config(cp), tok,
        name=cp["dataset"].get("name"),
    )
    data = _dataset_for_variant(cp, data, args.variant)
    n, s = data.token_shape
    model = _build_model(cp, s, args.variant)
    load_into(model.trainable(), args.ckpt)
    preds, counts = predict_split(model, data, args.split)
    if args.out:
        ids = data.ids(args.split)
        lines = ["cascade_id,predicted_popularity"]
        lines += [f"{cid},{popularity_from_log(p)}" for cid, p in zip(ids, preds)]
        Path(args.out).write_text("\n".join(lines) + "\n")
    test_msle, test_mape = evaluate(model, data, args.split)
    print(
        f"t_obs={tok.observation_time} patches={tok.num_patches} "
        f"split={args.split} msle={test_msle:.6f} mape={test_mape:.6f}"
    )
    return 0


def cmd_ablate(args):
    cp = _load(args)
    data = load_token_dataset(args.tokens)
    tcfg = cfgmod.train_config(cp)
    rows = [",".join(CSV_COLUMNS)]
    for variant in args.variants:
        vdata = _dataset_for_variant(cp, data, variant)
        n, s = vdata.token_shape
        model = _build_model(cp, s, variant)
        report = train_model(model, vdata, tcfg, run_id=f"{args.run_id}-{variant}")
        rows.append(report.csv_row())
        print(rows[-1])
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    return 0


def cmd_report(args):
    payloads = [json.loads(Path(p).read_text()) for p in args.inputs]
    rows = [",".join(CSV_COLUMNS)]
    for p in payloads:
        vals = [p[c] for c in CSV_COLUMNS]
        rows.append(
            ",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in vals)
        )
    csv_text = "\n".join(rows) + "\n"
    if args.csv:
        Path(args.csv).write_text(csv_text)
    if args.json:
        Path(args.json).write_text(json.dumps(payloads, indent=2))
    print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascast",
        description="cascade popularity prediction over a frozen backbone",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="write a synthetic cascade corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("embed-local", help="cache per-cascade wavelet rows")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output cache directory")
    p.set_defaults(func=cmd_embed_local)

    p = subs.add_parser("embed-global", help="cache the global embedding table")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output cache file")
    p.set_defaults(func=cmd_embed_global)

    p = subs.add_parser("tokenize", help="build and cache token sequences")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output token cache file")
    p.add_argument("--local-rows", help="local row cache directory (else computed)")
    p.add_argument("--global-table", help="global embedding cache file (else computed)")
    p.set_defaults(func=cmd_tokenize)

    p = subs.add_parser("train", help="train the adapter stack")
    _add_common(p)
    p.add_argument("--tokens", required=True, help="token cache file")
    p.add_argument("--ckpt", required=True, help="output checkpoint")
    p.add_argument("--report", help="output RunReport JSON")
    p.add_argument("--run-id", default="run")
    p.add_argument("--variant", default="full", choices=VARIANTS)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--tokens", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--variant", default="full", choices=VARIANTS)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser(
        "infer", help="retokenize at a new observation time and predict"
    )
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--t-obs", type=float, required=True, dest="t_obs")
    p.add_argument("--split", default="test")
    p.add_argument("--variant", default="full", choices=VARIANTS)
    p.add_argument("--global-table", help="global embedding cache file")
    p.add_argument("--out", help="output predictions CSV")
    p.set_defaults(func=cmd_infer)

    p = subs.add_parser("ablate", help="train and score model variants")
    _add_common(p)
    p.add_argument("--tokens", required=True)
    p.add_argument("--out", help="output metrics CSV")
    p.add_argument("--run-id", default="ablation")
    p.add_argument(
        "--variants",
        nargs="+",
        default=list(VARIANTS),
        choices=VARIANTS,
    )
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("report", help="merge RunReport JSONs into CSV/JSON")
    p.add_argument("--inputs", nargs="+", required=True, help="RunReport JSON files")
    p.add_argument("--csv", help="output CSV path")
    p.add_argument("--json", help="output merged JSON path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"cascast: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, TrainAbort) as e:
        print(f"cascast: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
