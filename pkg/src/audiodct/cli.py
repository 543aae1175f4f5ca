"""Command-line interface.

Subcommands compose the whole pipeline from an empty directory to evaluation
reports: gen-data, pretrain-lm, prepare-targets, train-adapter, infer, eval,
report. Every run echoes its resolved configuration to stderr. Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from .backbone import LMConfig, freeze
from .checkpoint import load_bundle, save_bundle
from .corpus import build_corpus, build_world_vocab
from .datasets import make_dataset, read_features
from .evaluate import (
    EvalError,
    InstructionSpec,
    caption_instruction,
    eval_aac,
    eval_aqa,
    eval_distill,
    infer,
    noinst_instruction,
    qa_instruction,
    qualitative_probe,
)
from .pretrain import PretrainSettings, corpus_perplexity, pretrain_lm, split_corpus
from .targets import prepare_dataset
from .tokenizer import AUDIO_SLOT
from .training import TrainConfig, parse_train_config, train
from .world import WorldConfig


def _echo(args: dict) -> None:
    print("config: " + json.dumps(args, sort_keys=True, default=str), file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiodct",
        description="dialogue-continuation training for audio comprehension",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=600)
    p.add_argument("--val", type=int, default=100)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--events-min", type=int, default=1)
    p.add_argument("--events-max", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--captions-per-scene", type=int, default=3)

    p = sub.add_parser("pretrain-lm", help="pretrain and freeze the backbone")
    p.add_argument("--out", required=True, help="bundle file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus-scenes", type=int, default=500)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--peak-lr", type=float, default=3e-4)
    p.add_argument("--warmup", type=int, default=200)
    p.add_argument("--val-every", type=int, default=500)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--ff-dim", type=int, default=512)
    p.add_argument("--max-context", type=int, default=256)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")

    p = sub.add_parser("prepare-targets", help="sample one response per caption")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-new-tokens", type=int, default=40)
    p.add_argument("--splits", default="train,val")

    p = sub.add_parser("train-adapter", help="train the adapter")
    p.add_argument("--mode", choices=("caption", "dct"))
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--targets", help="targets directory (dct mode)")
    p.add_argument("--ckpt", required=True, help="frozen backbone bundle")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--ckpt-out", help="copy the selected checkpoint here")
    p.add_argument("--resume", help="state file to resume from")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--val-every", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("infer", help="answer one instruction over one clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True, help="feature file (.f32)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--instruction", help="system prompt text")
    group.add_argument("--no-instruction", action="store_true")
    p.add_argument("--question", help="ask via the question-answering template")
    p.add_argument("--beam-size", type=int, default=4)
    p.add_argument("--max-new-tokens", type=int, default=40)
    p.add_argument("--sample-temperature", type=float)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="run an evaluation suite")
    p.add_argument("--suite", required=True,
                   choices=("aqa", "aac", "distill", "qualitative", "all"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--baseline-ckpt", help="caption-trained bundle (qualitative)")
    p.add_argument("--data", required=True)
    p.add_argument("--targets", help="targets directory (distill)")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--probe-items", type=int, default=50)

    p = sub.add_parser("report", help="render figures and aggregate CSVs")
    p.add_argument("--metrics", nargs="*", default=[])
    p.add_argument("--eval", nargs="*", default=[])
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handler = {
        "gen-data": _cmd_gen_data,
        "pretrain-lm": _cmd_pretrain,
        "prepare-targets": _cmd_targets,
        "train-adapter": _cmd_train,
        "infer": _cmd_infer,
        "eval": _cmd_eval,
        "report": _cmd_report,
    }[args.command]
    _echo(vars(args))
    try:
        return handler(args)
    except Exception as exc:  # typed message, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _cmd_gen_data(args) -> int:
    config = WorldConfig(
        events_min=args.events_min,
        events_max=args.events_max,
        noise_amp=args.noise,
        captions_per_scene=args.captions_per_scene,
    )
    meta = make_dataset(
        args.out, args.seed,
        {"train": args.train, "val": args.val, "test": args.test},
        config,
    )
    print(json.dumps(meta["sizes"]))
    return 0


def _cmd_pretrain(args) -> int:
    vocab = build_world_vocab()
    config = LMConfig(
        layers=args.layers, heads=args.heads, dim=args.dim, ff_dim=args.ff_dim,
        max_context=args.max_context, vocab_size=len(vocab), dtype=args.dtype,
    )
    items = build_corpus(args.seed, args.corpus_scenes, vocab)
    settings = PretrainSettings(
        iters=args.iters, batch_size=args.batch_size, peak_lr=args.peak_lr,
        warmup=args.warmup, val_every=args.val_every, seed=args.seed,
    )
    params, history = pretrain_lm(
        config, items, settings,
        progress=lambda row: print(
            f"iter {row['iteration']}: loss {row['train_loss']:.4f}"
            + (f" val_ppl {row['val_ppl']:.3f}" if row["val_ppl"] != "" else ""),
            file=sys.stderr,
        ),
    )
    freeze(params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = save_bundle(out, vocab, params, extra={"corpus_items": len(items)})
    metrics_path = out.with_suffix(out.suffix + ".metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write("iteration,lr,train_loss,val_ppl\n")
        for row in history:
            fh.write(f"{row['iteration']},{row['lr']:.10g},{row['train_loss']:.6f},{row['val_ppl']}\n")
    _, val_items = split_corpus(items, settings.val_fraction, settings.seed)
    ppl = corpus_perplexity(params, val_items)
    print(json.dumps({"bundle": str(out), "val_perplexity": ppl,
                      "model_hash": header["lm_content_hash"]}))
    return 0


def _cmd_targets(args) -> int:
    bundle = load_bundle(args.ckpt)
    reports = []
    for split in [s.strip() for s in args.splits.split(",") if s.strip()]:
        reports.append(
            prepare_dataset(
                args.data, bundle, args.out, split=split,
                temperature=args.temperature, seed=args.seed,
                max_new_tokens=args.max_new_tokens,
                progress=lambda msg: print(msg, file=sys.stderr),
            )
        )
    print(json.dumps(reports))
    return 0


def _cmd_train(args) -> int:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {
        "mode": args.mode,
        "max_iters": args.max_iters,
        "seed": args.seed,
        "val_every": args.val_every,
        "batch_size": args.batch_size,
    }
    config = parse_train_config(text, overrides)
    result = train(
        config, args.data, args.ckpt, args.out,
        targets_dir=args.targets, resume=args.resume,
        progress=lambda row: print(
            f"iter {row['iteration']}: train {row['train_loss']:.4f} "
            f"val {row['val_loss']:.4f}", file=sys.stderr,
        ),
    )
    if args.ckpt_out:
        Path(args.ckpt_out).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(result.bundle_path, args.ckpt_out)
    print(json.dumps({
        "checkpoint": str(args.ckpt_out or result.bundle_path),
        "best_val": result.best_val,
        "best_iteration": result.best_iteration,
        "metrics": str(result.metrics_path),
        "manifest": str(result.manifest_path),
    }))
    return 0


def _cmd_infer(args) -> int:
    bundle = load_bundle(args.ckpt)
    features = read_features(args.features)
    if args.question is not None:
        spec = qa_instruction(args.question)
        if args.instruction:
            spec.system = args.instruction
    elif args.no_instruction:
        spec = noinst_instruction()
    elif args.instruction:
        spec = InstructionSpec(args.instruction, [AUDIO_SLOT, "."])
    else:
        spec = caption_instruction()
    spec.beam_size = args.beam_size
    spec.max_new_tokens = args.max_new_tokens
    rng = None
    if args.sample_temperature is not None:
        spec.temperature = args.sample_temperature
        rng = np.random.Generator(np.random.PCG64(args.seed))
    print(infer(features, spec, bundle, rng=rng))
    return 0


def _cmd_eval(args) -> int:
    bundle = load_bundle(args.ckpt)
    out = Path(args.out)
    results = {}

    def run_suite(name):
        if name == "aqa":
            rep = eval_aqa(bundle, args.data, split=args.split,
                           progress=lambda m: print(m, file=sys.stderr))
        elif name == "aac":
            rep = eval_aac(bundle, args.data, split=args.split,
                           progress=lambda m: print(m, file=sys.stderr))
        elif name == "distill":
            if not args.targets:
                raise EvalError("distill suite needs --targets")
            rep = eval_distill(bundle, args.data, args.targets, split="val")
        else:
            if not args.baseline_ckpt:
                raise EvalError("qualitative suite needs --baseline-ckpt")
            baseline = load_bundle(args.baseline_ckpt)
            rep = qualitative_probe(bundle, baseline, args.data,
                                    n=args.probe_items, split=args.split)
        rep.save(out, name)
        results[name] = rep.aggregates

    if args.suite == "all":
        for name in ("aqa", "aac", "distill", "qualitative"):
            if name == "distill" and not args.targets:
                continue
            if name == "qualitative" and not args.baseline_ckpt:
                continue
            run_suite(name)
    else:
        run_suite(args.suite)
    print(json.dumps(results, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    from .report import eval_summary, training_curves

    written = []
    if args.metrics:
        written.append(str(training_curves(args.metrics, Path(args.out) / "training_curves.png")))
    if args.eval:
        png, csv_path = eval_summary(args.eval, args.out)
        written.extend([str(png), str(csv_path)])
    if not written:
        print("error: report needs --metrics and/or --eval inputs", file=sys.stderr)
        return 1
    print(json.dumps({"written": written}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
