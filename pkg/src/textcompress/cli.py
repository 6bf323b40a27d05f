"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import SEED_ENV, RunConfig, default_seed
from .data import (KeepDropGrammar, NoiseConfig, make_choice_set, make_noisy_copy_translation_set, make_span_set,
                   make_synthetic_supervised_set, read_lines, split_train_test, synthesize_corpus, write_choice_file,
                   write_lines, write_pairs, write_span_file)
from .errors import ConfigError, DataError, LengthError
from .etc import BeamConfig, baseline_compress, beam_search_compress, greedy_compress
from .metrics import accuracy, bleu, corpus_rouge, span_em_f1, token_accuracy
from .training import ABLATION_ROWS, keep_drop_data, load_trained, run_ablation_quality, run_sweep_gamma, run_train

EXIT_CONFIG = 2
EXIT_DATA = 3


def _bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes"):
        return True
    if raw.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {raw!r}")


def _floats(raw: str) -> list[float]:
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}") from None


def _ints(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from None


def add_run_flags(p: argparse.ArgumentParser) -> None:
    """One flag per RunConfig field; unset flags fall back to the config file, then defaults."""
    p.add_argument("--config", help="INI file with [run] [compression] [model] [optim] [paths] sections")
    for f in fields(RunConfig):
        typ = str(f.type)
        conv = _bool if typ.startswith("bool") else int if typ.startswith("int") else \
            float if typ.startswith("float") else str
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=conv, default=None)


def run_config_from_args(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    if args.config:
        cfg = RunConfig.load(args.config, **overrides)
    else:
        cfg = RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


def _print_metrics(metrics: dict[str, float]) -> None:
    for k, v in metrics.items():
        print(f"{k}={v:.6f}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = run_config_from_args(args)
    result = run_train(cfg)
    _print_metrics(result.metrics)
    if cfg.out_dir:
        print(f"# wrote {cfg.out_dir}", file=sys.stderr)
    return 0


def _read_id_lines(path, vocab) -> list[list[int]]:
    seqs = read_lines(path)
    if any(not s for s in seqs):
        raise DataError(f"{path}: empty lines are not allowed")
    return [vocab.encode(s) for s in seqs]


def _write_out(path, lines: list[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_compress(args) -> int:
    if args.mode in ("alltext", "f8w", "randsample"):
        seqs = read_lines(args.input)
        rng = np.random.default_rng(args.seed)
        out = [baseline_compress(s, args.mode, args.gamma, rng) for s in seqs]
        _write_out(args.output, [" ".join(s) for s in out])
        return 0
    if not args.checkpoint:
        raise ConfigError(f"--checkpoint is required for mode {args.mode}")
    run, cfg = load_trained(args.checkpoint)
    model = run.model if cfg.task == "compress" else run.compressor
    if model is None:
        raise ConfigError(f"{args.checkpoint} holds no explicit compressor")
    vocab = run.data.vocab
    beam = BeamConfig(args.beam, args.alpha, args.beta, args.gamma)
    out = []
    for ids in _read_id_lines(args.input, vocab):
        toks = beam_search_compress(ids, model, beam) if args.mode == "beam" else greedy_compress(ids, model, args.gamma)
        out.append(" ".join(vocab.decode(toks)))
    _write_out(args.output, out)
    return 0


def cmd_translate(args) -> int:
    run, cfg = load_trained(args.checkpoint)
    if cfg.task != "translate":
        raise ConfigError(f"{args.checkpoint} is a {cfg.task} model, not a translation model")
    vocab = run.data.vocab
    items = [(ids, []) for ids in _read_id_lines(args.input, vocab)]
    preds = run.predict(items)
    _write_out(args.output, [" ".join(vocab.decode(p)) for p in preds])
    return 0


EVAL_METRICS = ("rouge", "bleu", "token_accuracy", "f1", "exact")


def evaluate_files(pred_path, ref_path, metrics=EVAL_METRICS, lower: bool = True) -> dict[str, float]:
    preds, refs = read_lines(pred_path), read_lines(ref_path)
    if len(preds) != len(refs):
        raise DataError(f"{pred_path} has {len(preds)} lines but {ref_path} has {len(refs)}")
    if not refs:
        raise DataError("nothing to evaluate")
    if any(not r for r in refs):
        raise DataError(f"{ref_path}: empty reference line")
    report: dict[str, float] = {}
    for m in metrics:
        if m == "rouge":
            for name, rep in corpus_rouge(preds, refs, lower).items():
                report.update({f"{name}.precision": rep.precision, f"{name}.recall": rep.recall,
                               f"{name}.f1": rep.score})
        elif m == "bleu":
            report["bleu"] = bleu(preds, refs)
        elif m == "token_accuracy":
            report["token_accuracy"] = float(np.mean([token_accuracy(p, r) for p, r in zip(preds, refs)]))
        elif m == "f1":
            report["token_f1"] = float(np.mean([span_em_f1(p, r)[1] for p, r in zip(preds, refs)]))
        elif m == "exact":
            report["exact"] = accuracy(preds, refs)
        else:
            raise ConfigError(f"unknown metric {m!r}; expected one of {', '.join(EVAL_METRICS)}")
    report["count"] = float(len(refs))
    return report


def format_table(report: dict[str, float]) -> str:
    width = max(len(k) for k in report)
    rule = "-" * (width + 14)
    rows = [f"{k:<{width}}  {v:>12.4f}" for k, v in report.items()]
    return "\n".join([f"{'metric':<{width}}  {'value':>12}", rule, *rows])


def cmd_evaluate(args) -> int:
    metrics = args.metrics.split(",") if args.metrics else EVAL_METRICS
    report = evaluate_files(args.pred, args.ref, metrics, lower=not args.no_lower)
    _print_metrics(report)
    print()
    print(format_table(report))
    return 0


def cmd_sweep_gamma(args) -> int:
    cfg = run_config_from_args(args)
    rows = run_sweep_gamma(cfg, args.grid)
    keys = sorted(rows[0].metrics) if rows and rows[0].metrics else []
    lines = ["gamma\t" + "\t".join(keys)]
    lines += [f"{r.gamma:g}\t" + "\t".join(f"{r.metrics[k]:.6f}" for k in keys) for r in rows]
    for r in rows:
        for k in keys:
            print(f"gamma{r.gamma:g}.{k}={r.metrics[k]:.6f}")
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n" + "\n".join(lines))
    return 0


def cmd_ablate_quality(args) -> int:
    cfg = run_config_from_args(args)
    rows = args.rows.split(",") if args.rows else list(ABLATION_ROWS)
    data_for_seed = None
    if args.synthetic:
        if cfg.task not in ("translate", "compress"):
            raise ConfigError("--synthetic supports task translate or compress")
        data_for_seed = lambda seed: keep_drop_data(args.n_train, args.n_test, seed, task=cfg.task)
    report = run_ablation_quality(cfg, args.seeds, rows, data_for_seed)
    for line in report.as_lines():
        print(line)
    print()
    print(report.table())
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "ablation.txt").write_text("\n".join(report.as_lines()) + "\n\n" + report.table() + "\n")
    return 0


def cmd_synthesize_noise(args) -> int:
    corpus = read_lines(args.input)
    corpus = [s for s in corpus if s]
    if not corpus:
        raise DataError(f"{args.input}: no non-empty lines")
    cfg = NoiseConfig(args.additive_fraction, args.shuffle_level, args.dropout_p, args.seed, args.full_stop)
    pairs = synthesize_corpus(corpus, cfg)
    if args.output in (None, "-"):
        sys.stdout.write("".join(f"{' '.join(a)}\t{' '.join(b)}\n" for a, b in pairs))
    else:
        write_pairs(args.output, pairs)
    return 0


def cmd_make_data(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = KeepDropGrammar()
    if args.kind == "keep-drop":
        train, test = split_train_test(lambda n, s: make_synthetic_supervised_set(g, n, s), args.n_train,
                                       args.n_test, args.seed)
        write_pairs(out / "train.tsv", train)
        write_pairs(out / "test.tsv", test)
        write_lines(out / "test.src", [x for x, _ in test])
        write_lines(out / "test.ref", [y for _, y in test])
    elif args.kind == "noisy-copy":
        train, test = split_train_test(lambda n, s: make_noisy_copy_translation_set(g, n, s), args.n_train,
                                       args.n_test, args.seed)
        write_pairs(out / "train.tsv", train)
        write_pairs(out / "test.tsv", test)
        write_pairs(out / "compression.tsv", make_synthetic_supervised_set(g, args.n_train, args.seed * 2 + 3))
        write_lines(out / "test.src", [x for x, _, _ in test])
        write_lines(out / "test.ref", [t for _, t, _ in test])
    elif args.kind == "span":
        write_span_file(out / "train.tsv", make_span_set(args.n_train, args.seed * 2 + 1))
        write_span_file(out / "test.tsv", make_span_set(args.n_test, args.seed * 2 + 2))
    else:
        write_choice_file(out / "train.tsv", make_choice_set(args.n_train, args.seed * 2 + 1))
        write_choice_file(out / "test.tsv", make_choice_set(args.n_test, args.seed * 2 + 2))
    print(f"# wrote {out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textcompress",
        description="Text-compression-aided Transformer encoding: training, compression and evaluation.",
        epilog=f"{SEED_ENV} sets the default seed. Exit codes: 0 ok, 2 config error, 3 data error.")
    parser.add_argument("--log-level", default="WARNING", help="Python logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a task model or a compressor")
    add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress one sequence per input line")
    p.add_argument("--checkpoint", help="model.tcck from a compress run or a pipeline run")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--mode", default="beam", choices=["beam", "greedy", "alltext", "f8w", "randsample"])
    p.add_argument("--gamma", type=float, default=0.6)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--seed", type=int, default=None, help=f"randsample seed (default from {SEED_ENV})")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("translate", help="greedy-decode one source per input line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="score prediction lines against reference lines")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", help=f"comma-separated subset of {','.join(EVAL_METRICS)}")
    p.add_argument("--no-lower", action="store_true", help="disable case folding for ROUGE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-gamma", help="train and evaluate once per compression ratio")
    add_run_flags(p)
    p.add_argument("--grid", type=_floats, default=[0.2, 0.4, 0.6, 0.8, 1.0])
    p.set_defaults(func=cmd_sweep_gamma)

    p = sub.add_parser("ablate-quality", help="compare compression baselines and trained compressors")
    add_run_flags(p)
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--rows", help=f"comma-separated subset of {','.join(ABLATION_ROWS)}")
    p.add_argument("--synthetic", action="store_true",
                   help="draw fresh keep/drop (compress) or noisy-copy (translate) data per seed instead of files")
    p.add_argument("--n-train", type=int, default=1000, help="training items per seed with --synthetic")
    p.add_argument("--n-test", type=int, default=200, help="test items per seed with --synthetic")
    p.set_defaults(func=cmd_ablate_quality)

    p = sub.add_parser("synthesize-noise", help="build (noisy, clean) pairs from a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--additive-fraction", type=float, default=0.5)
    p.add_argument("--shuffle-level", choices=["token", "sentence"], default="token")
    p.add_argument("--dropout-p", type=float, default=0.1)
    p.add_argument("--full-stop", default=".")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synthesize_noise)

    p = sub.add_parser("make-data", help="write a synthetic dataset")
    p.add_argument("--kind", choices=["keep-drop", "noisy-copy", "span", "choice"], required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_make_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", None) is None and args.command in ("compress", "synthesize-noise", "make-data"):
            args.seed = default_seed()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, LengthError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
