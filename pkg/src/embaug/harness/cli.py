"""Command-line entry points.

Every subcommand accepts ``--config``, ``--seed`` and ``--out``, writes its
outputs into ``--out`` together with ``<command>.manifest.json`` and, on
failure, prints exactly one line ``error: <category>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..dagan import GanTrainingError, gan_meta, load_generator, make_generator, save_generator, train_gan
from ..metrics import evaluate
from ..mil import GanOnline, MilTrainingError, NoAug, PatchPrecomputed, load_model, mil_meta, save_model, train_mil
from ..numerics import ContractError, DegenerateVectorError, DimensionError
from ..rng import Stream
from ..synthdata import ParseError, load_dataset, make_dataset, save_dataset
from .bench import bench_speedup
from .config import ConfigError, RunConfig, load_config
from .experiment import MODES, ExperimentError, LeakageError, fold_pairs, run_experiment
from .flops import FlopModel
from .folds import make_folds
from .report import dump_json, format_bench, format_eval, write_experiment

log = logging.getLogger("embaug")

EXIT_USAGE = 2
EXIT_CONTRACT = 3
EXIT_TRAINING = 4
EXIT_INTERNAL = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def _manifest(args, cfg: RunConfig, seed, outputs: list[Path]) -> Path:
    out = Path(args.out)
    path = out / f"{args.command}.manifest.json"
    obj = {
        "command": args.command,
        "argv": [str(a) for a in args.argv],
        "seed": seed,
        "config": cfg.to_dict(),
        "versions": {"embaug": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": [p.name for p in outputs],
    }
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _plan(dataset, cfg: RunConfig):
    exp = cfg.experiment_config()
    return make_folds(Stream(exp.seed, ("experiment", "folds")), len(dataset), dataset.labels, exp.n_folds)


def _fold(plan, f: int):
    if not 0 <= f < len(plan):
        raise UsageError(f"--fold must lie in [0, {len(plan)})")
    return plan[f]


# ----------------------------------------------------------------- commands

def cmd_gen_data(args, cfg: RunConfig):
    seed = cfg.data_seed if args.seed is None else args.seed
    ds = make_dataset(seed, cfg.data)
    path = save_dataset(ds, Path(args.out) / "dataset.emb")
    print(f"wrote {path} ({len(ds)} bags, d={ds.d})")
    return seed, [path, path.with_suffix(".meta.json")]


def cmd_train_gan(args, cfg: RunConfig):
    ds = load_dataset(args.data)
    split = _fold(_plan(ds, cfg), args.fold)
    seed = cfg.gan.seed if args.seed is None else args.seed
    exp = cfg.experiment_config()
    pairs = fold_pairs(ds, split.train, Stream(seed, ("cli", "pairs", args.fold)), exp.n_augs, exp.max_pairs)
    res = train_gan(pairs, replace(cfg.gan, variant=args.variant, seed=seed))
    meta = {**gan_meta(res), "fold": args.fold, "n_pairs": len(pairs), "dataset_seed": ds.seed}
    path = save_generator(res.generator, Path(args.out) / f"generator-{args.variant}.eag", meta)
    print(f"wrote {path} (held-out cos {res.log.holdout_cos[0]:.3f} -> {res.log.holdout_cos[-1]:.3f})")
    return seed, [path, path.with_suffix(".meta.json")]


def _aug_mode(args, ds, cfg: RunConfig, split, seed):
    exp = cfg.experiment_config()
    if args.mode == "none":
        return NoAug()
    if args.mode == "patch":
        return PatchPrecomputed(ds.oracle, exp.n_augs)
    variant = args.mode.split("-", 1)[1]
    if args.generator:
        gen = load_generator(args.generator)
        if gen.variant != variant:
            raise UsageError(f"--generator holds a {gen.variant!r} generator but --mode is {args.mode}")
    else:
        pairs = fold_pairs(ds, split.train, Stream(seed, ("cli", "pairs", args.fold)), exp.n_augs, exp.max_pairs)
        gen = train_gan(pairs, replace(cfg.gan, variant=variant, seed=seed)).generator
    return GanOnline(gen, exp.p_apply)


def cmd_train_mil(args, cfg: RunConfig):
    ds = load_dataset(args.data)
    split = _fold(_plan(ds, cfg), args.fold)
    seed = cfg.mil.seed if args.seed is None else args.seed
    aug = _aug_mode(args, ds, cfg, split, seed)
    res = train_mil(ds.subset(split.train), ds.subset(split.val), aug, replace(cfg.mil, seed=seed), K=ds.K)
    meta = {**mil_meta(res), "mode": args.mode, "fold": args.fold, "dataset_seed": ds.seed}
    path = save_model(res.model, Path(args.out) / f"mil-{args.mode}.eam", meta)
    print(f"wrote {path} (best epoch {res.log.best_epoch}, val NLL {res.log.best_val_nll:.4f})")
    return seed, [path, path.with_suffix(".meta.json")]


def cmd_evaluate(args, cfg: RunConfig):
    ds = load_dataset(args.data)
    model = load_model(args.model)
    if model.d != ds.d or model.K != ds.K:
        raise ContractError(f"model (d={model.d}, K={model.K}) does not fit dataset (d={ds.d}, K={ds.K})")
    if args.all:
        idx = list(range(len(ds)))
    else:
        idx = list(_fold(_plan(ds, cfg), args.fold).test)
    bags = ds.subset(idx)
    res = evaluate([model.predict_proba(b.instances) for b in bags], [b.label for b in bags], ds.K)
    out = Path(args.out)
    js, txt = out / "eval.json", out / "eval.txt"
    js.write_text(dump_json({"model": str(args.model), "split": "all" if args.all else f"fold{args.fold}-test",
                             **res.as_dict()}))
    txt.write_text(format_eval(res.as_dict()))
    sys.stdout.write(txt.read_text())
    return args.seed, [js, txt]


def cmd_bench(args, cfg: RunConfig):
    b = cfg.bench
    d = args.d or b.d
    seed = 0 if args.seed is None else args.seed
    fm = FlopModel(input_size=b.input_size)
    rows = []
    for variant in b.variants:
        gen = make_generator(variant, d, Stream(seed, ("bench", "init", variant)))
        rows.append(bench_speedup(gen, fm, batch=b.batch, repeats=b.repeats,
                                  rng=Stream(seed, ("bench", variant))).as_dict())
    out = Path(args.out)
    js, txt = out / "bench.json", out / "bench.txt"
    js.write_text(dump_json({"input_size": b.input_size, "rows": rows}))
    txt.write_text(format_bench(rows))
    sys.stdout.write(txt.read_text())
    return seed, [js, txt]


def cmd_report(args, cfg: RunConfig):
    exp = cfg.experiment_config()
    if args.seed is not None:
        exp = replace(exp, seed=args.seed)
    if args.modes:
        exp = replace(exp, modes=tuple(args.modes))
    ds = load_dataset(args.data) if args.data else make_dataset(cfg.data_seed, cfg.data)
    report = run_experiment(ds, exp)
    paths = write_experiment(report, args.out)
    sys.stdout.write(paths[1].read_text())
    return exp.seed, paths


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gan": cmd_train_gan,
    "train-mil": cmd_train_mil,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="embaug", description="Embedding-space augmentation experiments.")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="sectioned key=value config file")
        sp.add_argument("--seed", type=int, help="overrides the command's seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        return sp

    common(sub.add_parser("gen-data", help="generate and save a synthetic dataset"))

    sp = common(sub.add_parser("train-gan", help="train a generator on one fold's training bags"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--variant", choices=["ind", "exp"], default="exp")
    sp.add_argument("--fold", type=int, default=0)

    sp = common(sub.add_parser("train-mil", help="train an attention-MIL classifier on one fold"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=MODES, default="none")
    sp.add_argument("--generator", help="generator checkpoint for gan-* modes (trained on the fly if omitted)")
    sp.add_argument("--fold", type=int, default=0)

    sp = common(sub.add_parser("evaluate", help="score a MIL checkpoint on a fold's test bags"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--fold", type=int, default=0)
    g.add_argument("--all", action="store_true", help="score every bag instead of one test fold")

    sp = common(sub.add_parser("bench", help="FLOP and wall-clock cost of generators vs the reference extractor"))
    sp.add_argument("--d", type=int, help="embedding dimension (default from [bench])")

    sp = common(sub.add_parser("report", help="run the cross-validated comparison and write the table"))
    sp.add_argument("--data", help="dataset file (generated from [data] if omitted)")
    sp.add_argument("--modes", nargs="+", choices=MODES)
    return p


def _fail(category: str, message: str, code: int) -> int:
    first = str(message).strip().splitlines()[0] if str(message).strip() else category
    print(f"error: {category}: {first}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    args.argv = argv
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        seed, outputs = COMMANDS[args.command](args, cfg)
        _manifest(args, cfg, seed, outputs)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_USAGE)
    except FileNotFoundError as exc:
        return _fail("missing-file", exc, EXIT_USAGE)
    except ParseError as exc:
        return _fail("parse", exc, EXIT_USAGE)
    except (GanTrainingError, MilTrainingError, ExperimentError, LeakageError) as exc:
        return _fail("training", exc, EXIT_TRAINING)
    except (ContractError, DimensionError, DegenerateVectorError) as exc:
        return _fail("contract", exc, EXIT_CONTRACT)
    except OSError as exc:
        return _fail("io", exc, EXIT_USAGE)
    except Exception as exc:  # pragma: no cover - last resort, still one line
        log.debug("unhandled", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)
    return 0


if __name__ == "__main__":
    sys.exit(main())
