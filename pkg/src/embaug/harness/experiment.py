"""Cross-validated comparison of augmentation modes on a synthetic dataset."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..dagan import GanConfig, make_generator, train_gan
from ..metrics import EvalResult, evaluate
from ..mil import GanOnline, MilConfig, NoAug, PatchPrecomputed, train_mil
from ..numerics import ContractError
from ..rng import Stream
from ..synthdata import Dataset, PairSet, make_pairs
from .flops import FlopModel
from .folds import FoldPlan, make_folds

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1
MODES = ("none", "patch", "gan-ind", "gan-exp")  # Table-1 row order
MODE_LABELS = {
    "none": "No augmentation",
    "patch": "Patch augmentation",
    "gan-ind": "GAN online, independent MLP",
    "gan-exp": "GAN online, expressive MLP",
}
METRICS = ("accuracy", "kappa2", "nll")


class ExperimentError(RuntimeError):
    pass


class LeakageError(AssertionError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    mil_seeds: tuple[int, ...] = (0, 1, 2)
    n_folds: int = 5
    modes: tuple[str, ...] = MODES
    n_augs: int = 5
    max_pairs: int = 15000
    p_apply: float = 1.0
    mil: MilConfig = field(default_factory=lambda: MilConfig(epochs=30, lr=1e-3, weight_decay=1e-4))
    gan: GanConfig = field(default_factory=lambda: GanConfig(epochs=10, lr_g=1e-3, lr_d=1e-3, lambda_cos=100.0))
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.modes) - set(MODES)
        if unknown:
            raise ContractError(f"unknown modes {sorted(unknown)}; choose from {MODES}")
        self.mil_seeds = tuple(int(s) for s in self.mil_seeds)
        self.modes = tuple(m for m in MODES if m in self.modes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mil_seeds"] = list(self.mil_seeds)
        out["modes"] = list(self.modes)
        return out


@dataclass
class Entry:
    mode: str
    fold: int
    seed: int
    result: EvalResult
    best_epoch: int


@dataclass
class ExperimentReport:
    config: dict
    dataset: dict
    entries: list[Entry]
    leakage: list[dict]
    gan: list[dict]
    flops: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def aggregate(self) -> dict[str, dict[str, tuple[float, float]]]:
        """Mean and sample standard deviation per mode and metric over folds x seeds."""
        out = {}
        for mode in MODES:
            rows = [e for e in self.entries if e.mode == mode]
            if not rows:
                continue
            stats = {}
            for m in METRICS:
                vals = np.array([getattr(e.result, m) for e in rows])
                std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                stats[m] = (float(np.mean(vals)), std)
            out[mode] = stats
        return out

    def to_dict(self, include_timing: bool = True) -> dict:
        obj = {
            "schema_version": REPORT_SCHEMA,
            "config": self.config,
            "dataset": self.dataset,
            "rows": [
                {"mode": mode, "label": MODE_LABELS[mode],
                 **{m: {"mean": s[m][0], "std": s[m][1]} for m in METRICS}}
                for mode, s in self.aggregate().items()
            ],
            "entries": [{"mode": e.mode, "fold": e.fold, "seed": e.seed, "best_epoch": e.best_epoch,
                         **e.result.as_dict()} for e in self.entries],
            "leakage": self.leakage,
            "gan": self.gan,
            "flops": self.flops,
        }
        if include_timing:
            obj["timing"] = self.timing
        return obj

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


def fold_pairs(dataset: Dataset, train_idx, rng: Stream, n_augs: int, max_pairs: int) -> PairSet:
    """Oracle pairs built only from training-split bags, optionally subsampled."""
    pairs = make_pairs(rng.child("pairs"), dataset, n_augs, bag_indices=train_idx)
    if max_pairs and len(pairs) > max_pairs:
        pairs = pairs.take(np.sort(rng.child("subsample").permutation(len(pairs))[:max_pairs]))
    return pairs


def check_leakage(pairs: PairSet, train_idx) -> dict:
    used = set(np.unique(pairs.source[:, 0]).tolist())
    ok = used <= set(train_idx)
    if not ok:
        raise LeakageError(f"pair set uses non-training bags {sorted(used - set(train_idx))}")
    return {"pair_bags": sorted(used), "subset_of_train": ok}


def _seed_for(root: Stream, *labels) -> int:
    return int(root.child(*labels).integers(0, 2**31 - 1))


def run_fold(dataset: Dataset, plan: FoldPlan, f: int, cfg: ExperimentConfig) -> dict:
    split = plan[f]
    root = Stream(cfg.seed, ("experiment", "fold", f))
    train_bags, val_bags, test_bags = (dataset.subset(split.train), dataset.subset(split.val),
                                       dataset.subset(split.test))
    truth = np.array([b.label for b in test_bags])
    out = {"entries": [], "leakage": None, "gan": [], "timing": {}}

    generators = {}
    gan_modes = [m for m in cfg.modes if m.startswith("gan-")]
    if gan_modes:
        pairs = fold_pairs(dataset, split.train, root, cfg.n_augs, cfg.max_pairs)
        out["leakage"] = {"fold": f, "n_pairs": len(pairs), **check_leakage(pairs, split.train)}
        for mode in gan_modes:
            variant = mode.split("-", 1)[1]
            gcfg = replace(cfg.gan, variant=variant, seed=_seed_for(root, "gan", variant))
            t0 = time.perf_counter()
            res = train_gan(pairs, gcfg)
            out["timing"][f"gan-{variant}-seconds"] = time.perf_counter() - t0
            generators[mode] = res.generator
            out["gan"].append({"fold": f, "variant": variant, "holdout_cos_init": res.log.holdout_cos[0],
                               "holdout_cos_final": res.log.holdout_cos[-1]})

    for mode in cfg.modes:
        if mode == "none":
            aug = NoAug()
        elif mode == "patch":
            aug = PatchPrecomputed(dataset.oracle, cfg.n_augs)
        else:
            aug = GanOnline(generators[mode], cfg.p_apply)
        for s in cfg.mil_seeds:
            mcfg = replace(cfg.mil, seed=_seed_for(root, "mil", mode, s))
            t0 = time.perf_counter()
            try:
                res = train_mil(train_bags, val_bags, aug, mcfg, K=dataset.K)
            except Exception as exc:
                raise ExperimentError(f"mode {mode}, fold {f}, seed {s}: {exc}") from exc
            out["timing"][f"mil-{mode}-{s}-seconds"] = time.perf_counter() - t0
            P = [res.model.predict_proba(b.instances) for b in test_bags]
            out["entries"].append(Entry(mode, f, s, evaluate(P, truth, dataset.K), res.log.best_epoch))
    return out


def run_experiment(dataset: Dataset, cfg: ExperimentConfig | None = None, plan: FoldPlan | None = None) -> ExperimentReport:
    """Every mode on every fold (one GAN per fold and variant, trained on that fold's training bags)."""
    cfg = cfg or ExperimentConfig()
    plan = plan or make_folds(Stream(cfg.seed, ("experiment", "folds")), len(dataset), dataset.labels, cfg.n_folds)
    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [pool.submit(run_fold, dataset, plan, f, cfg) for f in range(len(plan))]
            fold_out = [fut.result() for fut in futures]
    else:
        fold_out = [run_fold(dataset, plan, f, cfg) for f in range(len(plan))]

    entries = [e for fo in fold_out for e in fo["entries"]]
    entries.sort(key=lambda e: (MODES.index(e.mode), e.fold, e.seed))
    timing = {f"fold{f}": fo["timing"] for f, fo in enumerate(fold_out)}
    timing["total_seconds"] = time.perf_counter() - t0
    return ExperimentReport(
        config=cfg.to_dict(),
        dataset={"seed": dataset.seed, "n_bags": len(dataset), "d": dataset.d, "K": dataset.K},
        entries=entries,
        leakage=[fo["leakage"] for fo in fold_out if fo["leakage"] is not None],
        gan=[g for fo in fold_out for g in fo["gan"]],
        flops=flop_table(dataset.d),
        timing=timing,
    )


def flop_table(d: int, d_ref: int = 1024) -> dict:
    """Per-sample generator cost against the reference extractor at the data's d and at ``d_ref``."""
    fm = FlopModel()
    out = {"reference_flops": fm.reference_flops, "generators": []}
    for variant in ("ind", "exp"):
        for dd in sorted({d, d_ref}):
            gen = make_generator(variant, dd)
            out["generators"].append({"variant": variant, "d": dd, "flops": fm.generator_flops(gen),
                                      "ratio": fm.ratio(gen)})
    return out


@dataclass
class GridResult:
    lr: float
    weight_decay: float
    table: dict[tuple[float, float], float]


def grid_search(dataset: Dataset, mode: str, lr_grid, wd_grid, cfg: ExperimentConfig | None = None,
                plan: FoldPlan | None = None) -> GridResult:
    """Pick (lr, wd) with the lowest mean best-validation NLL across folds.

    Ties go to the smaller learning rate, then the smaller weight decay.
    """
    lr_grid, wd_grid = list(lr_grid), list(wd_grid)
    if not lr_grid or not wd_grid:
        raise ContractError("grids must be nonempty")
    cfg = cfg or ExperimentConfig()
    plan = plan or make_folds(Stream(cfg.seed, ("experiment", "folds")), len(dataset), dataset.labels, cfg.n_folds)
    table = {}
    for lr in lr_grid:
        for wd in wd_grid:
            vals = []
            for f in range(len(plan)):
                split = plan[f]
                root = Stream(cfg.seed, ("grid", "fold", f))
                aug = _grid_mode(dataset, mode, cfg, split, root)
                mcfg = replace(cfg.mil, lr=lr, weight_decay=wd, seed=_seed_for(root, "mil", mode))
                res = train_mil(dataset.subset(split.train), dataset.subset(split.val), aug, mcfg, K=dataset.K)
                vals.append(res.log.best_val_nll)
            table[(lr, wd)] = float(np.mean(vals))
    best = min(table, key=lambda k: (table[k], k[0], k[1]))
    return GridResult(lr=best[0], weight_decay=best[1], table=table)


def _grid_mode(dataset, mode, cfg, split, root):
    if mode == "none":
        return NoAug()
    if mode == "patch":
        return PatchPrecomputed(dataset.oracle, cfg.n_augs)
    if mode.startswith("gan-"):
        variant = mode.split("-", 1)[1]
        pairs = fold_pairs(dataset, split.train, root, cfg.n_augs, cfg.max_pairs)
        gcfg = replace(cfg.gan, variant=variant, seed=_seed_for(root, "gan", variant))
        return GanOnline(train_gan(pairs, gcfg).generator, cfg.p_apply)
    raise ContractError(f"unknown mode {mode!r}")
