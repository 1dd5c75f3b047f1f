"""Analytic and wall-clock cost of a generator pass vs the reference extractor."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ..dagan import sample_augmentation
from ..rng import Stream
from .flops import FlopModel

CAL_N = 1024  # side of the square matmuls in the calibrated workload


@dataclass
class SpeedupReport:
    variant: str
    d: int
    reference_flops: int
    generator_flops: int
    flop_ratio: float
    batch: int
    generator_seconds_per_sample: float
    reference_seconds_per_sample: float
    wall_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def calibrated_workload(total_flops: int, rng=None):
    """Return a callable doing ``total_flops`` worth of dense float64 matmuls.

    Full ``CAL_N``-square products cover most of the budget; one thin
    ``(m, CAL_N) @ (CAL_N, CAL_N)`` product covers the remainder.
    """
    rng = rng or Stream(0, ("bench", "workload"))
    per_square = 2 * CAL_N ** 3
    n_full, rest = divmod(int(total_flops), per_square)
    m = max(1, round(rest / (2 * CAL_N * CAL_N)))
    A = rng.normal((CAL_N, CAL_N))
    B = rng.normal((CAL_N, CAL_N))
    T = rng.normal((m, CAL_N))

    def run():
        acc = 0.0
        for _ in range(n_full):
            acc += float((A @ B)[0, 0])
        acc += float((T @ B)[0, 0])
        return acc

    return run


def bench_speedup(generator, flop_model: FlopModel | None = None, batch: int = 256, repeats: int = 3,
                  rng=None) -> SpeedupReport:
    """FLOP ratio plus measured per-sample throughput ratio on this machine."""
    flop_model = flop_model or FlopModel()
    rng = rng or Stream(0, ("bench",))
    ref = flop_model.reference_flops
    gflops = flop_model.generator_flops(generator)

    h = rng.child("h").normal((batch, generator.d))
    zrng = rng.child("z")
    gen_t = _best_of(lambda: sample_augmentation(generator, h, zrng), repeats) / batch
    ref_t = _best_of(calibrated_workload(ref, rng.child("workload")), repeats)
    return SpeedupReport(
        variant=generator.variant,
        d=generator.d,
        reference_flops=ref,
        generator_flops=gflops,
        flop_ratio=ref / gflops,
        batch=batch,
        generator_seconds_per_sample=gen_t,
        reference_seconds_per_sample=ref_t,
        wall_ratio=ref_t / gen_t,
    )


def flop_sweep(d: int, widths_list, flop_model: FlopModel | None = None) -> list[tuple[tuple[int, ...], float]]:
    """FLOP ratio of expressive generators with the given hidden widths."""
    from ..dagan import GeneratorExp

    flop_model = flop_model or FlopModel()
    return [(tuple(w), flop_model.ratio(GeneratorExp(d, widths=tuple(w)))) for w in widths_list]
