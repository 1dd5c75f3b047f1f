"""
Training an embedding-space augmenter
=====================================

Small desk setting: d = 16, 5000 (h, A(h)) pairs, both generator variants.
We track held-out cosine alignment, the distance to the true augmentation
manifold (brute-force grid over the oracle parameters) and sample diversity.
"""

import time

import numpy as np

from embaug.dagan import GanConfig, diversity_ratio, manifold_distance, oracle_grid, train_gan
from embaug.rng import Stream
from embaug.synthdata import DatasetConfig, make_dataset, make_pairs

ds = make_dataset(0, DatasetConfig(d=16, n_bags=60))
pairs = make_pairs(Stream(0), ds, 5)
order = Stream(1).permutation(len(pairs))
train, held = pairs.take(order[:5000]), pairs.take(order[-200:])

grid = oracle_grid(ds.oracle, Stream(2))
for variant in ("ind", "exp"):
    t0 = time.perf_counter()
    res = train_gan(train, GanConfig(variant=variant, epochs=50, seed=0))
    print(f"\n{variant}: trained in {time.perf_counter() - t0:.0f}s")
    print("  held-out cos by epoch:", np.round(res.log.holdout_cos[::10], 3))

    z = Stream(3).normal(held.h.shape)
    fake = res.generator.apply(z, held.h)
    dist = manifold_distance(ds.oracle, held.h, fake, grid)
    print(f"  share within 0.05 of the oracle manifold: {np.mean(dist < 0.05):.2f}")
    g, o = diversity_ratio(res.generator, ds.oracle, held.h[:50], Stream(4))
    print(f"  diversity: generated {g:.3f} vs oracle {o:.3f} (ratio {g / o:.2f})")
