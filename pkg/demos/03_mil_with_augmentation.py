"""
Attention MIL with and without augmentation
===========================================

One fold of the cross-validated comparison: the same gated-attention
classifier trained with no augmentation, with precomputed oracle
augmentations, and with an online generator.
"""

from dataclasses import replace

import numpy as np

from embaug.harness.experiment import ExperimentConfig, MODE_LABELS, run_fold
from embaug.harness.folds import make_folds
from embaug.mil import attention_weights, MilModel
from embaug.rng import Stream
from embaug.synthdata import make_dataset

ds = make_dataset(0)
cfg = ExperimentConfig(mil_seeds=(0,))
plan = make_folds(Stream(cfg.seed, ("experiment", "folds")), len(ds), ds.labels)
print("fold 0 sizes (train/val/test):", len(plan[0].train), len(plan[0].val), len(plan[0].test))

out = run_fold(ds, plan, 0, cfg)
print(out["leakage"]["subset_of_train"], "<- GAN pairs only use training bags")
for e in out["entries"]:
    r = e.result
    print(f"{MODE_LABELS[e.mode]:<30} acc {r.accuracy:.3f}  kappa {r.kappa2:.3f}  nll {r.nll:.3f}")

# attention weights: where does an untrained model look?
model = MilModel(ds.d, ds.K, rng=Stream(0))
a = attention_weights(model.attention, ds.bags[0].instances)
print("weights sum:", a.sum(), "max:", a.max().round(4), "uniform:", round(1 / len(a), 4))
