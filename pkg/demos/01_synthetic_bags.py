"""
Synthetic slide bags
====================

Each slide is a bag of patch embeddings.  Grade-c slides mix a background
prototype with prototypes 1..c, and every patch passes through a hidden
"acquisition" transform (rotation in random planes, jitter, scale) that the
augmenters later try to imitate.
"""

import numpy as np

from embaug.rng import Stream
from embaug.synthdata import (DatasetConfig, make_dataset, make_pairs, mixture_weights,
                              nearest_prototype_classify)

# the default configuration: 155 bags, d = 64, five ordinal classes
ds = make_dataset(seed=0)
print(f"{len(ds)} bags, d={ds.d}, classes={np.bincount(ds.labels).tolist()}")
sizes = np.array([b.n for b in ds.bags])
print(f"bag sizes: mean {sizes.mean():.1f}, min {sizes.min()}, max {sizes.max()}")

# mixture weights per class
for c in range(ds.K):
    print(c, np.round(mixture_weights(c, ds.K), 2))

# prototypes are unit vectors with small mutual overlap
P = ds.prototypes
print("max |cos| between prototypes:", np.abs(P @ P.T - np.eye(ds.K)).max().round(3))

# a likelihood classifier that knows the prototypes recovers the labels
pred = nearest_prototype_classify(ds.bags, ds.prototypes)
print("nearest-prototype accuracy:", np.mean(pred == ds.labels))

# (h, A(h)) pairs for training a generator
pairs = make_pairs(Stream(1), ds, n_augs_per_patch=5, bag_indices=range(10))
cos = np.sum(pairs.h * pairs.h_aug, 1) / np.linalg.norm(pairs.h, axis=1) / np.linalg.norm(pairs.h_aug, axis=1)
print(f"{len(pairs)} pairs; cos(h, A(h)) mean {cos.mean():.3f}, min {cos.min():.3f}")

# noise level controls difficulty
for sigma in (0.0, 0.35, 0.8):
    d2 = make_dataset(0, DatasetConfig(sigma=sigma, n_bags=50))
    acc = np.mean(nearest_prototype_classify(d2.bags, d2.prototypes) == d2.labels)
    print(f"sigma={sigma}: nearest-prototype accuracy {acc:.2f}")
