"""Stratified 5-fold plans with rotating validation folds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..numerics import ContractError
from ..rng import Stream


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Split, ...]

    def __len__(self) -> int:
        return len(self.folds)

    def __getitem__(self, i: int) -> Split:
        return self.folds[i]

    def to_dict(self) -> list[dict]:
        return [{"train": list(s.train), "val": list(s.val), "test": list(s.test)} for s in self.folds]


def make_folds(rng: Stream, n_bags: int, labels, n_folds: int = 5) -> FoldPlan:
    """Deal class-sorted, shuffled indices round-robin into ``n_folds`` chunks.

    Fold ``f`` tests on chunk ``f``, validates on chunk ``f+1 (mod n)`` and
    trains on the rest, which gives a 60/20/20 split for five folds.
    """
    labels = np.asarray(labels)
    if n_bags < 10 or len(labels) != n_bags:
        raise ContractError(f"need >= 10 bags with one label each, got {n_bags} bags / {len(labels)} labels")
    ordered = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        ordered.extend(members[rng.child("class", int(c)).permutation(len(members))])
    # rotate the starting fold so small classes do not all land in fold 0
    ordered = np.array(ordered)
    chunk_of = (np.arange(n_bags) + int(rng.child("offset").integers(0, n_folds))) % n_folds
    chunks = [np.sort(ordered[chunk_of == f]) for f in range(n_folds)]

    classes = set(np.unique(labels).tolist())
    for f, chunk in enumerate(chunks):
        missing = classes - set(labels[chunk].tolist())
        if missing:
            warnings.warn(f"fold {f} has no bags of class(es) {sorted(missing)}", stacklevel=2)

    folds = []
    for f in range(n_folds):
        v = (f + 1) % n_folds
        train = np.sort(np.concatenate([chunks[k] for k in range(n_folds) if k not in (f, v)]))
        folds.append(Split(tuple(int(i) for i in train), tuple(int(i) for i in chunks[v]),
                           tuple(int(i) for i in chunks[f])))
    return FoldPlan(tuple(folds))
