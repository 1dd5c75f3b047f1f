"""Slide-level evaluation metrics: accuracy, quadratic weighted kappa, NLL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError

NLL_EPS = 1e-12


@dataclass
class EvalResult:
    accuracy: float
    kappa2: float
    nll: float
    n: int
    confusion: np.ndarray  # (K, K), rows = truth, cols = prediction

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "kappa2": self.kappa2, "nll": self.nll, "n": self.n,
                "confusion": self.confusion.tolist()}


def _labels(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).reshape(-1)


def confusion_matrix(preds, truth, K: int) -> np.ndarray:
    preds, truth = _labels(preds), _labels(truth)
    if len(preds) != len(truth):
        raise ContractError(f"length mismatch: {len(preds)} predictions, {len(truth)} labels")
    if preds.size and (preds.min() < 0 or truth.min() < 0 or preds.max() >= K or truth.max() >= K):
        raise ContractError(f"labels outside [0, {K})")
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    return cm


def accuracy(preds, truth) -> float:
    preds, truth = _labels(preds), _labels(truth)
    if len(preds) != len(truth):
        raise ContractError(f"length mismatch: {len(preds)} predictions, {len(truth)} labels")
    if len(preds) == 0:
        raise ContractError("accuracy of an empty sample")
    return float(np.mean(preds == truth))


def quadratic_kappa(preds, truth, K: int) -> float:
    """Cohen's kappa with quadratic weights (i - j)^2 / (K - 1)^2.

    Perfect agreement on a constant label vector (0/0) counts as 1.0.
    """
    if K < 2:
        raise ContractError("quadratic kappa needs K >= 2")
    cm = confusion_matrix(preds, truth, K)
    n = int(cm.sum())
    if n == 0:
        raise ContractError("kappa of an empty sample")
    # integer arithmetic until the last division; the (K-1)^2 weight scale cancels
    i, j = np.indices((K, K))
    W = ((i - j) ** 2).astype(object)
    num = int((W * cm.astype(object)).sum()) * n
    den = int((W * np.outer(cm.sum(axis=1), cm.sum(axis=0)).astype(object)).sum())
    if den == 0:
        return 1.0
    return 1.0 - num / den


def nll(prob_vectors, truth, tol: float = 1e-9) -> float:
    P = np.atleast_2d(np.asarray(prob_vectors, dtype=np.float64))
    truth = _labels(truth)
    if len(P) != len(truth) or len(P) == 0:
        raise ContractError(f"{len(P)} probability vectors for {len(truth)} labels")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > tol):
        raise ContractError("probability vectors must be non-negative and sum to 1")
    if truth.min() < 0 or truth.max() >= P.shape[1]:
        raise ContractError("label outside the probability vector")
    p_true = P[np.arange(len(P)), truth]
    return float(np.mean(-np.log(np.maximum(p_true, NLL_EPS))))


def evaluate(prob_vectors, truth, K: int) -> EvalResult:
    P = np.atleast_2d(np.asarray(prob_vectors, dtype=np.float64))
    truth = _labels(truth)
    preds = P.argmax(axis=1)
    return EvalResult(
        accuracy=accuracy(preds, truth),
        kappa2=quadratic_kappa(preds, truth, K),
        nll=nll(P, truth),
        n=len(truth),
        confusion=confusion_matrix(preds, truth, K),
    )
