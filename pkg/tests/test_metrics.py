import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embaug.metrics import accuracy, confusion_matrix, evaluate, nll, quadratic_kappa
from embaug.numerics import ContractError


def kappa_bruteforce(preds, truth, K):
    """Quadratic kappa from raw counts with explicit double loops."""
    n = len(truth)
    counts = [[0] * K for _ in range(K)]
    for t, p in zip(truth, preds):
        counts[t][p] += 1
    row = [sum(counts[i]) for i in range(K)]
    col = [sum(counts[i][j] for i in range(K)) for j in range(K)]
    num = den = 0.0
    for i in range(K):
        for j in range(K):
            w = (i - j) ** 2 / (K - 1) ** 2
            num += w * counts[i][j] / n
            den += w * (row[i] / n) * (col[j] / n)
    return 1.0 if den == 0 else 1 - num / den


class TestAccuracy:
    def test_cases(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
        assert accuracy([0, 0], [1, 1]) == 0.0
        assert accuracy([0, 1, 2, 0], [0, 1, 2, 3]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            accuracy([0, 1], [0])


class TestKappa:
    def test_identical(self):
        assert quadratic_kappa([0, 1, 2, 3, 4], [0, 1, 2, 3, 4], 5) == 1.0

    def test_constant_identical_vectors(self):
        assert quadratic_kappa([2, 2, 2], [2, 2, 2], 5) == 1.0

    def test_reversal_is_minus_one(self):
        assert quadratic_kappa([4, 3, 2, 1, 0], [0, 1, 2, 3, 4], 5) == -1.0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            K = int(rng.integers(2, 7))
            n = int(rng.integers(1, 60))
            t = rng.integers(0, K, n)
            p = rng.integers(0, K, n)
            assert abs(quadratic_kappa(p, t, K) - kappa_bruteforce(p.tolist(), t.tolist(), K)) <= 1e-12

    def test_independent_labels_near_zero(self):
        rng = np.random.default_rng(5)
        t = rng.integers(0, 5, 20000)
        p = rng.integers(0, 5, 20000)
        assert abs(quadratic_kappa(p, t, 5)) < 0.05

    def test_needs_two_classes(self):
        with pytest.raises(ContractError):
            quadratic_kappa([0], [0], 1)


class TestNLL:
    def test_confident_correct(self):
        assert nll(np.eye(3), [0, 1, 2]) == 0.0

    def test_uniform(self):
        assert abs(nll(np.full((4, 5), 0.2), [0, 1, 2, 3]) - math.log(5)) <= 1e-12

    def test_two_sample_hand_case(self):
        P = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25]]
        assert nll(P, [0, 2]) == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
        assert nll(P, [0, 2]) == pytest.approx(1.03972, abs=1e-5)

    def test_malformed(self):
        with pytest.raises(ContractError):
            nll([[0.5, 0.6]], [0])


@given(st.integers(2, 6).flatmap(lambda K: st.tuples(
    st.just(K), st.lists(st.tuples(st.integers(0, K - 1), st.integers(0, K - 1)), min_size=1, max_size=40),
    st.randoms(use_true_random=False))))
@settings(max_examples=100, deadline=None)
def test_metrics_ignore_sample_order(args):
    K, pairs, rnd = args
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    perm = list(range(len(pairs)))
    rnd.shuffle(perm)
    t2, p2 = [t[i] for i in perm], [p[i] for i in perm]
    assert accuracy(p, t) == accuracy(p2, t2)
    assert quadratic_kappa(p, t, K) == pytest.approx(quadratic_kappa(p2, t2, K), abs=1e-12)
    cm = confusion_matrix(p, t, K)
    assert cm.sum() == len(t)
    assert accuracy(p, t) == np.trace(cm) / len(t)


def test_evaluate_bundle():
    P = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    res = evaluate(P, [0, 1, 1], 3)
    assert res.accuracy == pytest.approx(2 / 3)
    assert res.confusion.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 0]]
    assert res.nll == pytest.approx(-(math.log(0.7) + math.log(0.8) + math.log(0.3)) / 3)
