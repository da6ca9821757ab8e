import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from labelleak.exceptions import SizeError, UndefinedMetricError
from labelleak.metrics import (BatchEvaluation, class_totals, classacc, classacc_from_totals, confusion_matrix, leacc,
                               lnacc, mean_leacc, mean_lnacc)
from oracles import classacc_ref, leacc_ref, lnacc_ref


def ev(gt, rec):
    return BatchEvaluation(np.array(gt), np.array(rec), sum(gt))


def test_leacc_examples():
    assert leacc([3, 1, 0], [3, 1, 0]) == 1.0
    assert leacc([2, 2, 0], [4, 0, 0]) == pytest.approx(2 / 3)
    assert leacc([2, 0, 1], [0, 3, 0]) == 0.0
    assert leacc([2, 2, 0], [4, 0, 0], complement=False) == pytest.approx(1 / 3)
    with pytest.raises(SizeError):
        leacc([1, 0], [1, 0, 0])


def test_lnacc_examples():
    assert lnacc([3, 1, 0], [4, 0, 0], 4) == 0.75
    assert lnacc([3, 1, 0], [3, 1, 0]) == 1.0
    assert lnacc([3, 0], [0, 3]) == 0.0
    with pytest.raises(SizeError):
        lnacc([3, 1], [4, 0], 5)


def test_classacc_examples():
    batches = [ev([3, 2, 0], [3, 0, 2]), ev([2, 1, 0], [2, 1, 0])]
    assert class_totals(batches)[0].tolist() == [5, 3, 0]
    assert classacc(batches) == pytest.approx(2 / 3)
    assert classacc([ev([3, 1], [3, 1])]) == 1.0
    assert classacc([ev([4, 0], [0, 4])]) == 0.0
    with pytest.raises(UndefinedMetricError):
        classacc_from_totals(np.zeros(3, int), np.ones(3, int))
    with pytest.raises(SizeError):
        classacc([])


def test_classacc_is_not_positional_agreement():
    # sorted positional agreement would give 0 here; totals-based gives 1/2
    assert classacc([ev([2, 2, 0], [0, 2, 2])]) == pytest.approx(0.5)


def test_batch_evaluation_checks_n():
    with pytest.raises(SizeError):
        BatchEvaluation(np.array([1, 2]), np.array([3, 0]), 4)


def test_confusion_examples():
    cm = confusion_matrix([ev([2, 1, 0], [2, 1, 0])])
    np.testing.assert_allclose(cm, np.diag([1.0, 1.0, 0.0]))
    cm = confusion_matrix([ev([2, 0], [0, 2])])
    assert cm[0].tolist() == [0.0, 1.0]
    cm = confusion_matrix([ev([4, 2, 0], [1, 2, 3])])
    np.testing.assert_allclose(cm[0], [0.25, 0.0, 0.75])


@pytest.mark.parametrize("seed", range(30))
def test_confusion_diagonal_against_classacc(seed):
    rng = np.random.default_rng(seed)
    k, n = 4, 20
    pairs = [(1 + rng.multinomial(n - k, np.ones(k) / k), rng.multinomial(n, rng.dirichlet(np.ones(k))))
             for _ in range(int(rng.integers(1, 5)))]
    batches = [ev(g.tolist(), r.tolist()) for g, r in pairs]
    cm = confusion_matrix(batches)
    np.testing.assert_allclose(cm.sum(axis=1), 1.0)
    direct = sum(np.minimum(g, r) for g, r in pairs) / sum(g for g, _ in pairs)
    np.testing.assert_allclose(np.diag(cm), direct)
    # matches within batches can only undercount the pooled per-class match
    assert np.diag(cm).mean() <= classacc(batches) + 1e-12
    if len(batches) == 1:
        assert np.diag(cm).mean() == pytest.approx(classacc(batches))


def test_confusion_diagonal_can_fall_below_classacc():
    batches = [ev([2, 1], [1, 2]), ev([1, 2], [2, 1])]
    assert classacc(batches) == 1.0
    assert np.diag(confusion_matrix(batches)).mean() == pytest.approx(2 / 3)


hist3 = st.lists(st.integers(0, 6), min_size=3, max_size=3).filter(lambda h: sum(h) > 0)


histograms = st.integers(1, 8).flatmap(lambda k: st.tuples(
    st.lists(st.integers(0, 6), min_size=k, max_size=k).filter(lambda h: sum(h) > 0),
    st.lists(st.integers(0, 6), min_size=k, max_size=k)))


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_brute_force_on_random_pairs(seed):
    rng = np.random.default_rng(seed)
    for _ in range(200):
        k = int(rng.integers(1, 20))
        n = int(rng.integers(1, 60))
        gt = rng.multinomial(n, rng.dirichlet(np.ones(k))).tolist()
        rec = rng.multinomial(n, rng.dirichlet(np.ones(k))).tolist()
        assert leacc(gt, rec) == leacc_ref(gt, rec)
        assert leacc(gt, rec, False) == leacc_ref(gt, rec, False)
        assert lnacc(gt, rec) == lnacc_ref(gt, rec)
        assert classacc([ev(gt, rec)]) == classacc_ref([(gt, rec)])


@given(histograms, st.randoms(use_true_random=False))
def test_permutation_invariance_and_range(pair, rnd):
    gt, rec = pair
    perm = list(range(len(gt)))
    rnd.shuffle(perm)
    pg, pr = [gt[i] for i in perm], [rec[i] for i in perm]
    assert leacc(gt, rec) == leacc(pg, pr)
    assert lnacc(gt, rec) == lnacc(pg, pr)
    assert classacc([ev(gt, rec)]) == pytest.approx(classacc([ev(pg, pr)]))
    for v in (leacc(gt, rec), lnacc(gt, rec), classacc([ev(gt, rec)])):
        assert 0.0 <= v <= 1.0


@given(hist3)
def test_lnacc_one_iff_equal(gt):
    assert lnacc(gt, gt) == 1.0
    n = sum(gt)
    other = [n] + [0] * (len(gt) - 1)
    assert (lnacc(gt, other) == 1.0) == (other == gt)


@given(st.lists(st.tuples(hist3, st.lists(st.integers(0, 6), min_size=3, max_size=3)), min_size=2, max_size=6))
def test_classacc_aggregation_is_associative(pairs):
    batches = [ev(g, r) for g, r in pairs]
    g, r = class_totals(batches)
    half = len(batches) // 2
    g1, r1 = class_totals(batches[:half])
    g2, r2 = class_totals(batches[half:])
    assert classacc(batches) == classacc_from_totals(g1 + g2, r1 + r2) == classacc_from_totals(g, r)


def test_batch_means():
    batches = [ev([3, 1, 0], [4, 0, 0]), ev([2, 2, 0], [2, 2, 0])]
    assert mean_lnacc(batches) == pytest.approx((0.75 + 1.0) / 2)
    assert mean_leacc(batches) == pytest.approx((2 / 3 + 1.0) / 2)
