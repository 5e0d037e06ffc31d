import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxvad.metrics import auc, eer, eer_from_roc, roc_curve
from oracles import confusion_rates, dense_sweep_eer, pairwise_auc


def random_set(rng, n=None):
    n = n or int(rng.integers(10, 501))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    # rounding creates ties and keeps distinct scores well apart on a 1e5 grid
    s = np.round(rng.normal(size=n) + 0.8 * y * rng.uniform(0, 2), 3)
    return s, y


def test_roc_perfect_separation():
    fpr, tpr, _ = roc_curve([0.1, 0.9], [0, 1])
    pts = set(zip(fpr, tpr))
    assert {(0, 0), (0, 1), (1, 1)} <= pts


def test_roc_all_equal_scores():
    fpr, tpr, thr = roc_curve([0.5] * 6, [0, 1, 0, 1, 1, 0])
    assert list(zip(fpr, tpr)) == [(0, 0), (1, 1)]
    assert thr[0] == np.inf


def test_roc_single_class_raises():
    with pytest.raises(ValueError):
        roc_curve([1, 2, 3], [0, 0, 0])
    with pytest.raises(ValueError):
        auc([1, 2], [1, 1])
    with pytest.raises(ValueError):
        eer([1, 2], [0, 2])


@pytest.mark.parametrize("seed", range(20))
def test_roc_points_match_confusion_recount(seed):
    s, y = random_set(np.random.default_rng(seed), 200)
    fpr, tpr, thr = roc_curve(s, y)
    assert (fpr[0], tpr[0]) == (0, 0) and (fpr[-1], tpr[-1]) == (1, 1)
    assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()
    assert len(fpr) <= len(np.unique(s)) + 1
    for f, t, th in zip(fpr, tpr, thr):
        ef, et = confusion_rates(s, y, th)
        assert (f, t) == pytest.approx((ef, et), abs=1e-15)


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 8, [0, 1] * 4) == 0.5
    # one tie across classes: 3 of 4 pairs won, 1 tied
    assert auc([0.1, 0.5, 0.5, 0.9], [0, 0, 1, 1]) == 0.875


def test_eer_examples():
    assert eer([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 0.0
    assert eer([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 1.0


def test_eer_interpolates_between_points():
    # ROC (0,0) (0,.5) (.5,.5) (.5,1) (1,1): the diagonal FPR=FNR is hit at 0.5
    assert eer([4, 3, 2, 1], [1, 0, 1, 0]) == 0.5
    fpr, tpr = np.array([0, 0.2, 0.6, 1.0]), np.array([0, 0.6, 0.9, 1.0])
    # d = fpr - (1 - tpr): -1, -0.2, 0.5, 1 -> crossing at w = 0.2/0.7 along the 2nd segment
    assert eer_from_roc(fpr, tpr) == pytest.approx(0.2 + (0.2 / 0.7) * 0.4, abs=1e-15)


@pytest.mark.parametrize("seed", range(30))
def test_auc_matches_pairwise_oracle(seed):
    s, y = random_set(np.random.default_rng(seed))
    assert abs(auc(s, y) - pairwise_auc(s, y)) < 1e-9


@pytest.mark.parametrize("seed", range(30))
def test_eer_matches_dense_sweep(seed):
    s, y = random_set(np.random.default_rng(1000 + seed))
    assert abs(eer(s, y) - dense_sweep_eer(s, y)) < 1e-3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=60))
def test_auc_symmetry_and_monotone_transform(rows):
    s = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows], dtype=int)
    if y.all() or not y.any():
        return
    a = auc(s, y)
    assert 0 <= a <= 1
    assert a + auc(-s, y) == pytest.approx(1.0, abs=1e-9)
    assert auc(np.exp(s / 3) + 5, y) == pytest.approx(a, abs=1e-12)
    assert a == pytest.approx(pairwise_auc(s, y), abs=1e-9)
    assert 0 <= eer(s, y) <= 1
