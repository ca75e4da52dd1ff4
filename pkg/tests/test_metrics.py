import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from strkm_ood.errors import ValidationError
from strkm_ood.linalg import make_rng
from strkm_ood.metrics import (
    EvalReport,
    aupr,
    auroc,
    evaluate,
    fpr_at_tpr,
    mean_abs_difference,
    mmd_rbf,
    overlap_coefficient,
    standardize_scores,
    wasserstein1,
)


# --- independent oracles ----------------------------------------------------

def auroc_oracle(a, b):
    total = Fraction(0)
    for x, y in itertools.product(a, b):
        total += 1 if y > x else Fraction(1, 2) if y == x else 0
    return total / (len(a) * len(b))


def aupr_oracle(a, b):
    scores = list(a) + list(b)
    labels = [0] * len(a) + [1] * len(b)
    ap, prev_recall = Fraction(0), Fraction(0)
    for t in sorted(set(scores), reverse=True):
        pred = [y for s, y in zip(scores, labels) if s >= t]
        tp = sum(pred)
        recall = Fraction(tp, len(b))
        ap += (recall - prev_recall) * Fraction(tp, len(pred))
        prev_recall = recall
    return ap


def fpr_oracle(a, b, p=0.95):
    s = sorted(a)
    h = (len(s) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    gamma = s[lo] + (h - lo) * (s[hi] - s[lo])
    return sum(1 for y in b if y <= gamma) / len(b)


def w1_quantile_oracle(a, b):
    a, b = sorted(a), sorted(b)
    cuts = sorted({Fraction(k, len(a)) for k in range(len(a) + 1)}
                  | {Fraction(k, len(b)) for k in range(len(b) + 1)})
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        mid = (lo + hi) / 2
        qa = a[math.floor(mid * len(a))]
        qb = b[math.floor(mid * len(b))]
        total += float(hi - lo) * abs(qa - qb)
    return total


def mmd_oracle(a, b):
    z = np.concatenate([a, b])
    n = z.size
    two_sigma_sq = np.mean([abs(z[i] - z[j]) for i in range(n) for j in range(i + 1, n)])
    k = np.exp(-np.subtract.outer(z, z) ** 2 / two_sigma_sq)
    na = len(a)
    v = k[:na, :na].mean() + k[na:, na:].mean() - 2 * k[:na, na:].mean()
    return math.sqrt(max(v, 0.0))


# --- examples ----------------------------------------------------------------

def test_fpr_examples(rng):
    a = rng.standard_normal(500)
    assert fpr_at_tpr(a, a.max() + 1 + rng.uniform(size=50)) == 0.0
    assert fpr_at_tpr(a, a) == pytest.approx(0.95, abs=0.005)
    assert fpr_at_tpr(np.arange(1.0, 101.0), [50.5, 96.5]) == 0.5


def test_auroc_examples():
    assert auroc([0.1, 0.2], [0.5, 0.9]) == 1.0
    assert auroc([1.0, 2.0, 2.0], [1.0, 2.0, 2.0]) == 0.5
    assert auroc([0.1, 0.4], [0.3, 0.9]) == 0.75


def test_aupr_examples(rng):
    assert aupr([0.1, 0.2], [0.5, 0.9]) == 1.0
    # thresholds 0.9 (P=1, R=1/2), 0.4 (P=1/2), 0.3 (P=2/3, R=1) -> 1/2 + 1/2 * 2/3
    assert aupr([0.1, 0.4], [0.3, 0.9]) == pytest.approx(5 / 6, abs=1e-15)
    a, b = rng.uniform(size=4000), rng.uniform(size=1000)
    assert aupr(a, b) == pytest.approx(0.2, abs=0.03)


def test_overlap_examples(rng):
    a = rng.standard_normal(300)
    assert overlap_coefficient(a, a) >= 0.999
    assert overlap_coefficient(1e-3 * rng.standard_normal(50), 1e6 + 1e-3 * rng.standard_normal(50)) <= 1e-3
    with pytest.raises(ValidationError):
        overlap_coefficient(a[:4], a)
    with pytest.raises(ValidationError):
        overlap_coefficient(np.ones(10), a)


def test_overlap_gaussians_closed_form():
    g = make_rng(0)
    a, b = g.standard_normal(4000), 4.0 + g.standard_normal(4000)
    assert overlap_coefficient(a, b) == pytest.approx(2 * norm.cdf(-2), abs=0.01)


def test_mmd_examples(rng):
    a = rng.standard_normal(40)
    b = rng.standard_normal(30) + 0.5
    assert mmd_rbf(a, a) <= 1e-12
    assert mmd_rbf(a, b) == mmd_rbf(b, a)
    assert mmd_rbf([0.0, 1.0], [10.0, 11.0]) == pytest.approx(mmd_oracle([0.0, 1.0], [10.0, 11.0]), abs=1e-14)
    # bandwidth: mean of |z_i - z_j| over the six distinct pairs is 7
    assert mean_abs_difference([0.0, 1.0, 10.0, 11.0]) == 7.0
    with pytest.raises(ValidationError):
        mmd_rbf([1.0, 1.0], [1.0, 1.0])


def test_wasserstein_examples(rng):
    a = rng.standard_normal(100)
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1(a, a + 2.5) == pytest.approx(2.5, abs=1e-12)
    assert wasserstein1([0.0, 1.0], [0.0, 3.0]) == 1.0


def test_standardize_examples(rng):
    np.testing.assert_allclose(standardize_scores([0.0, 2.0]), [0.0, 2.0])
    s = rng.standard_normal(50)
    z = standardize_scores(s)
    assert z.min() == 0.0 and z.std() == pytest.approx(1.0)
    np.testing.assert_allclose(standardize_scores(3.0 * s - 7.0), z, atol=1e-12)
    with pytest.raises(ValidationError):
        standardize_scores([1.0, 1.0])


def test_empty_inputs_rejected():
    for f in (fpr_at_tpr, auroc, aupr):
        with pytest.raises(ValidationError):
            f([], [1.0])


# --- oracle equivalence -------------------------------------------------------

@pytest.mark.parametrize("seed", range(40))
def test_rank_metrics_match_enumeration(seed):
    g = make_rng(seed)
    na, nb = int(g.integers(1, 21)), int(g.integers(1, 21))
    z = g.permutation(g.standard_normal(na + nb))  # all distinct
    a, b = z[:na].tolist(), z[na:].tolist()
    assert auroc(a, b) == float(auroc_oracle(a, b))
    assert aupr(a, b) == pytest.approx(float(aupr_oracle(a, b)), abs=1e-15)
    assert fpr_at_tpr(a, b) == fpr_oracle(a, b)


@pytest.mark.parametrize("seed", range(20))
def test_tied_scores_match_enumeration(seed):
    g = make_rng(100 + seed)
    a = g.integers(0, 5, size=int(g.integers(1, 15))).astype(float).tolist()
    b = g.integers(0, 5, size=int(g.integers(1, 15))).astype(float).tolist()
    assert auroc(a, b) == pytest.approx(float(auroc_oracle(a, b)), abs=1e-15)
    assert aupr(a, b) == pytest.approx(float(aupr_oracle(a, b)), abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_wasserstein_matches_oracles(seed):
    g = make_rng(200 + seed)
    n = int(g.integers(1, 30))
    a, b = g.standard_normal(n), g.standard_normal(n) * 2
    assert wasserstein1(a, b) == pytest.approx(np.mean(np.abs(np.sort(a) - np.sort(b))), abs=1e-12)
    c = g.standard_normal(int(g.integers(1, 30)))
    assert wasserstein1(a, c) == pytest.approx(w1_quantile_oracle(a, c), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mmd_matches_kernel_oracle(seed):
    g = make_rng(300 + seed)
    a, b = g.standard_normal(int(g.integers(2, 15))), g.standard_normal(int(g.integers(2, 15))) + 1
    assert mmd_rbf(a, b) == pytest.approx(mmd_oracle(a, b), abs=1e-12)


# --- properties ---------------------------------------------------------------

scores = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_auroc_monotone_invariance(a, b):
    # strictly increasing in exact terms: map each distinct value through its rank
    levels = np.unique(np.r_[a, b])

    def f(v):
        return np.exp(np.searchsorted(levels, v) / 7.0) - 3.0

    assert auroc(a, b) == auroc(f(a), f(b))
    assert auroc(a, b) == auroc(8.0 * np.asarray(a), 8.0 * np.asarray(b))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30, unique=True))
def test_auroc_swap_complement(z):
    k = len(z) // 2
    a, b = z[:k], z[k:]
    # swapping the classes with negated scores leaves auroc unchanged; swapping alone complements it
    assert auroc(a, b) == auroc(-np.asarray(b), -np.asarray(a))
    assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(scores, scores, scores)
def test_wasserstein_triangle(a, b, c):
    assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_overlap_bounds_and_symmetry(seed):
    g = make_rng(seed)
    a = g.standard_normal(int(g.integers(5, 60))) * g.uniform(0.1, 3)
    b = g.standard_normal(int(g.integers(5, 60))) + g.uniform(-5, 5)
    o = overlap_coefficient(a, b)
    assert 0.0 <= o <= 1.0
    assert o == pytest.approx(overlap_coefficient(b, a), abs=1e-12)


def test_same_distribution_fpr():
    g = make_rng(5)
    fprs = [fpr_at_tpr(g.standard_normal(1000), g.standard_normal(1000)) for _ in range(5)]
    assert all(abs(f - 0.95) <= 0.02 for f in fprs)


def test_evaluate_and_report(rng):
    a = rng.standard_normal(200)
    rep = evaluate(a, a)
    assert rep.auroc == 0.5 and rep.wasserstein1 == 0.0 and rep.overlap >= 0.999
    text = rep.to_text({"energy": "full"})
    lines = text.strip().split("\n")
    assert lines[0] == "energy: full"
    assert [ln.split(":")[0] for ln in lines[1:]] == list(EvalReport.__dataclass_fields__)
