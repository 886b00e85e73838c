import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgperturb.exceptions import KTooLarge, LengthMismatch
from kgperturb.metrics import (
    SampleMetrics,
    deg_correlation,
    paired_bootstrap,
    pearson,
    per_sample_metrics,
    read_metric_table,
    summarize,
    top_k_perturbed,
    write_metric_table,
)


def pearson_oracle(x, y):
    """Textbook formula with math.fsum, independent of numpy reductions."""
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = math.fsum((a - mx) ** 2 for a in x)
    vy = math.fsum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_pearson_zero_variance_is_zero():
    assert pearson([1, 1, 1], [1, 2, 3]) == 0.0
    assert pearson([1, 2, 3], [5, 5, 5]) == 0.0


def test_pearson_errors():
    with pytest.raises(LengthMismatch):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson([1], [1])


def test_pearson_matches_oracle_on_1000_pairs():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        x = rng.normal(size=n)
        y = 0.5 * x + rng.normal(size=n) * rng.uniform(0.1, 3)
        worst = max(worst, abs(pearson(x, y) - pearson_oracle(x.tolist(), y.tolist())))
    assert worst <= 1e-10


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(3, 30), elements=finite), st.integers(0, 2**31),
       st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine_invariance(x, seed, a, b):
    assume(np.ptp(x) > 1e-3)
    y = np.random.default_rng(seed).normal(size=x.size)
    assert pearson(a * x + b, y) == pytest.approx(pearson(x, y), abs=1e-9)
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)


def test_top_k_example():
    delta = np.array([0.1, -5, 3, 0.05])
    assert top_k_perturbed(delta, np.zeros(4), 2).tolist() == [1, 2]


def test_top_k_ties_prefer_lower_index():
    assert top_k_perturbed([1, -1, 1, 1], np.zeros(4), 2).tolist() == [0, 1]


def test_deg_k_too_large():
    with pytest.raises(KTooLarge):
        deg_correlation(np.zeros(3), np.ones(3), np.zeros(3), k=4)


def test_deg_pred_equals_obs():
    rng = np.random.default_rng(0)
    obs = rng.normal(size=64)
    for k in (2, 10, 50, 64):
        assert deg_correlation(obs, obs, rng.normal(size=64), k) == pytest.approx(1.0)


def test_deg_restricts_to_perturbed_genes():
    baseline = np.zeros(6)
    obs = np.array([5.0, -4.0, 3.0, 0.01, 0.02, 0.0])
    pred = np.array([5.0, -4.0, 3.0, 9.0, -9.0, 9.0])  # wrong only outside the top 3
    assert deg_correlation(pred, obs, baseline, 3) == pytest.approx(1.0)
    assert pearson(pred, obs) < 0.5


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_deg_with_k_equal_g_is_pearson(g, seed):
    rng = np.random.default_rng(seed)
    pred, obs, base = rng.normal(size=(3, g))
    assert deg_correlation(pred, obs, base, k=g) == pearson(pred, obs)


def test_deg_oracle_predictions_on_synthbench():
    from conftest import SMALL
    from kgperturb.synthbench import SynthParams, generate, oracle_delta

    ds = generate(SynthParams(**{**SMALL, "noise_sd": 0.0}))
    data, truth = ds.data, ds.truth
    for i in range(len(data)):
        base = data.baseline_of(data.cell_ids[i])
        pred = base + oracle_delta(data.drug_ids[i], data.cell_ids[i], truth)
        assert deg_correlation(pred, data.Y[i], base, 16) == pytest.approx(1.0, abs=1e-6)


# -- bootstrap ------------------------------------------------------------------------------

def test_bootstrap_identical_inputs():
    a = np.random.default_rng(0).normal(size=40)
    r = paired_bootstrap(a, a.copy(), iters=1000, seed=3)
    assert r.mean_diff == 0.0 and r.ci95 == (0.0, 0.0) and r.p_one_sided == 1.0


def test_bootstrap_constant_shift():
    b = np.random.default_rng(1).normal(size=40)
    r = paired_bootstrap(b + 1.0, b, iters=1000, seed=3)
    assert r.ci95 == pytest.approx((1.0, 1.0), abs=1e-12)
    assert r.p_one_sided == 1 / 1001


def test_bootstrap_errors():
    with pytest.raises(LengthMismatch):
        paired_bootstrap([1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        paired_bootstrap([1], [1])


def test_bootstrap_seeded_determinism():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=30), rng.normal(size=30)
    assert paired_bootstrap(a, b, seed=11) == paired_bootstrap(a, b, seed=11)
    assert paired_bootstrap(a, b, seed=11).ci95 != paired_bootstrap(a, b, seed=12).ci95


@pytest.mark.parametrize("shift", [0.0, 0.15, 0.3])
def test_bootstrap_p_matches_high_iteration_reference(shift):
    rng = np.random.default_rng(42)
    b = rng.normal(size=50)
    a = b + shift + rng.normal(scale=1.0, size=50)
    d = a - b
    ref_rng = np.random.default_rng(999)
    diffs = d[ref_rng.integers(0, d.size, size=(100_000, d.size))].mean(axis=1)
    p_ref = (1 + np.count_nonzero(diffs <= 0)) / 100_001
    assert abs(paired_bootstrap(a, b, iters=1000, seed=0).p_one_sided - p_ref) <= 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31), st.integers(10, 200))
def test_bootstrap_ci_brackets_median(n, seed, iters):
    rng = np.random.default_rng(seed)
    r = paired_bootstrap(rng.normal(size=n), rng.normal(size=n), iters=iters, seed=seed)
    assert r.ci95[0] <= r.ci95[1]
    assert 1 / (iters + 1) <= r.p_one_sided <= 1.0


# -- tables --------------------------------------------------------------------------------

def test_per_sample_metrics_and_table_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    obs, base = rng.normal(size=(2, 5, 12))
    pred = obs + 0.1 * rng.normal(size=obs.shape)
    pear, deg = per_sample_metrics(pred, obs, base, k=4)
    rows = [SampleMetrics(i, f"d{i}", "c0", pear[i], deg[i]) for i in range(5)]
    write_metric_table(tmp_path / "m.csv", rows)
    back = read_metric_table(tmp_path / "m.csv")
    assert back == rows
    s = summarize(back)
    assert s["n"] == 5 and s["deg_mean"] == pytest.approx(deg.mean())
