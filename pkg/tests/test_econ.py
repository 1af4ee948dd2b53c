"""Estimator correctness against independent brute-force oracles."""

import numpy as np
import pytest

from debiaslab.ar1 import ForecastPanel, PanelRow
from debiaslab.econ import (
    PanelSpec,
    cluster_robust_vcov,
    descriptive_stats,
    error_revision_regression,
    ols,
    panel_fe_regression,
    within_transform,
)
from debiaslab.errors import (
    EmptyInputError,
    InferenceError,
    PlanError,
    SingularDesignError,
)

RNG = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------

def test_ols_perfect_line():
    res = ols([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.slope == pytest.approx(1.0, abs=1e-12)
    assert res.intercept == pytest.approx(0.0, abs=1e-12)
    assert res.r_squared == pytest.approx(1.0, abs=1e-12)


def test_ols_exact_affine_recovery():
    x = np.linspace(-5, 5, 50)
    y = 2.0 * x + 1.0
    res = ols(y, x)
    assert res.slope == pytest.approx(2.0, abs=1e-12)
    assert res.intercept == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(res.residuals)) < 1e-12


def test_ols_matches_normal_equation_oracle():
    n, k = 20, 3
    X = RNG.normal(size=(n, k))
    y = RNG.normal(size=n)
    res = ols(y, X, intercept=True)
    design = np.column_stack([np.ones(n), X])
    oracle = np.linalg.solve(design.T @ design, design.T @ y)
    np.testing.assert_allclose(res.coef, oracle, atol=1e-10)


def test_ols_names_collinear_columns():
    x = RNG.normal(size=20)
    X = np.column_stack([x, 2 * x])
    with pytest.raises(SingularDesignError) as err:
        ols(RNG.normal(size=20), X, names=["a", "b"])
    assert "b" in str(err.value)


def test_ols_hc1_matches_direct_formula():
    n = 40
    X = np.column_stack([np.ones(n), RNG.normal(size=n)])
    y = RNG.normal(size=n)
    res = ols(y, X[:, 1], intercept=True, se_mode="hc1")
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    u = y - X @ beta
    bread = np.linalg.inv(X.T @ X)
    meat = X.T @ (X * u[:, None] ** 2)
    vcov = bread @ meat @ bread * n / (n - 2)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(vcov)), atol=1e-12)


# ---------------------------------------------------------------------------
# Error-revision regression
# ---------------------------------------------------------------------------

def panel_from(errors, revisions, f_one=None):
    rows = []
    f_one = f_one if f_one is not None else np.zeros(len(errors))
    for i, (e, r, f) in enumerate(zip(errors, revisions, f_one)):
        rows.append(PanelRow(subject_id=0, t=i + 2, f_one=f, f_two_lag=f - r, realized=f + e))
    return ForecastPanel(rows=rows)


def test_error_revision_recovers_planted_slope():
    revisions = RNG.normal(size=200)
    errors = -0.5 * revisions
    res = error_revision_regression(panel_from(errors, revisions))
    assert res.slope == pytest.approx(-0.5, abs=1e-12)
    assert res.r_squared == pytest.approx(1.0, abs=1e-12)


def test_error_revision_zero_variance_revision():
    with pytest.raises(SingularDesignError):
        error_revision_regression(panel_from(RNG.normal(size=50), np.zeros(50)))


def test_error_revision_empty_panel():
    with pytest.raises(EmptyInputError):
        error_revision_regression(ForecastPanel(rows=[]))


def test_pooling_identical_subpanels_leaves_slope_unchanged():
    revisions = RNG.normal(size=100)
    errors = -0.3 * revisions + RNG.normal(scale=0.1, size=100)
    single = error_revision_regression(panel_from(errors, revisions))
    doubled = error_revision_regression(
        panel_from(np.tile(errors, 2), np.tile(revisions, 2))
    )
    assert doubled.slope == pytest.approx(single.slope, abs=1e-12)


def test_constant_shift_moves_only_intercept():
    revisions = RNG.normal(size=120)
    errors = -0.4 * revisions + RNG.normal(scale=0.2, size=120)
    base = error_revision_regression(panel_from(errors, revisions))
    shifted = error_revision_regression(panel_from(errors + 5.0, revisions))
    assert shifted.slope == pytest.approx(base.slope, abs=1e-10)
    assert shifted.intercept == pytest.approx(base.intercept + 5.0, abs=1e-10)


# ---------------------------------------------------------------------------
# Within transform / fixed effects
# ---------------------------------------------------------------------------

def test_within_transform_absorbs_additive_effects_balanced():
    units = [0, 0, 1, 1]
    times = [0, 1, 0, 1]
    # values additive in unit and time effects: u_i + d_t
    values = np.array([1.0, 2.0, 3.0, 4.0])
    out = within_transform(values, units, times)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_within_transform_constant_column_zeroes():
    units = RNG.integers(0, 5, size=60)
    times = RNG.integers(0, 7, size=60)
    out = within_transform(np.full(60, 3.7), units, times)
    np.testing.assert_allclose(out, 0.0, atol=1e-10)


def dummy_ols_oracle(y, X, units, times):
    """Full dummy-variable regression; returns the slope block."""
    u_vals, u_codes = np.unique(units, return_inverse=True)
    t_vals, t_codes = np.unique(times, return_inverse=True)
    n = len(y)
    U = np.zeros((n, len(u_vals)))
    U[np.arange(n), u_codes] = 1.0
    T = np.zeros((n, len(t_vals) - 1))
    mask = t_codes > 0
    T[np.arange(n)[mask], t_codes[mask] - 1] = 1.0
    design = np.column_stack([X, U, T])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    return beta[: X.shape[1]]


def random_unbalanced_panel(rng, n_units=8, n_times=10, k=3, p_keep=0.7):
    rows = []
    for i in range(n_units):
        for t in range(n_times):
            if rng.random() < p_keep:
                rows.append((i, t))
    units = np.array([r[0] for r in rows])
    times = np.array([r[1] for r in rows])
    n = len(rows)
    X = rng.normal(size=(n, k))
    alpha = rng.normal(size=n_units)[units]
    delta = rng.normal(size=n_times)[times]
    y = X @ rng.normal(size=k) + alpha + delta + rng.normal(scale=0.5, size=n)
    return y, X, units, times


def test_two_way_fe_equals_dummy_variable_ols():
    rng = np.random.default_rng(3)
    for trial in range(50):
        y, X, units, times = random_unbalanced_panel(rng)
        if len(y) > 200:
            continue
        spec = PanelSpec(lags=tuple(range(X.shape[1])), cluster="none")
        res = panel_fe_regression(y, X, units, times, spec)
        oracle = dummy_ols_oracle(y, X, units, times)
        np.testing.assert_allclose(res.beta, oracle, atol=1e-8)


def test_panel_without_fe_reduces_to_ols():
    rng = np.random.default_rng(4)
    y, X, units, times = random_unbalanced_panel(rng, k=2)
    spec = PanelSpec(lags=(0, 1), unit_fe=False, time_fe=False, cluster="none")
    res = panel_fe_regression(y, X, units, times, spec)
    plain = ols(y, X, intercept=True)
    np.testing.assert_allclose(res.beta, plain.coef[1:], atol=1e-12)
    np.testing.assert_allclose(res.se, plain.se[1:], atol=1e-12)
    assert res.intercept == pytest.approx(plain.intercept)


def test_planted_coefficient_recovery_with_fe():
    rng = np.random.default_rng(5)
    n_units, n_times = 40, 30
    units = np.repeat(np.arange(n_units), n_times)
    times = np.tile(np.arange(n_times), n_units)
    r = rng.normal(scale=0.08, size=len(units))
    firm_effect = rng.normal(size=n_units)[units]
    month_effect = rng.normal(size=n_times)[times]
    y = 0.4 * r + firm_effect + month_effect + rng.normal(scale=0.001, size=len(units))
    spec = PanelSpec(lags=(0,), cluster="none")
    res = panel_fe_regression(y, r[:, None], units, times, spec)
    assert res.beta[0] == pytest.approx(0.4, abs=0.01)


def test_dependent_shift_absorbed_by_fe():
    rng = np.random.default_rng(6)
    y, X, units, times = random_unbalanced_panel(rng)
    spec = PanelSpec(lags=(0, 1, 2), cluster="none")
    res1 = panel_fe_regression(y, X, units, times, spec)
    res2 = panel_fe_regression(y + 7.5, X, units, times, spec)
    np.testing.assert_allclose(res1.beta, res2.beta, atol=1e-10)


# ---------------------------------------------------------------------------
# Cluster-robust covariance
# ---------------------------------------------------------------------------

def literal_cluster_oracle(X, resid, labels, k):
    """Spelled-out sandwich: loop clusters, sum score outer products."""
    n = X.shape[0]
    groups = {}
    for i, g in enumerate(labels):
        groups.setdefault(g, []).append(i)
    meat = np.zeros((X.shape[1], X.shape[1]))
    for idx in groups.values():
        s = np.zeros(X.shape[1])
        for i in idx:
            s += X[i] * resid[i]
        meat += np.outer(s, s)
    G = len(groups)
    bread = np.linalg.inv(X.T @ X)
    return (G / (G - 1)) * ((n - 1) / (n - k)) * bread @ meat @ bread


def literal_two_way_oracle(X, resid, units, times, k):
    pair = [f"{u}|{t}" for u, t in zip(units, times)]
    return (
        literal_cluster_oracle(X, resid, units, k)
        + literal_cluster_oracle(X, resid, times, k)
        - literal_cluster_oracle(X, resid, pair, k)
    )


def test_every_observation_own_cluster_equals_hc1():
    n, k = 50, 2
    X = np.column_stack([np.ones(n), RNG.normal(size=(n, k - 1))])
    resid = RNG.normal(size=n)
    V = cluster_robust_vcov(X, resid, np.arange(n))
    bread = np.linalg.inv(X.T @ X)
    hc = bread @ (X.T @ (X * resid[:, None] ** 2)) @ bread
    hc1 = hc * n / (n - k)
    np.testing.assert_allclose(V, hc1, atol=1e-12)


def test_single_cluster_rejected():
    X = RNG.normal(size=(10, 2))
    with pytest.raises(InferenceError):
        cluster_robust_vcov(X, RNG.normal(size=10), np.zeros(10, dtype=int))


def test_two_way_vcov_matches_literal_summation():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n, k = 60, 3
        X = rng.normal(size=(n, k))
        resid = rng.normal(size=n)
        units = rng.integers(0, 5, size=n)
        times = rng.integers(0, 4, size=n)
        V = cluster_robust_vcov(X, resid, (units, times), k_params=k)
        oracle = literal_two_way_oracle(X, resid, units, times, k)
        # PSD repair only kicks in when the raw estimator is indefinite
        if np.linalg.eigvalsh((oracle + oracle.T) / 2).min() >= 0:
            np.testing.assert_allclose(V, oracle, atol=1e-10)
        assert np.allclose(V, V.T, atol=1e-12)
        assert np.linalg.eigvalsh(V).min() >= -1e-12


def test_vcov_symmetry_and_psd_after_repair():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(30, 2))
    resid = rng.normal(size=30)
    units = rng.integers(0, 3, size=30)
    times = rng.integers(0, 3, size=30)
    V = cluster_robust_vcov(X, resid, (units, times))
    assert np.allclose(V, V.T)
    assert np.linalg.eigvalsh(V).min() >= -1e-12


def test_panel_clustered_too_few_clusters():
    y = RNG.normal(size=12)
    X = RNG.normal(size=(12, 1))
    units = np.zeros(12, dtype=int)
    times = np.arange(12) % 3
    spec = PanelSpec(lags=(0,), cluster="two-way")
    with pytest.raises(InferenceError):
        panel_fe_regression(y, X, units, times, spec)


def test_panel_spec_validation():
    with pytest.raises(PlanError):
        PanelSpec(lags=(0, 12))
    with pytest.raises(PlanError):
        PanelSpec(cluster="galaxy")


# ---------------------------------------------------------------------------
# Descriptive stats
# ---------------------------------------------------------------------------

def test_descriptive_stats_symmetric_case():
    stats = descriptive_stats([1, 2, 3, 4, 5])
    assert stats["mean"] == 3.0
    assert stats["median"] == 3.0
    assert stats["p25"] == 2.0
    assert stats["p75"] == 4.0
    assert stats["n"] == 5


def test_descriptive_stats_constant_vector():
    stats = descriptive_stats(np.full(7, 2.5))
    assert stats["sd"] == 0.0
    assert stats["p25"] == stats["median"] == stats["p75"] == 2.5


def test_descriptive_stats_empty():
    with pytest.raises(EmptyInputError):
        descriptive_stats([])


def test_descriptive_stats_sample_sd():
    vals = [1.0, 2.0, 4.0]
    stats = descriptive_stats(vals)
    assert stats["sd"] == pytest.approx(np.std(vals, ddof=1))


def test_ols_without_intercept():
    x = np.linspace(1, 5, 30)
    y = 3.0 * x
    res = ols(y, x, intercept=False)
    assert res.names == ["x0"]
    assert res.slope == pytest.approx(3.0, abs=1e-12)
    assert res.r_squared == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        res.intercept  # no intercept term to report


def test_panel_extra_regressor_hook():
    rng = np.random.default_rng(11)
    n_units, n_times = 12, 10
    units = np.repeat(np.arange(n_units), n_times)
    times = np.tile(np.arange(n_times), n_units)
    r = rng.normal(size=len(units))
    control = rng.normal(size=len(units))
    y = 0.5 * r - 0.7 * control + rng.normal(scale=0.01, size=len(units))
    spec = PanelSpec(lags=(0,), cluster="none", unit_fe=True, time_fe=True)
    res = panel_fe_regression(y, r[:, None], units, times, spec,
                              extra=control, extra_names=["sentiment"])
    assert res.lag_names == ["r_lag0", "sentiment"]
    assert res.beta[0] == pytest.approx(0.5, abs=0.01)
    assert res.beta[1] == pytest.approx(-0.7, abs=0.01)
