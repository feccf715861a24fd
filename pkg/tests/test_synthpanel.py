import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from justbias.synthpanel import (
    PANEL_COLUMNS,
    ConfigError,
    DgpConfig,
    apply_reporting,
    discretize_five_point,
    hazard_probability,
    latent_health_at,
    retirement_hazard_step,
    simulate_panel,
    split_objective,
)


def test_columns_and_sorting(small_panel):
    f = small_panel.frame
    assert tuple(f.columns) == PANEL_COLUMNS
    assert not f.duplicated(["person_id", "t"]).any()
    g = f.groupby("person_id")
    assert (g["t"].diff().dropna() == 1).all()
    assert (g["x"].diff().dropna() == 1).all()


def test_observation_invariants(small_panel):
    f = small_panel.frame
    assert (f.groupby("person_id")["retired"].diff().dropna() >= 0).all()
    assert ((f["poor_health"] == 1) == (f["sah_5pt"] >= 4)).all()
    conds = f[[f"cond_{k}" for k in range(1, 8)]]
    assert conds.isin([0, 1]).all().all()
    assert (conds.sum(axis=1) == f["obj_count"]).all()
    np.testing.assert_allclose(f["h_objective"] + f["q"], f["h_true"], rtol=0, atol=1e-12)


def test_everyone_retires_at_mra_when_complier_jump_is_one():
    cfg = DgpConfig(n_individuals=200, lam=0, sigma_nu=0, post_ret_slope_shift=0, complier_jump=1.0, hazard_base=-30, seed=3)
    f = simulate_panel(cfg).frame
    first = f[f["retired"] == 1].groupby("person_id")["x"].min()
    assert (first == 0).all()
    seen_zero = f.loc[f["x"] == 0, "person_id"].unique()
    assert set(first.index) == set(seen_zero)
    assert np.array_equal(f["h_subjective"].to_numpy(), f["h_true"].to_numpy())


def test_deterministic_bias_on_retired_rows():
    cfg = DgpConfig(n_individuals=300, lam=0.5, sigma_nu=0, seed=5)
    f = simulate_panel(cfg).frame
    d = (f["h_subjective"] - f["h_true"]).to_numpy()
    r = f["retired"].to_numpy() == 1
    assert r.any()
    np.testing.assert_allclose(d[r], 0.5, rtol=0, atol=1e-12)
    np.testing.assert_allclose(d[~r], 0.0, rtol=0, atol=1e-12)


def test_complier_jump_in_hazard_at_mra():
    # The one-shot complier mass shows up as a jump of p_c in the monthly hazard
    # among persons still working; the jump in the stock of retirees is p_c
    # times the survivor share (see the decisions ledger).
    cfg = DgpConfig(n_individuals=20000, seed=42)
    f = simulate_panel(cfg).frame
    assert len(f) >= 100_000
    prev = f.groupby("person_id")["retired"].shift(1)
    at_risk = f[prev == 0]
    h0 = at_risk.loc[at_risk["x"] == 0, "retired"].mean()
    h_pre = at_risk.loc[at_risk["x"].between(-3, -1), "retired"].mean()
    assert abs((h0 - h_pre) - cfg.complier_jump) <= 0.02


def test_stock_of_retirees_rises_across_mra(default_panel):
    f = default_panel.frame
    post = f.loc[f["x"].between(0, 2), "retired"].mean()
    pre = f.loc[f["x"].between(-3, -1), "retired"].mean()
    assert post - pre > 0.1


def test_latent_health_examples():
    zero = DgpConfig(age_slope=0, age_curve=0, post_ret_slope_shift=0)
    assert np.all(latent_health_at(zero, 0.0, np.arange(-50, 50), 0) == 0)
    cfg = DgpConfig(age_slope=0.01, age_curve=0, post_ret_slope_shift=0)
    assert latent_health_at(cfg, 1.0, 10, 0) == pytest.approx(1.1)
    d = DgpConfig()
    assert latent_health_at(d, 0.3, 5, 0) == latent_health_at(d, 0.3, 5, 0)
    with pytest.raises(ValueError):
        latent_health_at(d, 0.0, 0, -1)


@given(st.floats(-3, 3), st.integers(-80, 150), st.floats(0, 0.05))
def test_level_continuity_at_retirement_month(a, x, delta):
    cfg = DgpConfig(post_ret_slope_shift=delta, age_curve=1e-4)
    pre = a + cfg.age_slope * x + cfg.age_curve * x**2
    assert latent_health_at(cfg, a, x, 0) == pytest.approx(pre, abs=1e-12)


def test_hazard_step_examples():
    rng = np.random.default_rng(0)
    never = DgpConfig(hazard_base=-30, complier_jump=0)
    assert not any(retirement_hazard_step(never, 5, 0.0, rng) for _ in range(10000))
    sure = DgpConfig(complier_jump=1.0)
    assert all(retirement_hazard_step(sure, 0, 0.0, rng) for _ in range(100))


def test_long_run_hazard_frequency():
    cfg = DgpConfig(hazard_base=-3, hazard_age=0, theta_h=0, complier_jump=0)
    p = float(hazard_probability(cfg, 7, 0.0))
    assert p == pytest.approx(expit(-3))
    rng = np.random.default_rng(1)
    draws = rng.random(1_000_000) < p
    assert abs(draws.mean() - 0.0474) <= 0.002


def test_apply_reporting_examples():
    cfg = DgpConfig(lam=0.5, sigma_nu=0)
    rng = np.random.default_rng(0)
    assert apply_reporting(1.0, 1, cfg, rng)[0] == 1.5
    assert apply_reporting(1.0, 0, cfg, rng)[0] == 1.0


def test_reporting_noise_variance():
    cfg = DgpConfig(lam=0, sigma_nu=1.0)
    h = np.zeros(100_000)
    hs, nu = apply_reporting(h, np.zeros_like(h), cfg, np.random.default_rng(2))
    assert 0.98 <= np.var(hs - h, ddof=1) <= 1.02
    np.testing.assert_array_equal(hs - h, nu)


def test_split_objective_examples():
    assert split_objective(2.0, DgpConfig(omega=1.0), 0.0) == (2.0, 0.0)
    ho, q = split_objective(2.0, DgpConfig(omega=0.6), 0.0)
    assert ho == pytest.approx(1.2) and q == pytest.approx(0.8)


@given(st.floats(-10, 10), st.floats(0, 1), st.floats(-3, 3), st.sampled_from([0, 1]), st.floats(0, 2))
def test_objective_identity(h, omega, xi, r, qj):
    ho, q = split_objective(h, DgpConfig(omega=omega, q_jump=qj), xi, r)
    assert abs(ho + q - h) <= 1e-12 * max(1.0, abs(h), abs(ho), abs(q))


def test_discretize_examples():
    cut = (-1.5, -0.5, 0.5, 1.5)
    assert discretize_five_point(0.0, cut) == 3
    assert discretize_five_point(-9.0, cut) == 1
    assert discretize_five_point(9.0, cut) == 5
    assert discretize_five_point(0.5, cut) == 3  # strictly below only
    with pytest.raises(ConfigError):
        discretize_five_point(0.0, (0, -1, 1, 2))


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=50))
def test_discretize_monotone(values):
    v = np.sort(np.array(values))
    out = discretize_five_point(v)
    assert np.all(np.diff(out) >= 0) and out.min() >= 1 and out.max() <= 5


def test_default_calibration_matches_summary_statistics():
    f = simulate_panel(DgpConfig(seed=1)).frame
    assert abs(f["sah_5pt"].mean() - 3.262) <= 0.1
    assert abs(f["sah_5pt"].std(ddof=1) - 0.869) <= 0.1
    assert abs(f["cond_1"].mean() - 0.119) <= 0.02
    assert abs(f["cond_2"].mean() - 0.080) <= 0.02


def test_level_continuity_without_bias():
    cfg = DgpConfig(n_individuals=20000, lam=0, sigma_nu=0, seed=9)
    f = simulate_panel(cfg).frame
    assert len(f) >= 1_000_000
    a = f.loc[f["x"].between(-3, -1)]
    b = f.loc[f["x"].between(0, 2)]
    # compare within persons observed on both sides so entry composition cancels
    both = np.intersect1d(a["person_id"].unique(), b["person_id"].unique())
    ma = a[a["person_id"].isin(both)].groupby("person_id")["h_subjective"].mean()
    mb = b[b["person_id"].isin(both)].groupby("person_id")["h_subjective"].mean()
    d = (mb - ma).to_numpy()
    mcse = d.std(ddof=1) / np.sqrt(d.size)
    assert abs(d.mean()) <= cfg.age_slope * 6 + 3 * mcse


def test_bias_identity_large_sample():
    cfg = DgpConfig(n_individuals=6000, lam=0.4, seed=4)
    f = simulate_panel(cfg).frame
    d = f["h_subjective"] - f["h_true"]
    r = f["retired"] == 1
    est = d[r].mean() - d[~r].mean()
    mcse = np.sqrt(d[r].var() / r.sum() + d[~r].var() / (~r).sum())
    # rows of one person share nothing in nu, so row-level MC SEs are valid here
    assert abs(est - 0.4) <= 3 * mcse


def test_same_seed_bit_identical():
    cfg = DgpConfig(n_individuals=150, seed=77)
    a, b = simulate_panel(cfg).frame, simulate_panel(cfg).frame
    pd.testing.assert_frame_equal(a, b, check_exact=True)
    c = simulate_panel(cfg.replace(seed=78)).frame
    assert not a["h_subjective"].equals(c["h_subjective"])


def test_per_person_streams_and_threads():
    small = simulate_panel(DgpConfig(n_individuals=10, seed=3)).frame
    big = simulate_panel(DgpConfig(n_individuals=20, seed=3)).frame
    pd.testing.assert_frame_equal(small, big[big["person_id"] < 10].reset_index(drop=True), check_exact=True)
    threaded = simulate_panel(DgpConfig(n_individuals=20, seed=3), threads=4).frame
    pd.testing.assert_frame_equal(big, threaded, check_exact=True)


def test_zero_variation_persons_are_retained():
    cfg = DgpConfig(n_individuals=300, hazard_base=-30, complier_jump=0, seed=2)
    f = simulate_panel(cfg).frame
    assert f["person_id"].nunique() == 300
    assert f["retired"].sum() == 0


@pytest.mark.parametrize(
    "changes",
    [
        {"complier_jump": 1.5},
        {"complier_jump": -0.1},
        {"sigma_nu": -1.0},
        {"omega": 1.2},
        {"n_conditions": 0},
        {"n_conditions": 3},
        {"sah_cutpoints": (0.0, 0.0, 1.0, 2.0)},
        {"lam": float("nan")},
        {"entry_age_range": (5, -5)},
    ],
)
def test_invalid_configs(changes):
    with pytest.raises(ConfigError):
        DgpConfig(**changes)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1), st.floats(0, 2))
def test_absorbing_retirement_property(seed, pc, lam):
    f = simulate_panel(DgpConfig(n_individuals=15, months_observed=24, complier_jump=pc, lam=lam, seed=seed)).frame
    assert (f.groupby("person_id")["retired"].diff().dropna() >= 0).all()
    mr = f["months_retired"].to_numpy()
    assert np.all((mr > 0) <= (f["retired"].to_numpy() == 1))
