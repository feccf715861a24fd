import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_fe_fixture
from justbias.estimation import (
    DesignSpec,
    EmptySampleError,
    EstimationError,
    SingularDesignError,
    WeakDesignError,
    cluster_cov,
    ols_fit,
    ols_panel_fit,
    standardize,
    tsls_fit,
    within_demean,
)
from justbias.synthpanel import DgpConfig, simulate_panel

FIX_SPEC = DesignSpec(
    outcome="y", endogenous="d", instruments=("z",), exog_controls=("w0",), variation_column=None
)


def dummy_2sls(frame, spec=FIX_SPEC):
    """Explicit person-dummy 2SLS and the matching clustered covariance (FE not counted in K)."""
    pid = frame["person_id"].to_numpy()
    D = pd.get_dummies(pid).to_numpy(float)
    age = frame["x"].to_numpy() / 12.0
    W = np.column_stack([frame[c].to_numpy(float) for c in spec.exog_controls] + [age, age**2])
    X = np.column_stack([frame[spec.endogenous], W, D])
    Z = np.column_stack([frame[list(spec.instruments)].to_numpy(float), W, D])
    y = frame[spec.outcome].to_numpy(float)
    Xh = Z @ np.linalg.lstsq(Z, X, rcond=None)[0]
    beta = np.linalg.solve(Xh.T @ Xh, Xh.T @ y)
    u = y - X @ beta
    bread = np.linalg.inv(Xh.T @ Xh)
    G = len(np.unique(pid))
    meat = sum(np.outer(Xh[pid == g].T @ u[pid == g], Xh[pid == g].T @ u[pid == g]) for g in np.unique(pid))
    n, k = len(y), 1 + W.shape[1]
    cov = G / (G - 1) * (n - 1) / (n - k) * bread @ meat @ bread
    return beta[0], np.sqrt(cov[0, 0])


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_within_equals_dummy_2sls(seed):
    f = make_fe_fixture(n_persons=int(8 + 3 * seed), seed=seed)
    res = tsls_fit(FIX_SPEC, f)
    coef, se = dummy_2sls(f)
    assert abs(res.estimate - coef) < 1e-8
    assert res.se == pytest.approx(se, rel=1e-8)


def wald_fixture(seed=0, n=200):
    rng = np.random.default_rng(seed)
    z = (rng.random(n) < 0.5).astype(float)
    d = 0.6 * z + rng.normal(size=n)
    y = 2.0 * d + rng.normal(size=n)
    return pd.DataFrame({"person_id": np.arange(n), "t": 0, "x": 0, "z": z, "d": d, "y": y})


def test_wald_identity():
    f = wald_fixture()
    spec = DesignSpec(outcome="y", endogenous="d", instruments=("z",), fixed_effects=False, age_poly_order=0, variation_column=None)
    res = tsls_fit(spec, f)
    z = f["z"] == 1
    wald = (f.y[z].mean() - f.y[~z].mean()) / (f.d[z].mean() - f.d[~z].mean())
    assert abs(res.estimate - wald) < 1e-10


def test_within_demean_examples():
    np.testing.assert_allclose(within_demean([1, 2, 3], [0, 0, 0]), [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(within_demean([5, 5, 5], [0, 0, 0]), 0, atol=1e-15)
    np.testing.assert_allclose(within_demean([1, 3, 10, 10, 10], [0, 0, 1, 1, 1]), [-1, 1, 0, 0, 0], atol=1e-15)
    with pytest.raises(EmptySampleError):
        within_demean(np.empty((0, 2)), [])


@given(st.lists(st.tuples(st.integers(0, 5), st.floats(-1e3, 1e3)), min_size=1, max_size=60))
def test_within_demean_group_sums_are_zero(rows):
    g = np.array([r[0] for r in rows])
    v = np.array([r[1] for r in rows])
    out = within_demean(v, g)
    for k in np.unique(g):
        assert abs(out[g == k].sum()) <= 1e-9 * max(1.0, np.abs(v).max()) * (g == k).sum()


def test_ols_examples():
    x = np.arange(4.0)
    r = ols_fit(2 * x, np.column_stack([x]), np.arange(4))
    assert r.coef["x0"] == pytest.approx(2.0, abs=1e-12)
    r = ols_fit([1, 2, 2, 4], np.column_stack([x, np.ones(4)]), np.arange(4), names=["x", "const"])
    assert r.coef["x"] == pytest.approx(0.9, abs=1e-12)
    assert r.coef["const"] == pytest.approx(0.9, abs=1e-12)
    with pytest.raises(SingularDesignError) as err:
        ols_fit([1, 2, 2, 4], np.column_stack([x, x, np.ones(4)]), np.arange(4), names=["a", "b", "c"])
    assert set(err.value.columns) & {"a", "b"}


def test_single_cluster_is_an_error():
    with pytest.raises(EstimationError):
        ols_fit([1.0, 2.0, 3.0], np.ones((3, 1)), [0, 0, 0])


def test_one_row_clusters_reduce_to_hc1():
    rng = np.random.default_rng(0)
    n = 300
    X = np.column_stack([rng.normal(size=n), np.ones(n)])
    u = rng.normal(size=n) * (1 + np.abs(X[:, 0]))
    bread = np.linalg.inv(X.T @ X)
    hc1 = n / (n - 2) * bread @ (X.T * u**2) @ X @ bread
    np.testing.assert_allclose(cluster_cov(u, X, np.arange(n)), hc1, rtol=1e-12)


def test_many_homoskedastic_clusters_match_classical_se():
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(100):
        G = 500
        ids = np.repeat(np.arange(G), 2)
        x = rng.normal(size=2 * G)
        y = 1 + 0.5 * x + rng.normal(size=2 * G)
        X = np.column_stack([x, np.ones(2 * G)])
        r = ols_fit(y, X, ids)
        u = y - X @ np.array([r.coef["x0"], r.coef["x1"]])
        classical = np.sqrt(u @ u / (2 * G - 2) * np.linalg.inv(X.T @ X)[0, 0])
        ratios.append(r.se_cluster["x0"] / classical)
    assert abs(np.mean(ratios) - 1) <= 0.10


def test_duplicating_clusters_keeps_coefficient():
    f = make_fe_fixture(seed=5)
    g = f.copy()
    g["person_id"] = g["person_id"] + 1000
    both = pd.concat([f, g], ignore_index=True)
    a, b = tsls_fit(FIX_SPEC, f), tsls_fit(FIX_SPEC, both)
    assert b.n_individuals == 2 * a.n_individuals
    assert b.estimate == pytest.approx(a.estimate, abs=1e-10)


def test_influence_reproduces_covariance():
    f = make_fe_fixture(seed=6)
    r = tsls_fit(FIX_SPEC, f)
    assert r.influence.shape == (r.n_individuals,)
    assert float(r.influence @ r.influence) == pytest.approx(r.se**2, rel=1e-12)


def test_first_stage_f_equals_squared_t():
    f = make_fe_fixture(n_persons=40, seed=7)
    r = tsls_fit(FIX_SPEC, f)
    t = r.first_stage_estimate / r.first_stage_se_value
    assert r.first_stage_f == pytest.approx(t**2, rel=1e-9)


def test_pure_noise_instrument_is_flagged():
    rng = np.random.default_rng(12)
    f = make_fe_fixture(n_persons=200, seed=12)
    f["noise"] = rng.normal(size=len(f))
    r = tsls_fit(FIX_SPEC.replace(instruments=("noise",)), f)
    assert r.first_stage_f < 1
    assert r.weak_instrument


def test_pure_noise_instrument_f_below_ten():
    rng = np.random.default_rng(13)
    f = make_fe_fixture(n_persons=150, seed=13)
    fs = []
    for _ in range(200):
        f["noise"] = rng.normal(size=len(f))
        fs.append(tsls_fit(FIX_SPEC.replace(instruments=("noise",)), f).first_stage_f)
    assert np.mean(np.array(fs) < 10) >= 0.95


def test_sure_compliers_give_huge_first_stage():
    panel = simulate_panel(DgpConfig(n_individuals=2000, complier_jump=1.0, seed=8))
    assert len(panel) >= 100_000
    r = tsls_fit(DesignSpec(), panel)
    assert r.first_stage_f > 1000


def test_constant_instrument_is_a_weak_design():
    f = make_fe_fixture(seed=2)
    f["const_z"] = 1.0
    with pytest.raises(WeakDesignError):
        tsls_fit(FIX_SPEC.replace(instruments=("const_z",)), f)


def test_fewer_instruments_than_endogenous():
    from justbias.estimation import tsls_arrays

    with pytest.raises(EstimationError):
        tsls_arrays(np.ones(4), np.ones((4, 2)), np.ones((4, 1)), np.empty((4, 0)), np.arange(4), ["a", "b"], ["z"], [])


def test_no_variation_and_singletons_are_dropped_and_counted():
    f = make_fe_fixture(n_persons=10, seed=3)
    f["r"] = (f["x"] >= 0).astype(int)
    single = f[f.person_id == 0].iloc[:1].assign(person_id=99, r=[1])
    flat = f[f.person_id == 1].assign(person_id=98, r=0)
    g = pd.concat([f, single, flat], ignore_index=True)
    spec = FIX_SPEC.replace(variation_column="r")
    res = tsls_fit(spec, g)
    assert res.n_dropped_no_variation >= 2  # the flat person and the singleton
    assert res.n_individuals <= g.person_id.nunique() - 2
    assert res.n_individuals <= res.n_obs


def test_standardize_examples():
    np.testing.assert_allclose(standardize([0.0, 2.0]), [-1 / np.sqrt(2), 1 / np.sqrt(2)])
    with pytest.raises(ValueError):
        standardize([3.0, 3.0, 3.0])
    z = standardize(np.arange(10.0), reference_sample=np.arange(5.0))
    assert z[2] == pytest.approx(0.0)


@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=50).filter(lambda v: np.std(v) > 1e-3))
def test_standardize_moments(values):
    z = standardize(values)
    assert abs(z.mean()) < 1e-9 and abs(z.std(ddof=1) - 1) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100) | st.floats(-100, -0.01))
def test_scale_equivariance(c):
    f = make_fe_fixture(seed=9)
    a = tsls_fit(FIX_SPEC, f)
    b = tsls_fit(FIX_SPEC, f.assign(y=c * f.y))
    assert b.estimate == pytest.approx(c * a.estimate, rel=1e-9, abs=1e-12)
    assert b.se == pytest.approx(abs(c) * a.se, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(12))))
def test_relabeling_invariance(perm):
    f = make_fe_fixture(n_persons=12, seed=10)
    g = f.assign(person_id=np.array(perm)[f.person_id] * 7 + 3)
    a, b = tsls_fit(FIX_SPEC, f), tsls_fit(FIX_SPEC, g)
    assert b.estimate == pytest.approx(a.estimate, rel=1e-10, abs=1e-12)
    assert b.se == pytest.approx(a.se, rel=1e-8)


def test_deterministic_results(small_panel):
    a, b = tsls_fit(DesignSpec(), small_panel), tsls_fit(DesignSpec(), small_panel)
    assert a.coef == b.coef and a.se_cluster == b.se_cluster and a.first_stage_f == b.first_stage_f
    assert np.array_equal(a.cov, b.cov)


def test_panel_ols_and_positive_ses(small_panel):
    r = ols_panel_fit(DesignSpec(), small_panel)
    assert all(v > 0 for v in r.se_cluster.values())
    assert np.isnan(r.first_stage_f)


def test_invalid_spec():
    with pytest.raises(ValueError):
        DesignSpec(instruments=())
    with pytest.raises(ValueError):
        DesignSpec(age_poly_order=3)
