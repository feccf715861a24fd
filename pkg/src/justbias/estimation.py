"""Closed-form panel least squares: within transformation, OLS, 2SLS, clustered SEs."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .policy import instrument, mra_years_array

RANK_TOL = 1e-10
WEAK_F = 10.0


class EstimationError(RuntimeError):
    """A regression could not be computed."""


class SingularDesignError(EstimationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"singular design; collinear columns: {', '.join(self.columns)}")


class WeakDesignError(EstimationError):
    """Excluded instruments carry no variation after partialling out controls."""


class EmptySampleError(EstimationError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    """Specification of one FE-2SLS (or FE-OLS) regression.

    Age-polynomial terms are built from the centred age ``x`` rescaled to years.
    ``exog_controls`` may contain ``C(col)`` to expand a categorical column into
    dummies (first level dropped).
    """

    outcome: str = "h_subjective"
    endogenous: str = "retired"
    instruments: tuple[str, ...] = ("post_mra",)
    exog_controls: tuple[str, ...] = ()
    fixed_effects: bool = True
    cluster_by: str = "person_id"
    age_poly_order: int = 2
    piecewise_slope: bool = False
    variation_column: str | None = "retired"
    drop_collinear_controls: bool = False

    def __post_init__(self) -> None:
        if len(self.instruments) < 1:
            raise ValueError("at least one instrument is required")
        if self.age_poly_order not in (0, 1, 2):
            raise ValueError("age_poly_order must be 0, 1 or 2")

    def replace(self, **changes) -> DesignSpec:
        return dataclasses.replace(self, **changes)


@dataclass
class EstimateResult:
    names: list[str]
    coef: dict[str, float]
    se_cluster: dict[str, float]
    cov: np.ndarray
    n_obs: int
    n_individuals: int
    endogenous: str | None = None
    first_stage_coef: dict[str, float] = field(default_factory=dict)
    first_stage_se: dict[str, float] = field(default_factory=dict)
    first_stage_f: float = float("nan")
    n_dropped_no_variation: int = 0
    n_singletons: int = 0
    dropped_controls: list[str] = field(default_factory=list)
    # per-cluster influence of the first coefficient, clusters in sorted order
    influence: np.ndarray | None = field(default=None, repr=False)

    @property
    def estimate(self) -> float:
        return self.coef[self.endogenous or self.names[0]]

    @property
    def se(self) -> float:
        return self.se_cluster[self.endogenous or self.names[0]]

    @property
    def tstat(self) -> float:
        return self.estimate / self.se if self.se > 0 else float("inf")

    @property
    def pvalue(self) -> float:
        return float(2 * stats.norm.sf(abs(self.tstat)))

    @property
    def weak_instrument(self) -> bool:
        return not self.first_stage_f >= WEAK_F

    @property
    def first_stage_estimate(self) -> float:
        return next(iter(self.first_stage_coef.values()), float("nan"))

    @property
    def first_stage_se_value(self) -> float:
        return next(iter(self.first_stage_se.values()), float("nan"))


# --------------------------------------------------------------------------
# array-level primitives


def group_codes(groups) -> tuple[np.ndarray, int]:
    groups = np.asarray(groups)
    if groups.size and np.all(groups[1:] >= groups[:-1]):
        codes = np.concatenate([[0], np.cumsum(groups[1:] != groups[:-1])]) if groups.size else groups
        return codes.astype(np.int64), int(codes[-1]) + 1
    _, codes = np.unique(groups, return_inverse=True)
    return codes.astype(np.int64), int(codes.max()) + 1 if codes.size else 0


def within_demean(values, groups) -> np.ndarray:
    """Subtract group means from each column of ``values``."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] == 0:
        raise EmptySampleError("cannot demean an empty sample")
    codes, g = group_codes(groups)
    counts = np.bincount(codes, minlength=g).astype(float)
    if v.ndim == 1:
        return v - (np.bincount(codes, weights=v, minlength=g) / counts)[codes]
    out = np.empty_like(v)
    for j in range(v.shape[1]):
        out[:, j] = v[:, j] - (np.bincount(codes, weights=v[:, j], minlength=g) / counts)[codes]
    return out


def _qr_solve(X: np.ndarray, y: np.ndarray, names):
    """Least squares by pivoted QR; returns (beta, bread) with bread = (X'X)^-1."""
    n, k = X.shape
    if k == 0:
        raise EstimationError("design has no columns")
    if n < k:
        raise SingularDesignError(names[n:])
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > RANK_TOL * d[0])) if d[0] > 0 else 0
    if rank < k:
        raise SingularDesignError([names[j] for j in piv[rank:]])
    b_piv = linalg.solve_triangular(R, Q.T @ y)
    r_inv = linalg.solve_triangular(R, np.eye(k))
    bread_piv = r_inv @ r_inv.T
    inv = np.empty(k, dtype=np.int64)
    inv[piv] = np.arange(k)
    beta = b_piv[inv] if b_piv.ndim == 1 else b_piv[inv, :]
    bread = bread_piv[np.ix_(inv, inv)]
    return beta, bread


def _collinear_drop(X: np.ndarray, names) -> list[int]:
    """Indices of a maximal linearly independent subset of the columns of X."""
    if X.shape[1] == 0:
        return []
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return []
    rank = int(np.sum(d > RANK_TOL * d[0]))
    return sorted(piv[:rank].tolist())


def cluster_influence(residuals, X, cluster_ids, bread=None) -> np.ndarray:
    """Per-cluster influence rows ``psi_g`` with ``sum_g psi_g psi_g' == cluster_cov``.

    The small-sample factor is folded in, so the stacked difference of two
    estimators fitted on the same clusters has variance ``sum_g (psi_a - psi_b)^2``.
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(residuals, dtype=float)
    n, k = X.shape
    codes, g = group_codes(cluster_ids)
    if g < 2:
        raise EstimationError("cluster-robust covariance needs at least two clusters")
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    scores = X * u[:, None]
    sums = np.empty((g, k))
    for j in range(k):
        sums[:, j] = np.bincount(codes, weights=scores[:, j], minlength=g)
    factor = g / (g - 1) * (n - 1) / (n - k)
    return np.sqrt(factor) * sums @ bread


def cluster_cov(residuals, X, cluster_ids, bread=None) -> np.ndarray:
    """Cluster-robust sandwich with the G/(G-1)*(N-1)/(N-K) small-sample factor."""
    infl = cluster_influence(residuals, X, cluster_ids, bread)
    return infl.T @ infl


def ols_fit(y, X, cluster_ids, names=None) -> EstimateResult:
    """OLS with cluster-robust covariance; ``X`` is used as given (add a constant yourself)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    beta, bread = _qr_solve(X, y, names)
    u = y - X @ beta
    cov = cluster_cov(u, X, cluster_ids, bread)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    _, g = group_codes(cluster_ids)
    return EstimateResult(
        names=names,
        coef=dict(zip(names, beta.tolist())),
        se_cluster=dict(zip(names, se.tolist())),
        cov=cov,
        n_obs=len(y),
        n_individuals=g,
        endogenous=names[0],
    )


def wald_f(coef: np.ndarray, cov: np.ndarray) -> float:
    """Wald statistic divided by the number of restrictions."""
    coef = np.atleast_1d(coef)
    cov = np.atleast_2d(cov)
    with np.errstate(divide="ignore", invalid="ignore"):
        try:
            stat = float(coef @ np.linalg.solve(cov, coef))
        except np.linalg.LinAlgError:
            return float("inf")
    if not np.isfinite(stat) or stat < 0:
        return float("inf")
    return stat / coef.size


def tsls_arrays(y, endog, excluded, exog, cluster_ids, endog_names, excl_names, exog_names):
    """2SLS on prepared arrays.

    Returns ``(beta, cov, names, first_coef, first_se, first_f, influence)``; the
    endogenous regressors come first in ``names``.
    """
    y = np.asarray(y, dtype=float)
    D = np.asarray(endog, dtype=float).reshape(len(y), -1)
    Zx = np.asarray(excluded, dtype=float).reshape(len(y), -1)
    W = np.asarray(exog, dtype=float).reshape(len(y), -1)
    if Zx.shape[1] < D.shape[1]:
        raise EstimationError("fewer excluded instruments than endogenous regressors")
    Zfull = np.hstack([Zx, W])
    znames = list(excl_names) + list(exog_names)
    try:
        pi, zbread = _qr_solve(Zfull, D, znames)
    except SingularDesignError as err:
        bad = [c for c in err.columns if c in excl_names]
        if bad and not [c for c in err.columns if c in exog_names]:
            raise WeakDesignError(f"first stage rank failure: {', '.join(bad)}") from err
        raise
    D_hat = Zfull @ pi
    # first-stage inference on the excluded instruments (first endogenous regressor)
    v = D[:, 0] - D_hat[:, 0]
    fcov = cluster_cov(v, Zfull, cluster_ids, zbread)
    q = Zx.shape[1]
    first_coef = pi[:q, 0]
    first_se = np.sqrt(np.clip(np.diag(fcov)[:q], 0, None))
    first_f = wald_f(first_coef, fcov[:q, :q])

    names = list(endog_names) + list(exog_names)
    Xhat = np.hstack([D_hat, W])
    beta, bread = _qr_solve(Xhat, y, names)
    u = y - np.hstack([D, W]) @ beta
    infl = cluster_influence(u, Xhat, cluster_ids, bread)
    return beta, infl.T @ infl, names, first_coef, first_se, first_f, infl


# --------------------------------------------------------------------------
# panel-level helpers


def standardize(column, reference_sample=None) -> np.ndarray:
    """Z-score ``column`` using the mean and sample SD (ddof=1) of ``reference_sample``."""
    col = np.asarray(column, dtype=float)
    ref = col if reference_sample is None else np.asarray(reference_sample, dtype=float)
    ref = ref[np.isfinite(ref)]
    if ref.size < 2:
        raise ValueError("reference sample needs at least two values")
    sd = ref.std(ddof=1)
    if not sd > 0:
        raise ValueError("cannot standardize a column with zero variance")
    return (col - ref.mean()) / sd


def add_derived_columns(frame: pd.DataFrame) -> pd.DataFrame:
    """Add instrument, age-polynomial, survey-year and age-in-years columns."""
    out = frame.copy()
    x = out["x"].to_numpy()
    post = instrument(x)
    out["post_mra"] = post
    out["age_1"] = x / 12.0
    out["age_2"] = (x / 12.0) ** 2
    out["age_post"] = out["age_1"] * post
    if "birth_year" in out and "birth_month" in out:
        birth = 12 * out["birth_year"].to_numpy() + out["birth_month"].to_numpy() - 1
        age_m = x + 12 * mra_years_array(birth)
        out["survey_year"] = (birth + age_m) // 12
        out["age_year"] = age_m // 12
    return out


_CAT = re.compile(r"^C\((\w+)\)$")


@dataclass
class DesignArrays:
    """Numeric arrays of one design, sorted by (cluster, t)."""

    spec: DesignSpec
    y: np.ndarray
    endog: np.ndarray
    excluded: np.ndarray
    controls: np.ndarray
    excl_names: list[str]
    control_names: list[str]
    groups: np.ndarray
    x: np.ndarray
    variation: np.ndarray | None


def _control_block(frame: pd.DataFrame, spec: DesignSpec):
    cols, names = [], []
    if spec.age_poly_order >= 1:
        cols.append(frame["age_1"].to_numpy(float))
        names.append("age_1")
    if spec.age_poly_order >= 2:
        cols.append(frame["age_2"].to_numpy(float))
        names.append("age_2")
    if spec.piecewise_slope:
        cols.append(frame["age_post"].to_numpy(float))
        names.append("age_post")
    for c in spec.exog_controls:
        m = _CAT.match(c)
        if m:
            col = frame[m.group(1)].to_numpy()
            levels = np.unique(col)
            for lev in levels[1:]:
                cols.append((col == lev).astype(float))
                names.append(f"{m.group(1)}[{lev}]")
        else:
            cols.append(frame[c].to_numpy(float))
            names.append(c)
    if cols:
        return np.column_stack(cols), names
    return np.empty((len(frame), 0)), names


def prepare_design(spec: DesignSpec, frame: pd.DataFrame) -> DesignArrays:
    if len(frame) == 0:
        raise EmptySampleError("empty dataset")
    need_derived = "post_mra" not in frame or "age_1" not in frame
    if need_derived or any(_CAT.match(c) for c in spec.exog_controls) and "survey_year" not in frame:
        frame = add_derived_columns(frame)
    sort_cols = [spec.cluster_by] + (["t"] if "t" in frame else [])
    frame = frame.sort_values(sort_cols, kind="stable")
    controls, cnames = _control_block(frame, spec)
    used = [spec.outcome, spec.endogenous, *spec.instruments]
    ok = np.ones(len(frame), dtype=bool)
    for c in used:
        ok &= np.isfinite(frame[c].to_numpy(float))
    if controls.size:
        ok &= np.all(np.isfinite(controls), axis=1)
    if not ok.all():
        frame = frame.loc[ok]
        controls = controls[ok]
    return DesignArrays(
        spec=spec,
        y=frame[spec.outcome].to_numpy(float),
        endog=frame[spec.endogenous].to_numpy(float),
        excluded=np.column_stack([frame[c].to_numpy(float) for c in spec.instruments]),
        controls=controls,
        excl_names=list(spec.instruments),
        control_names=cnames,
        groups=frame[spec.cluster_by].to_numpy(),
        x=frame["x"].to_numpy() if "x" in frame else np.zeros(len(frame), dtype=np.int64),
        variation=frame[spec.variation_column].to_numpy(float) if spec.variation_column else None,
    )


def _sample_filter(arr: DesignArrays, mask):
    """Apply the row mask, then drop persons without variation and singletons."""
    keep = np.ones(len(arr.y), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if not keep.any():
        raise EmptySampleError("no observations in sample")
    groups = arr.groups[keep]
    codes, g = group_codes(groups)
    counts = np.bincount(codes, minlength=g)
    n_dropped_var = 0
    person_ok = np.ones(g, dtype=bool)
    if arr.variation is not None:
        v = arr.variation[keep]
        vmin = np.full(g, np.inf)
        vmax = np.full(g, -np.inf)
        np.minimum.at(vmin, codes, v)
        np.maximum.at(vmax, codes, v)
        person_ok = vmax > vmin
        n_dropped_var = int(np.sum(~person_ok))
    n_single = 0
    if arr.spec.fixed_effects:
        singles = person_ok & (counts < 2)
        n_single = int(singles.sum())
        person_ok &= counts >= 2
    idx = np.flatnonzero(keep)[person_ok[codes]]
    if idx.size == 0:
        raise EmptySampleError("no observations left after sample filters")
    return idx, n_dropped_var, n_single


def fit_design(arr: DesignArrays, mask=None, instrumented: bool = True) -> EstimateResult:
    """Estimate a prepared design on the rows selected by ``mask``."""
    spec = arr.spec
    idx, n_var, n_single = _sample_filter(arr, mask)
    groups = arr.groups[idx]
    y, d, z, w = arr.y[idx], arr.endog[idx], arr.excluded[idx], arr.controls[idx]
    cnames = list(arr.control_names)
    if spec.fixed_effects:
        block = within_demean(np.column_stack([y, d, z, w]), groups)
        y, d = block[:, 0], block[:, 1]
        q = z.shape[1]
        z, w = block[:, 2 : 2 + q], block[:, 2 + q :]
    else:
        w = np.column_stack([w, np.ones(len(y))])
        cnames = cnames + ["const"]
    dropped: list[str] = []
    if spec.drop_collinear_controls and w.shape[1]:
        keep = _collinear_drop(w, cnames)
        dropped = [cnames[j] for j in range(len(cnames)) if j not in keep]
        # columns that are identically zero after demeaning are also collinear
        w = w[:, keep]
        cnames = [cnames[j] for j in keep]
    _, n_ind = group_codes(groups)
    if n_ind < 2:
        raise EstimationError("fewer than two individuals in sample")
    if instrumented:
        beta, cov, names, fc, fse, ff, infl = tsls_arrays(
            y, d, z, w, groups, [spec.endogenous], arr.excl_names, cnames
        )
        fs_coef = dict(zip(arr.excl_names, fc.tolist()))
        fs_se = dict(zip(arr.excl_names, fse.tolist()))
    else:
        X = np.column_stack([d, w])
        names = [spec.endogenous] + cnames
        beta, bread = _qr_solve(X, y, names)
        infl = cluster_influence(y - X @ beta, X, groups, bread)
        cov = infl.T @ infl
        fs_coef, fs_se, ff = {}, {}, float("nan")
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return EstimateResult(
        names=names,
        coef=dict(zip(names, beta.tolist())),
        se_cluster=dict(zip(names, se.tolist())),
        cov=cov,
        n_obs=len(idx),
        n_individuals=n_ind,
        endogenous=spec.endogenous,
        first_stage_coef=fs_coef,
        first_stage_se=fs_se,
        first_stage_f=ff,
        n_dropped_no_variation=n_var,
        n_singletons=n_single,
        dropped_controls=dropped,
        influence=infl[:, 0],
    )


def _frame(data) -> pd.DataFrame:
    return data.frame if hasattr(data, "frame") else data


def tsls_fit(spec: DesignSpec, data) -> EstimateResult:
    """FE-2SLS of ``spec.outcome`` on instrumented ``spec.endogenous``."""
    return fit_design(prepare_design(spec, _frame(data)))


def ols_panel_fit(spec: DesignSpec, data) -> EstimateResult:
    """Same design as :func:`tsls_fit` but treating the regressor as exogenous."""
    return fit_design(prepare_design(spec, _frame(data)), instrumented=False)


def first_stage_f(spec: DesignSpec, data) -> float:
    """Cluster-robust Wald F on the excluded instruments."""
    return tsls_fit(spec, data).first_stage_f
