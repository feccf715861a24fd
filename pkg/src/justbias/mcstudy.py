"""Monte Carlo harness: size, power, lambda recovery and the OLS probability limit.

Replication ``r`` of grid cell ``c`` simulates its panel with the seed derived
from ``SeedSequence([master_seed, c, r])``, so a cell's results do not depend on
the order or the parallelism with which replications are run.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import expit

from .biastests import (
    WindowSpec,
    placebo_objective,
    sweep_assumption1,
    test_assumption2_controls,
    test_assumption2_difference,
)
from .estimation import DesignSpec, EstimationError, ols_fit
from .policy import mra_years_array
from .synthpanel import DgpConfig, PanelDataset, simulate_panel

SWEEP_TESTS = {
    "assumption1": sweep_assumption1,
    "difference": test_assumption2_difference,
    "controls": test_assumption2_controls,
    "placebo": placebo_objective,
}
MIN_REPORTED_REPS = 50


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid of worlds.

    ``lambda_values`` are multiples of SD(H^s) when ``lambda_in_sd`` is true and
    raw reporting shifts otherwise.  Cells not varied here take their values
    from ``base``.
    """

    lambda_values: tuple[float, ...] = (0.0,)
    sigma_nu_values: tuple[float, ...] = (1.5,)
    p_c_values: tuple[float, ...] = (0.3,)
    n_values: tuple[int, ...] = (3000,)
    reps: int = 200
    master_seed: int = 20240101
    lambda_in_sd: bool = True
    base: DgpConfig = DgpConfig()

    def __post_init__(self) -> None:
        for name in ("lambda_values", "sigma_nu_values", "p_c_values", "n_values"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, vals)
        if self.reps < 1:
            raise ValueError("reps must be at least 1")

    @property
    def reportable(self) -> bool:
        return self.reps >= MIN_REPORTED_REPS

    def cells(self) -> list[dict]:
        out = []
        for lam, sig, pc, n in itertools.product(
            self.lambda_values, self.sigma_nu_values, self.p_c_values, self.n_values
        ):
            cfg = self.base.replace(sigma_nu=float(sig), complier_jump=float(pc), n_individuals=int(n), lam=0.0)
            raw = lambda_from_sd_multiple(cfg, lam) if self.lambda_in_sd else float(lam)
            out.append(
                {
                    "lambda": float(lam),
                    "sigma_nu": float(sig),
                    "p_c": float(pc),
                    "n": int(n),
                    "config": cfg.replace(lam=raw),
                }
            )
        return out


@dataclass
class McSummary:
    """Per-replication traces of one grid cell; gaps and failures are NaN."""

    cell: dict
    config: DgpConfig
    widths: np.ndarray
    estimates: np.ndarray
    ses: np.ndarray
    first_stage_f: np.ndarray
    targets: np.ndarray
    ols: np.ndarray
    plim_target: float
    failures: list[str] = field(default_factory=list)

    @property
    def reps(self) -> int:
        return self.estimates.shape[0]

    @property
    def narrow_estimates(self) -> np.ndarray:
        return self.estimates[:, 0]

    @property
    def wide_estimates(self) -> np.ndarray:
        return self.estimates[:, -1]

    @property
    def n_failed(self) -> np.ndarray:
        return np.isnan(self.estimates).sum(axis=0)

    def rejection_rate(self, level: float = 0.05) -> np.ndarray:
        """Per-width share of replications rejecting ``coef = 0``; failed reps excluded."""
        return np.array(
            [
                rejection_rate(self.estimates[:, j], self.ses[:, j], level)
                if np.isfinite(self.estimates[:, j]).any()
                else np.nan
                for j in range(len(self.widths))
            ]
        )

    def bias(self, width_index: int = 0) -> tuple[float, float]:
        """Mean of ``estimate - lambda/SD(H^s)`` and its Monte Carlo standard error."""
        d = self.estimates[:, width_index] - self.targets
        d = d[np.isfinite(d)]
        if d.size == 0:
            return float("nan"), float("nan")
        mcse = d.std(ddof=1) / np.sqrt(d.size) if d.size > 1 else float("nan")
        return float(d.mean()), float(mcse)

    def table(self):
        import pandas as pd

        return pd.DataFrame(
            {
                "width": self.widths,
                "mean_coef": nanmean_columns(self.estimates),
                "mean_se": nanmean_columns(self.ses),
                "rejection_rate": self.rejection_rate(),
                "n_failed": self.n_failed,
            }
        )


def nanmean_columns(a: np.ndarray) -> np.ndarray:
    """Column means over finite entries; all-NaN columns give NaN without a warning."""
    a = np.asarray(a, dtype=float)
    ok = np.isfinite(a)
    n = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, np.where(ok, a, 0.0).sum(axis=0) / n, np.nan)


def rejection_rate(estimates, ses, level: float = 0.05, null: float = 0.0) -> float:
    """Share of ``|(coef - null)/se|`` above the two-sided normal critical value.

    NaN entries (failed replications) are excluded from the denominator.
    """
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    if est.shape != se.shape:
        raise ValueError("estimates and ses must be aligned")
    ok = np.isfinite(est) & np.isfinite(se)
    if not ok.any():
        raise ValueError("no finite estimates")
    crit = stats.norm.ppf(1 - level / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.abs(est[ok] - null) / se[ok]
    t = np.where(np.isnan(t), 0.0, t)
    return float(np.mean(t > crit))


def rep_seed(master_seed: int, cell: int, rep: int) -> int:
    """Independent 63-bit seed for replication ``rep`` of cell ``cell``."""
    state = np.random.SeedSequence([int(master_seed), int(cell), int(rep)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# --------------------------------------------------------------------------
# population moments of the pooled person-month sample


def _gauss_hermite(n: int = 80):
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    return nodes, weights / weights.sum()


def analytic_moments_available(config: DgpConfig) -> bool:
    return config.health_rw_sd == 0 and config.pea_bump == 0 and config.rea_bump == 0


def population_moments(config: DgpConfig, sim_rows: int = 1_000_000) -> dict:
    """Pooled person-month moments of actual health ``H`` and retirement ``R``.

    Exact (quadrature over the person intercept, enumeration of entry ages and a
    survival recursion for the retirement month) when the world has no health
    random walk and no PEA/REA bumps; otherwise simulated from ``sim_rows`` rows.
    """
    if not analytic_moments_available(config):
        n = max(2, int(np.ceil(sim_rows / config.months_observed)))
        f = simulate_panel(config.replace(n_individuals=n)).frame
        h, r = f["h_true"].to_numpy(), f["retired"].to_numpy(float)
        c = np.cov(h, r, ddof=0)
        return {
            "mean_h": float(h.mean()),
            "mean_r": float(r.mean()),
            "var_h": float(c[0, 0]),
            "var_r": float(c[1, 1]),
            "cov_hr": float(c[0, 1]),
            "method": "simulation",
        }
    T = config.months_observed
    lo, hi = config.entry_age_range
    x0 = np.arange(lo, hi + 1)
    start = 12 * config.first_month[0] + config.first_month[1] - 1
    birth = start - x0 - 12 * 62
    t = np.arange(T)
    x = (start + t[None, :] - birth[:, None]) - 12 * mra_years_array(birth)[:, None]  # (E, T)
    nodes, wq = _gauss_hermite()
    a = config.fe_sd_health * nodes  # (Q,)
    h0 = a[:, None, None] + config.age_slope * x[None] + config.age_curve * x[None].astype(float) ** 2
    p = expit(config.hazard_base + config.hazard_age * x[None] + config.theta_h * h0)
    p = np.clip(p + config.complier_jump * (x[None] == 0), 0.0, 1.0)
    surv = np.concatenate([np.ones(p.shape[:2] + (1,)), np.cumprod(1 - p, axis=2)[..., :-1]], axis=2)
    pi = surv * p
    c0 = np.cumsum(pi, axis=2)
    c1 = np.cumsum(pi * t, axis=2)
    c2 = np.cumsum(pi * t**2, axis=2)
    e_mr = t * c0 - c1
    e_mr2 = t**2 * c0 - 2 * t * c1 + c2
    d = np.concatenate([np.zeros(p.shape[:2] + (1,)), c0[..., :-1]], axis=2)  # P(t_ret < t)
    dl, lj = config.post_ret_slope_shift, config.level_jump
    e_h = h0 + dl * e_mr + lj * d
    e_h2 = h0**2 + dl**2 * e_mr2 + lj**2 * d + 2 * h0 * dl * e_mr + 2 * h0 * lj * d + 2 * dl * lj * e_mr
    e_rh = h0 * c0 + dl * e_mr + lj * d
    w = wq[:, None, None] / (len(x0) * T)
    mean_h, mean_r = float(np.sum(w * e_h)), float(np.sum(w * c0))
    m_h2, m_rh = float(np.sum(w * e_h2)), float(np.sum(w * e_rh))
    return {
        "mean_h": mean_h,
        "mean_r": mean_r,
        "var_h": m_h2 - mean_h**2,
        "var_r": mean_r - mean_r**2,
        "cov_hr": m_rh - mean_h * mean_r,
        "method": "analytic",
    }


def lambda_from_sd_multiple(config: DgpConfig, k: float, moments: dict | None = None) -> float:
    """Raw ``lam`` such that ``lam == k * SD(H^s)`` in the population.

    Solves ``lam^2 = k^2 (A + 2 lam B + lam^2 C)`` with ``A = Var(H) + sigma_nu^2``,
    ``B = Cov(H, R)`` and ``C = Var(R)``.
    """
    if k == 0:
        return 0.0
    m = moments or population_moments(config.replace(lam=0.0))
    A = m["var_h"] + config.sigma_nu**2
    B, C = m["cov_hr"], m["var_r"]
    k2 = k * k
    a = 1 - k2 * C
    if a <= 0:
        raise ValueError(f"no reporting shift equals {k} SD of reported health")
    disc = (k2 * B) ** 2 + a * k2 * A
    root = (k2 * B + np.sign(k) * np.sqrt(disc)) / a
    return float(root)


def plim_formula(theta_h, var_h, var_nu, cov_e_eps, var_eps, cov_h_eps=0.0) -> float:
    """Probability limit of the OLS slope of retirement on reported health.

    With ``cov_h_eps = 0`` this is ``(theta Var(H) + Cov(e,eps)) /
    (Var(H) + Var(nu) + Var(eps))``; the extra terms cover a reporting shift
    that is correlated with health through retirement.
    """
    den = var_h + var_nu + var_eps + 2 * cov_h_eps
    if den == 0:
        raise ZeroDivisionError("zero variance of reported health")
    return float((theta_h * var_h + cov_e_eps + theta_h * cov_h_eps) / den)


def ols_plim_target(config: DgpConfig, theta_h: float | None = None, moments: dict | None = None) -> float:
    """OLS limit for the world ``config`` with ``eps = lam * R`` and ``e = R - theta_h H``.

    ``theta_h`` defaults to the linear projection coefficient ``Cov(R,H)/Var(H)``,
    which is the no-bias limit when ``sigma_nu = lam = 0``.
    """
    m = moments or population_moments(config)
    var_h, var_r, cov_hr = m["var_h"], m["var_r"], m["cov_hr"]
    if theta_h is None:
        if var_h == 0:
            raise ZeroDivisionError("actual health has zero variance")
        theta_h = cov_hr / var_h
    lam = config.lam
    return plim_formula(
        theta_h,
        var_h,
        config.sigma_nu**2,
        lam * (var_r - theta_h * cov_hr),
        lam**2 * var_r,
        lam * cov_hr,
    )


def pooled_ols_slope(data) -> tuple[float, float]:
    """Pooled OLS of retirement on reported health with an intercept; (coef, clustered SE)."""
    f = data.frame if isinstance(data, PanelDataset) else data
    hs = f["h_subjective"].to_numpy(float)
    X = np.column_stack([hs, np.ones(len(hs))])
    res = ols_fit(f["retired"].to_numpy(float), X, f["person_id"].to_numpy(), ["h_subjective", "const"])
    return res.estimate, res.se


# --------------------------------------------------------------------------
# replication driver


def replicate(
    config: DgpConfig,
    reps: int,
    fn: Callable[[PanelDataset], object],
    master_seed: int = 0,
    cell: int = 0,
    threads: int = 1,
) -> list:
    """Apply ``fn`` to ``reps`` independently seeded panels of ``config``.

    Estimation failures are returned as the exception instance in the rep's slot.
    """

    def one(r: int):
        panel = simulate_panel(config.replace(seed=rep_seed(master_seed, cell, r)))
        try:
            return fn(panel)
        except EstimationError as err:
            return err

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(reps)))
    return [one(r) for r in range(reps)]


def _sweep_rep(test: Callable, windows: WindowSpec, spec: DesignSpec):
    def fn(panel: PanelDataset):
        sd = float(panel.frame["h_subjective"].std(ddof=1))
        sweep = test(panel, windows, spec)
        ols = pooled_ols_slope(panel)[0]
        return sweep, panel.truth.lam / sd, ols

    return fn


def run_cell(
    cell: dict,
    reps: int,
    windows: WindowSpec = WindowSpec(),
    spec: DesignSpec = DesignSpec(),
    test: str = "assumption1",
    master_seed: int = 0,
    cell_index: int = 0,
    threads: int = 1,
) -> McSummary:
    config = cell["config"]
    out = replicate(config, reps, _sweep_rep(SWEEP_TESTS[test], windows, spec), master_seed, cell_index, threads)
    W = len(windows.widths_months)
    est, se, ff = (np.full((reps, W), np.nan) for _ in range(3))
    targets, ols = np.full(reps, np.nan), np.full(reps, np.nan)
    failures = []
    for r, item in enumerate(out):
        if isinstance(item, Exception):
            failures.append(f"rep {r}: {type(item).__name__}: {item}")
            continue
        sweep, targets[r], ols[r] = item
        est[r], se[r], ff[r] = sweep.coef, sweep.se, sweep.first_stage_f
        failures.extend(f"rep {r}: width {w}: {msg}" for w, msg in sweep.errors.items())
    info = {k: v for k, v in cell.items() if k != "config"}
    return McSummary(
        cell=info,
        config=config,
        widths=np.asarray(windows.widths_months),
        estimates=est,
        ses=se,
        first_stage_f=ff,
        targets=targets,
        ols=ols,
        plim_target=ols_plim_target(config),
        failures=failures,
    )


def run_mc(
    grid: GridSpec,
    windows: WindowSpec = WindowSpec(),
    spec: DesignSpec = DesignSpec(),
    test: str = "assumption1",
    threads: int = 1,
) -> list[McSummary]:
    """Run every cell of ``grid``; deterministic given ``grid.master_seed``."""
    if test not in SWEEP_TESTS:
        raise ValueError(f"unknown test {test!r}; choose from {sorted(SWEEP_TESTS)}")
    return [
        run_cell(cell, grid.reps, windows, spec, test, grid.master_seed, i, threads)
        for i, cell in enumerate(grid.cells())
    ]
