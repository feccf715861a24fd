"""Synthetic monthly retirement panels with a known justification bias.

Each simulated person is observed for ``months_observed`` consecutive calendar
months.  Latent health follows a smooth quadratic age path plus a person
intercept; retirement is an absorbing state entered through a logistic monthly
hazard with an extra one-shot probability at the MRA month.  Reported health adds
classical noise and a constant shift ``lam`` for retirees.

All randomness for person ``i`` comes from its own stream
``SeedSequence([seed, i])``, so persons can be generated in any order (or in
parallel) with identical results.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from .policy import mra_years_array

CONDITION_NAMES = (
    "hypertension",
    "diabetes",
    "cancer",
    "heart_problems",
    "stroke",
    "arthritis",
    "psychiatric",
)

# Latent thresholds that reproduce the summary-statistics prevalences
# (0.119, 0.080, 0.012, 0.031, 0.006, 0.031, 0.006) under the default world.
DEFAULT_CONDITION_THRESHOLDS = (1.11, 1.315, 2.085, 1.734, 2.318, 1.734, 2.318)
# Cutpoints giving mean ~3.26, SD ~0.87 and a poor/fair share ~0.39 on the 1-5
# scale under the default world.
DEFAULT_SAH_CUTPOINTS = (-2.894, -2.075, 0.57, 3.075)


class ConfigError(ValueError):
    """Invalid synthetic-world or discretisation parameters."""


@dataclass(frozen=True)
class DgpConfig:
    """Structural parameters of a synthetic world.

    Health is measured so that larger values mean worse health.  ``x`` is age in
    months centred at the person's MRA.  ``q_jump`` and ``level_jump`` are
    violation knobs and must stay 0 for a world in which the identifying
    continuity assumptions hold.
    """

    n_individuals: int = 3000
    months_observed: int = 54
    entry_age_range: tuple[int, int] = (-60, 6)
    first_month: tuple[int, int] = (2015, 8)
    fe_sd_health: float = 1.0
    age_slope: float = 0.01
    age_curve: float = 0.0
    post_ret_slope_shift: float = 0.01
    health_rw_sd: float = 0.0
    theta_h: float = 0.3
    hazard_base: float = -4.5
    hazard_age: float = 0.01
    complier_jump: float = 0.3
    pea_bump: float = 0.0
    rea_bump: float = 0.0
    lam: float = 0.0
    sigma_nu: float = 1.5
    omega: float = 0.6
    objective_fe_sd: float = 0.3
    n_conditions: int = 7
    condition_thresholds: tuple[float, ...] = DEFAULT_CONDITION_THRESHOLDS
    condition_noise_sd: float = 0.3
    condition_person_sd: float = 0.5
    sah_cutpoints: tuple[float, ...] = DEFAULT_SAH_CUTPOINTS
    married_rate: float = 0.79
    health_ins_rate: float = 0.253
    control_switch_rate: float = 0.01
    q_jump: float = 0.0
    level_jump: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n_individuals < 1 or self.months_observed < 1:
            raise ConfigError("n_individuals and months_observed must be positive")
        lo, hi = self.entry_age_range
        if lo > hi:
            raise ConfigError("entry_age_range must be (low, high) with low <= high")
        if not 0.0 <= self.complier_jump <= 1.0:
            raise ConfigError("complier_jump must lie in [0, 1]")
        if self.sigma_nu < 0 or self.health_rw_sd < 0 or self.fe_sd_health < 0:
            raise ConfigError("standard deviations must be non-negative")
        if self.objective_fe_sd < 0 or self.condition_noise_sd < 0 or self.condition_person_sd < 0:
            raise ConfigError("standard deviations must be non-negative")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError("omega must lie in [0, 1]")
        if not 1 <= self.n_conditions <= 7:
            raise ConfigError("n_conditions must be between 1 and 7")
        if len(self.condition_thresholds) != self.n_conditions:
            raise ConfigError("need one threshold per condition")
        _check_cutpoints(self.sah_cutpoints)
        for name in ("married_rate", "health_ins_rate", "control_switch_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            if not all(np.isfinite(float(u)) for u in vals):
                raise ConfigError(f"{f.name} must be finite")

    def replace(self, **changes) -> DgpConfig:
        return dataclasses.replace(self, **changes)


PANEL_COLUMNS = (
    "person_id",
    "t",
    "birth_year",
    "birth_month",
    "x",
    "retired",
    "months_retired",
    "h_true",
    "h_subjective",
    "h_objective",
    "q",
    *(f"cond_{k}" for k in range(1, 8)),
    "obj_count",
    "sah_5pt",
    "poor_health",
    "married",
    "health_ins",
)

TRUTH_COLUMNS = ("h_true", "q")


@dataclass
class PanelDataset:
    """Long-format person-month panel sorted by ``(person_id, t)``.

    ``truth`` echoes the generating configuration for synthetic data and is
    ``None`` for imported panels.
    """

    frame: pd.DataFrame
    truth: DgpConfig | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n_individuals(self) -> int:
        return int(self.frame["person_id"].nunique())

    def subset(self, mask) -> PanelDataset:
        return PanelDataset(self.frame.loc[np.asarray(mask)].reset_index(drop=True), self.truth, dict(self.meta))

    def with_column(self, name: str, values) -> PanelDataset:
        frame = self.frame.copy()
        frame[name] = values
        return PanelDataset(frame, self.truth, dict(self.meta))


# --------------------------------------------------------------------------
# scalar building blocks


def latent_health_at(config: DgpConfig, a_i, x, months_retired):
    """Actual health given the person intercept, centred age and months retired.

    Level-continuous at the retirement month when ``level_jump`` is 0.
    """
    months_retired = np.asarray(months_retired)
    if np.any(months_retired < 0):
        raise ValueError("months_retired must be non-negative")
    x = np.asarray(x, dtype=float)
    out = (
        a_i
        + config.age_slope * x
        + config.age_curve * x**2
        + config.post_ret_slope_shift * months_retired
        + config.level_jump * (months_retired > 0)
    )
    return float(out) if out.ndim == 0 else out


def hazard_probability(config: DgpConfig, x, h_true):
    x = np.asarray(x)
    p = expit(config.hazard_base + config.hazard_age * x + config.theta_h * np.asarray(h_true))
    p = p + config.complier_jump * (x == 0)
    return np.clip(p, 0.0, 1.0)


def retirement_hazard_step(config: DgpConfig, x: int, h_true: float, rng: np.random.Generator) -> bool:
    """One Bernoulli retirement draw for a person who is not yet retired."""
    return bool(rng.random() < hazard_probability(config, x, h_true))


def apply_reporting(h_true, retired, config: DgpConfig, rng: np.random.Generator):
    """Reported health ``h + nu + lam * retired`` with ``nu ~ N(0, sigma_nu^2)``."""
    h_true = np.asarray(h_true, dtype=float)
    nu = config.sigma_nu * rng.standard_normal(h_true.shape)
    h_s = h_true + nu + config.lam * np.asarray(retired)
    if h_s.ndim == 0:
        return float(h_s), float(nu)
    return h_s, nu


def split_objective(h_true, config: DgpConfig, xi, retired=0):
    """Split actual health into an objective index and an unobserved remainder.

    Returns ``(h_objective, q)`` with ``h_objective + q == h_true``.  A nonzero
    ``q_jump`` moves health from the observed to the unobserved part at
    retirement.
    """
    h_true = np.asarray(h_true, dtype=float)
    h_obj = config.omega * h_true + xi - config.q_jump * np.asarray(retired)
    q = h_true - h_obj
    if np.ndim(h_obj) == 0:
        return float(h_obj), float(q)
    return h_obj, q


def _check_cutpoints(cutpoints) -> None:
    c = np.asarray(cutpoints, dtype=float)
    if c.shape != (4,) or np.any(np.diff(c) <= 0):
        raise ConfigError("need 4 strictly increasing cutpoints")


def discretize_five_point(h_subjective, cutpoints=DEFAULT_SAH_CUTPOINTS):
    """Map reported health onto the 1 (excellent) .. 5 (poor) scale."""
    _check_cutpoints(cutpoints)
    c = np.asarray(cutpoints, dtype=float)
    h = np.asarray(h_subjective, dtype=float)
    out = 1 + (h[..., None] > c).sum(axis=-1)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


# --------------------------------------------------------------------------
# panel generation


def _draw_layout(config: DgpConfig) -> tuple[int, int]:
    T, K = config.months_observed, config.n_conditions
    n_unif = 3 + 3 * T
    n_norm = 2 + K + T * (2 + K)
    return n_unif, n_norm


def person_draws(config: DgpConfig, person: int) -> tuple[np.ndarray, np.ndarray]:
    """All primitive draws for one person, from that person's own stream."""
    n_unif, n_norm = _draw_layout(config)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed) & (2**63 - 1), int(person)]))
    return rng.random(n_unif), rng.standard_normal(n_norm)


def _all_draws(config: DgpConfig, threads: int = 1):
    n = config.n_individuals
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            blocks = list(ex.map(lambda i: person_draws(config, i), range(n)))
    else:
        blocks = [person_draws(config, i) for i in range(n)]
    return np.stack([b[0] for b in blocks]), np.stack([b[1] for b in blocks])


def _markov_binary(u0, u, rate, switch):
    state = np.empty(u.shape, dtype=np.int8)
    cur = (u0 < rate).astype(np.int8)
    to_zero, to_one = switch * (1 - rate), switch * rate
    for t in range(u.shape[1]):
        if t > 0:
            flip = np.where(cur == 1, u[:, t] < to_zero, u[:, t] < to_one)
            cur = np.where(flip, 1 - cur, cur).astype(np.int8)
        state[:, t] = cur
    return state


def simulate_panel(config: DgpConfig, threads: int = 1) -> PanelDataset:
    """Generate a balanced monthly panel for ``config``.

    Nobody is retired at entry; persons with no retirement change stay in the
    panel (sample filters are applied at estimation time).
    """
    n, T, K = config.n_individuals, config.months_observed, config.n_conditions
    U, Z = _all_draws(config, threads)

    lo, hi = config.entry_age_range
    x0 = lo + np.minimum((U[:, 0] * (hi - lo + 1)).astype(np.int64), hi - lo)
    a_i = config.fe_sd_health * Z[:, 0]
    xi = config.objective_fe_sd * Z[:, 1]
    cond_person = config.condition_person_sd * Z[:, 2 : 2 + K]
    pos = 2 + K
    z_nu = Z[:, pos : pos + T]
    z_rw = Z[:, pos + T : pos + 2 * T]
    z_cond = Z[:, pos + 2 * T :].reshape(n, T, K)
    u_haz = U[:, 3 : 3 + T]
    u_mar = U[:, 3 + T : 3 + 2 * T]
    u_ins = U[:, 3 + 2 * T : 3 + 3 * T]

    start = 12 * config.first_month[0] + config.first_month[1] - 1
    birth = start - x0 - 12 * 62
    mra = mra_years_array(birth)
    t = np.arange(T)
    x = (start + t[None, :] - birth[:, None]) - 12 * mra[:, None]

    h0 = a_i[:, None] + config.age_slope * x + config.age_curve * x.astype(float) ** 2
    if config.health_rw_sd > 0:
        h0 = h0 + config.health_rw_sd * np.cumsum(z_rw, axis=1)

    p = hazard_probability(config, x, h0)
    if config.pea_bump or config.rea_bump:
        from .policy import BirthMonth, statutory_ages

        ages = [statutory_ages(BirthMonth.from_index(b)) for b in birth]
        pea = np.array([a.pea_years for a in ages])[:, None]
        rea = np.array([a.rea_years for a in ages])[:, None]
        age_m = x + 12 * mra[:, None]
        p = np.clip(p + config.pea_bump * (age_m == 12 * pea) + config.rea_bump * (age_m == 12 * rea), 0, 1)
    hit = u_haz < p
    t_ret = np.where(hit.any(axis=1), hit.argmax(axis=1), T)
    retired = (t[None, :] >= t_ret[:, None]).astype(np.int8)
    months_retired = np.where(retired == 1, t[None, :] - t_ret[:, None], 0)

    h_true = h0 + config.post_ret_slope_shift * months_retired + config.level_jump * (months_retired > 0)
    h_subj = h_true + config.sigma_nu * z_nu + config.lam * retired
    h_obj, q = split_objective(h_true, config, xi[:, None], retired)

    latent = h_obj[:, :, None] + cond_person[:, None, :] + config.condition_noise_sd * z_cond
    conds = (latent > np.asarray(config.condition_thresholds)[None, None, :]).astype(np.int8)
    sah = discretize_five_point(h_subj, config.sah_cutpoints)

    married = _markov_binary(U[:, 1], u_mar, config.married_rate, config.control_switch_rate)
    health_ins = _markov_binary(U[:, 2], u_ins, config.health_ins_rate, config.control_switch_rate)

    b_year, b_m0 = np.divmod(birth, 12)
    cols = {
        "person_id": np.repeat(np.arange(n, dtype=np.int64), T),
        "t": np.tile(t.astype(np.int64), n),
        "birth_year": np.repeat(b_year, T),
        "birth_month": np.repeat(b_m0 + 1, T),
        "x": x.ravel().astype(np.int64),
        "retired": retired.ravel(),
        "months_retired": months_retired.ravel().astype(np.int64),
        "h_true": h_true.ravel(),
        "h_subjective": h_subj.ravel(),
        "h_objective": h_obj.ravel(),
        "q": q.ravel(),
    }
    for k in range(7):
        cols[f"cond_{k + 1}"] = conds[:, :, k].ravel() if k < K else np.zeros(n * T, dtype=np.int8)
    cols["obj_count"] = conds.sum(axis=2).ravel().astype(np.int64)
    cols["sah_5pt"] = sah.ravel()
    cols["poor_health"] = (sah.ravel() >= 4).astype(np.int8)
    cols["married"] = married.ravel()
    cols["health_ins"] = health_ins.ravel()
    return PanelDataset(pd.DataFrame(cols), truth=config)
