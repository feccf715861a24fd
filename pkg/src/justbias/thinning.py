"""Degrade a monthly panel to a biennial survey and compare SE traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .biastests import WindowSpec, WindowSweepResult, sweep_assumption1
from .estimation import DesignSpec, standardize
from .synthpanel import PanelDataset

INTERVIEW_CYCLE = 24


@dataclass
class ThinnedDataset:
    """Biennial subset of a monthly panel and the interview phase of each person."""

    panel: PanelDataset
    phase: pd.Series

    @property
    def frame(self) -> pd.DataFrame:
        return self.panel.frame

    def __len__(self) -> int:
        return len(self.panel)


def thin_biennial(data: PanelDataset, seed: int, phase=None, cycle: int = INTERVIEW_CYCLE) -> ThinnedDataset:
    """Keep one month per ``cycle`` months for each person.

    Each person gets a uniform random phase ``p`` in ``0..cycle-1`` and keeps the
    rows with ``(t - p) mod cycle == 0``.  ``phase`` may be given explicitly as a
    scalar or a per-person mapping.
    """
    f = data.frame
    ids = np.unique(f["person_id"].to_numpy())
    if phase is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7E1]))
        ph = pd.Series(rng.integers(0, cycle, size=ids.size), index=ids)
    elif np.isscalar(phase):
        ph = pd.Series(int(phase), index=ids)
    else:
        ph = pd.Series(phase).reindex(ids)
        if ph.isna().any():
            raise ValueError("phase missing for some persons")
        ph = ph.astype(np.int64)
    keep = (f["t"].to_numpy() - ph.loc[f["person_id"]].to_numpy()) % cycle == 0
    panel = data.subset(keep)
    panel.meta["thinned_cycle"] = cycle
    return ThinnedDataset(panel, ph.rename("phase"))


@dataclass
class SeComparison:
    widths: np.ndarray
    se_monthly: np.ndarray
    se_thinned: np.ndarray
    monthly: WindowSweepResult
    thinned: WindowSweepResult

    @property
    def ratio(self) -> np.ndarray:
        return self.se_thinned / self.se_monthly

    @property
    def gaps(self) -> np.ndarray:
        """Widths at which the thinned panel could not be estimated."""
        return self.widths[~self.thinned.estimable]

    def rank_correlation(self) -> float:
        """Spearman correlation of the SE ratio with ``-width`` over estimable widths."""
        ok = np.isfinite(self.ratio)
        if ok.sum() < 3:
            return float("nan")
        return float(stats.spearmanr(self.ratio[ok], -self.widths[ok]).statistic)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"width": self.widths, "se_monthly": self.se_monthly, "se_thinned": self.se_thinned, "ratio": self.ratio}
        )


def compare_se_traces(
    monthly: PanelDataset,
    thinned: ThinnedDataset,
    windows: WindowSpec = WindowSpec.fine_grid(1, 60),
    spec: DesignSpec = DesignSpec(),
) -> SeComparison:
    """Health-continuity sweeps on both panels; the outcome is standardized on the monthly panel."""
    f = monthly.frame
    ref = f[spec.outcome].to_numpy(float)
    z = f"z_{spec.outcome}"
    m = monthly.with_column(z, standardize(ref))
    th = thinned.panel.with_column(z, standardize(thinned.frame[spec.outcome].to_numpy(float), ref))
    zspec = spec.replace(outcome=z)
    sm = sweep_assumption1(m, windows, zspec, standardize_outcome=False)
    st = sweep_assumption1(th, windows, zspec, standardize_outcome=False)
    return SeComparison(np.asarray(windows.widths_months), sm.se, st.se, sm, st)
