"""Cohort-specific statutory retirement ages and the MRA-centred running variable.

Thresholds follow the Singapore schedule by birth year and month.  Cutoffs such
as ``1960.7`` mean July 1960 and are inclusive lower bounds for the later cohort.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FIRST_SUPPORTED = (1939, 1)
LAST_SUPPORTED = (1980, 12)

# (year, month) at which the next bracket starts, with the age that applies from there on
_MRA_STEPS = ((1960, 7, 63),)
_MRA_BASE = 62
_PEA_STEPS = ((1950, 1, 63), (1952, 1, 64), (1954, 1, 65))
_PEA_BASE = 62
_REA_STEPS = ((1952, 7, 67), (1955, 7, 68))
_REA_BASE = 65


class UnsupportedCohortError(ValueError):
    """Birth month outside the cohorts covered by the statutory schedule."""


@dataclass(frozen=True, order=True)
class BirthMonth:
    """A calendar month; used for both births and observation dates."""

    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @property
    def index(self) -> int:
        """Months since January of year 0."""
        return 12 * self.year + (self.month - 1)

    @classmethod
    def from_index(cls, index: int) -> BirthMonth:
        year, m0 = divmod(int(index), 12)
        return cls(year, m0 + 1)

    def shift(self, months: int) -> BirthMonth:
        return BirthMonth.from_index(self.index + months)


@dataclass(frozen=True)
class StatutoryAges:
    mra_years: int
    pea_years: int
    rea_years: int


def _lookup(index: int, base: int, steps) -> int:
    age = base
    for year, month, value in steps:
        if index >= 12 * year + month - 1:
            age = value
    return age


def _check_supported(index: int) -> None:
    lo = 12 * FIRST_SUPPORTED[0] + FIRST_SUPPORTED[1] - 1
    hi = 12 * LAST_SUPPORTED[0] + LAST_SUPPORTED[1] - 1
    if not lo <= index <= hi:
        b = BirthMonth.from_index(index)
        raise UnsupportedCohortError(
            f"birth {b.year}-{b.month:02d} outside supported cohorts "
            f"{FIRST_SUPPORTED[0]}-{FIRST_SUPPORTED[1]:02d}..{LAST_SUPPORTED[0]}-{LAST_SUPPORTED[1]:02d}"
        )


def statutory_ages(birth: BirthMonth) -> StatutoryAges:
    """Return MRA, PEA and REA (in whole years) for a birth month."""
    idx = birth.index
    _check_supported(idx)
    return StatutoryAges(
        mra_years=_lookup(idx, _MRA_BASE, _MRA_STEPS),
        pea_years=_lookup(idx, _PEA_BASE, _PEA_STEPS),
        rea_years=_lookup(idx, _REA_BASE, _REA_STEPS),
    )


def mra_years_array(birth_index: np.ndarray) -> np.ndarray:
    """Vectorised MRA lookup on month indices (see :attr:`BirthMonth.index`)."""
    birth_index = np.asarray(birth_index)
    lo = 12 * FIRST_SUPPORTED[0] + FIRST_SUPPORTED[1] - 1
    hi = 12 * LAST_SUPPORTED[0] + LAST_SUPPORTED[1] - 1
    if birth_index.size and (birth_index.min() < lo or birth_index.max() > hi):
        raise UnsupportedCohortError("birth months outside supported cohorts")
    out = np.full(birth_index.shape, _MRA_BASE, dtype=np.int64)
    for year, month, value in _MRA_STEPS:
        out[birth_index >= 12 * year + month - 1] = value
    return out


def center_age(birth: BirthMonth, observation: BirthMonth) -> int:
    """Age in months at ``observation`` minus the MRA in months.

    The month in which the person turns exactly the MRA maps to 0.
    """
    if observation < birth:
        raise ValueError("observation precedes birth")
    age_months = observation.index - birth.index
    return age_months - 12 * statutory_ages(birth).mra_years


def instrument(x):
    """Post-MRA indicator ``1{x >= 0}``; the MRA month itself counts as treated."""
    if np.ndim(x) == 0:
        return int(x >= 0)
    return (np.asarray(x) >= 0).astype(np.int8)
