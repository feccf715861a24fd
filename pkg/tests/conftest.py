import numpy as np
import pandas as pd
import pytest

from justbias.synthpanel import DgpConfig, simulate_panel

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_panel():
    return simulate_panel(DgpConfig(n_individuals=400, seed=11))


@pytest.fixture(scope="session")
def default_panel():
    return simulate_panel(DgpConfig(seed=42))


def make_fe_fixture(n_persons=12, t_per=8, seed=0, n_controls=1):
    """Tiny unbalanced panel with person effects, a binary instrument and a continuous endogenous regressor."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in range(n_persons):
        T = t_per + int(rng.integers(-2, 3))
        a = rng.normal()
        start = int(rng.integers(-6, 2))
        for k in range(T):
            x = start + k
            z = int(x >= 0)
            d = 0.5 * a + 0.8 * z + rng.normal(scale=0.5)
            rows.append((p, k, x, z, d, a))
    f = pd.DataFrame(rows, columns=["person_id", "t", "x", "z", "d", "a"])
    for j in range(n_controls):
        f[f"w{j}"] = rng.normal(size=len(f))
    f["y"] = 1.5 * f["d"] + f["a"] + 0.3 * f.get("w0", 0) + rng.normal(scale=0.7, size=len(f))
    return f
