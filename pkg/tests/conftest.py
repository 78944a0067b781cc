import numpy as np
import pytest

from etdgrid.data import NoiseSpec, YearSeries, inject_noise, synth_year

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((name, passed, detail))
    print(f"ACCEPTANCE {'PASS' if passed else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def clean_year() -> YearSeries:
    return synth_year(seed=1)


@pytest.fixture(scope="session")
def bench(clean_year):
    """Train/test pair: the same clean year with independent sensor noise."""
    return (inject_noise(clean_year, NoiseSpec(0.05, 11)),
            inject_noise(clean_year, NoiseSpec(0.05, 12)))


def random_series(rng: np.random.Generator, n: int) -> YearSeries:
    return YearSeries(rng.uniform(0, 400, n), rng.uniform(0, 400, n),
                      rng.uniform(0.0, 0.3, n), rng.uniform(0.1, 0.6, n))
