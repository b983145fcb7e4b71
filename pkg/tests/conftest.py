"""Pytest configuration and fixtures.

Provides temporary directories, price files, nominal models and a small
experiment config shared across the test modules.
"""

from __future__ import annotations

import tempfile
from collections.abc import Generator
from pathlib import Path

import pytest

from tailvar.config import ExperimentConfig
from tailvar.models import NominalModel


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def two_row_prices(temp_dir: Path) -> Path:
    """Price file with a single return (log(1.01))."""
    path = temp_dir / "two_rows.csv"
    path.write_text("date,close\n2024-01-02,100\n2024-01-03,101\n")
    return path


@pytest.fixture
def sample_prices(temp_dir: Path) -> Path:
    """Thirty business days of a zig-zag price path, written unsorted."""
    rows = []
    close = 100.0
    for day in range(1, 31):
        close *= 1.012 if day % 3 else 0.981
        rows.append(f"2024-03-{day:02d},{close:.6f}")
    rows = rows[15:] + rows[:15]
    path = temp_dir / "prices.csv"
    path.write_text("date,close\n" + "\n".join(rows) + "\n")
    return path


@pytest.fixture
def unit_model() -> NominalModel:
    """Gaussian nominal model with mu = 0 and sigma = 0.01."""
    return NominalModel(mu_hat=0.0, sigma_hat=0.01)


@pytest.fixture
def drifting_model() -> NominalModel:
    """Gaussian nominal model with a nonzero mean."""
    return NominalModel(mu_hat=0.0005, sigma_hat=0.0108, sample_size=2_000)


@pytest.fixture
def small_config() -> ExperimentConfig:
    """A study small enough to run in a few seconds."""
    return ExperimentConfig(
        alphas=(0.99, 0.995),
        nus=(5.0, 10.0),
        n_mc=2_000,
        m_reps=4,
        t_obs=500,
        master_seed=7,
        grid_m=60,
        dmm_d_max=4,
        moment_samples=5_000,
        is_tol=1e-5,
    )
