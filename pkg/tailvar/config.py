"""Experiment configuration and its flat ``key = value`` file format.

Public API
----------
    ExperimentConfig
    parse_config(text) -> ExperimentConfig
    load_config(path) -> ExperimentConfig
    ExperimentConfig.to_text() -> str

File format::

    # comments and blank lines are ignored
    alphas = 0.99, 0.995
    nus = 5, 7, 10
    m_reps = 100
    moment_source = sampled      # or: analytic
    common_streams = false

Every key is optional and falls back to its default; an unknown key, a
repeated key or a value of the wrong type raises ConfigError naming the key.
``to_text`` writes every key, so its output re-parses to an equal config.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from tailvar.errors import ConfigError
from tailvar.models import SEED_MAX, MomentSource

_MOMENT_SOURCES = {"sampled": MomentSource.SAMPLED, "analytic": MomentSource.ANALYTIC}
_POSITIVE_COUNTS = (
    "n_mc",
    "m_reps",
    "grid_m",
    "dmm_d_max",
    "moment_samples",
    "is_max_iter",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Budgets and settings for the replicated misspecification study."""

    alphas: tuple[float, ...] = (0.99, 0.995)
    nus: tuple[float, ...] = (5.0, 7.0, 10.0)
    n_mc: int = 10_000
    m_reps: int = 100
    t_obs: int = 2_000
    master_seed: int = 20240101
    # Nominal model the truth is variance-matched to.
    mu_nominal: float = 0.0
    sigma_nominal: float = 0.0108
    grid_m: int = 200
    grid_span: float = 8.0
    dmm_d_max: int = 7
    moment_source: MomentSource = MomentSource.SAMPLED
    moment_samples: int = 100_000
    is_tol: float = 1e-6
    is_max_iter: int = 100
    common_streams: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "nus", tuple(float(v) for v in self.nus))
        if not self.alphas:
            raise ConfigError("at least one level is required", "alphas")
        if not self.nus:
            raise ConfigError("at least one value is required", "nus")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ConfigError(f"{a!r} is not in (0, 1)", "alphas")
        for v in self.nus:
            if not v > 2:
                raise ConfigError(f"{v!r} is not > 2", "nus")
        if len(set(self.alphas)) != len(self.alphas):
            raise ConfigError("duplicate level", "alphas")
        if len(set(self.nus)) != len(self.nus):
            raise ConfigError("duplicate value", "nus")
        for key in _POSITIVE_COUNTS:
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", key)
        if self.t_obs < 2:
            raise ConfigError("must be >= 2", "t_obs")
        if not 0 <= self.master_seed <= SEED_MAX:
            raise ConfigError("must fit in 64 unsigned bits", "master_seed")
        for key in ("sigma_nominal", "grid_span", "is_tol"):
            value = getattr(self, key)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError("must be finite and > 0", key)
        if not math.isfinite(self.mu_nominal):
            raise ConfigError("must be finite", "mu_nominal")

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


def parse_config(text: str) -> ExperimentConfig:
    kinds = {f.name: str(f.type) for f in dataclasses.fields(ExperimentConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in kinds:
            raise ConfigError(f"unknown key (line {lineno})", key)
        if key in values:
            raise ConfigError(f"repeated key (line {lineno})", key)
        values[key] = _parse_value(key, kinds[key], value)
    return ExperimentConfig(**values)


def _parse_value(key: str, kind: str, text: str) -> object:
    try:
        if kind == "tuple[float, ...]":
            return tuple(float(item) for item in text.split(",") if item.strip())
        if kind == "int":
            return int(text.replace("_", ""))
        if kind == "float":
            return float(text)
        if kind == "bool":
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(text)
            return lowered == "true"
        if kind == "MomentSource":
            return _MOMENT_SOURCES[text.lower()]
    except (KeyError, ValueError):
        raise ConfigError(f"invalid value {text!r}", key) from None
    raise ConfigError(f"unsupported field type {kind}", key)


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, MomentSource):
        return next(name for name, src in _MOMENT_SOURCES.items() if src is value)
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return repr(value)
