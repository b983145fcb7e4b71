"""Seedable sampling and quantile evaluation for the Gaussian and Student-t families.

Public API
----------
    derive_seed(master, *parts) -> int
    make_generator(seed) -> numpy.random.Generator
    uniforms(n, seed) -> ndarray
    normal_cdf(x), normal_quantile(u)
    student_t_cdf(nu, x), student_t_quantile(nu, u)
    sample_normal(params, n, seed) -> ndarray
    sample_student_t(params, n, seed) -> ndarray

Both samplers push the same open-interval uniform stream through an inverse
CDF.  Identical seeds therefore give identical uniforms whichever family is
sampled, and a monotone map of those uniforms keeps common random numbers
exact.  The bit generator is Philox (counter-based), keyed by a 64-bit seed;
per-replication substreams come from ``derive_seed``.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy import special, stats

from tailvar.errors import DomainError
from tailvar.models import SEED_MAX, NormalParams, Seed, StudentTParams

# Uniforms live on the lattice (k + 1/2) / 2**52, symmetric about 1/2 and
# strictly inside (0, 1).
_UNIFORM_BITS = 52

# Newton polishing steps applied on top of scipy's t inversion.
_T_POLISH_STEPS = 2


# ---------------------------------------------------------------------------
# Seeds and uniform streams
# ---------------------------------------------------------------------------


def derive_seed(master: Seed, *parts: object) -> Seed:
    """Hash-combine *master* with *parts* into a 64-bit substream seed."""
    _check_seed(master)
    h = hashlib.blake2b(digest_size=8)
    h.update(master.to_bytes(8, "little", signed=False))
    for part in parts:
        h.update(b"\x1f")
        h.update(repr(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little", signed=False)


def make_generator(seed: Seed) -> np.random.Generator:
    _check_seed(seed)
    return np.random.Generator(np.random.Philox(seed))


def uniforms(n: int, seed: Seed) -> np.ndarray:
    """*n* i.i.d. uniforms strictly inside (0, 1), a pure function of *seed*."""
    _check_count(n)
    rng = make_generator(seed)
    k = rng.integers(0, 2**_UNIFORM_BITS, size=n, dtype=np.int64)
    return (k + 0.5) * 2.0**-_UNIFORM_BITS


# ---------------------------------------------------------------------------
# CDFs and quantiles
# ---------------------------------------------------------------------------


def normal_cdf(x):
    """Standard normal CDF (scalar or array)."""
    return _like_input(x, special.ndtr(np.asarray(x, dtype=float)))


def normal_quantile(u):
    """Standard normal quantile; DomainError unless every *u* lies in (0, 1)."""
    arr = _check_probability(u)
    return _like_input(u, special.ndtri(arr))


def student_t_cdf(nu: float, x):
    """CDF of the unit-scale Student-t with *nu* degrees of freedom."""
    _check_dof(nu)
    return _like_input(x, special.stdtr(nu, np.asarray(x, dtype=float)))


def student_t_quantile(nu: float, u):
    """Unit-scale Student-t quantile (left-continuous inverse of the CDF).

    scipy's incomplete-beta inversion gives the starting point; Newton
    steps on ``stdtr`` then drive ``cdf(q) - u`` to rounding level.
    """
    _check_dof(nu)
    arr = _check_probability(u)
    q = special.stdtrit(nu, arr)
    for _ in range(_T_POLISH_STEPS):
        density = stats.t.pdf(q, nu)
        step = np.where(density > 0, (special.stdtr(nu, q) - arr) / density, 0.0)
        q = np.where(np.isfinite(step), q - step, q)
    # Antisymmetry about u = 1/2 holds exactly for the lattice uniforms.
    q = np.where(arr == 0.5, 0.0, q)
    return _like_input(u, q)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def sample_normal(params: NormalParams, n: int, seed: Seed) -> np.ndarray:
    """*n* draws of ``N(mu, sigma**2)`` by inverse-CDF transform."""
    return params.mu + params.sigma * special.ndtri(uniforms(n, seed))


def sample_student_t(params: StudentTParams, n: int, seed: Seed) -> np.ndarray:
    """*n* draws of ``loc + scale * T_nu`` by inverse-CDF transform."""
    return params.loc + params.scale * special.stdtrit(params.nu, uniforms(n, seed))


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _check_seed(seed: Seed) -> None:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise DomainError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) <= SEED_MAX:
        raise DomainError(f"seed must fit in 64 unsigned bits, got {seed!r}")


def _check_count(n: int) -> None:
    if int(n) != n or n < 1:
        raise DomainError(f"sample count must be a positive integer, got {n!r}")


def _check_dof(nu: float) -> None:
    if not nu > 0:
        raise DomainError(f"degrees of freedom must be > 0, got {nu!r}")


def _check_probability(u) -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    return arr


def _like_input(template, values: np.ndarray):
    """Return a Python float for scalar input, an array otherwise."""
    if np.ndim(template) == 0:
        return float(values)
    return np.asarray(values, dtype=float)
