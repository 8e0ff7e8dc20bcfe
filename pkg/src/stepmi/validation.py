"""Small input-validation helpers shared by the numeric modules."""

from __future__ import annotations

import numpy as np

from .errors import RankDeficientDesign

# First element of every derived-stream key path.  Keeping the registry in
# one place guarantees two subsystems can never collide on a key.
RNG_NP_VALUES = 1      # donor-based value draws, per interval and m
RNG_NP_DONOR = 2       # non-self donor selection, once per interval
RNG_NP_WEEK = 3        # whole-week donor selection
RNG_PAR = 4            # chained-equation parameter and value draws
RNG_SIM = 5            # replicate bootstrap and pattern assignment
RNG_GEN = 6            # synthetic cohort generation
RNG_PIPELINE = 7       # per-timepoint imputation seeds in pipeline runs


def as_rng(seed) -> np.random.Generator:
    """Coerce an int seed, SeedSequence, or Generator to a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derived_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream derived from a master seed and an integer key path.

    Streams with distinct key paths are statistically independent, so work
    units may run in any order (or in parallel) without changing results.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def check_design_matrix(x: np.ndarray, min_extra_rows: int = 1) -> np.ndarray:
    """Validate a dense design matrix: 2-D, finite, full column rank."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"design matrix must be 2-D, got ndim={x.ndim}")
    n, p = x.shape
    if n < p + min_extra_rows:
        raise RankDeficientDesign(
            f"need at least {p + min_extra_rows} rows for {p} columns, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("design matrix contains non-finite values")
    if np.linalg.matrix_rank(x) < p:
        raise RankDeficientDesign(f"design matrix is rank deficient ({n}x{p})")
    return x


def check_interval_bounds(lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Validate paired interval bounds: equal length, lower <= upper, no NaN."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("bounds must be two 1-D arrays of equal length")
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
        raise ValueError("bounds must not contain NaN")
    if np.any(lower > upper):
        raise ValueError("every lower bound must be <= its upper bound")
    return lower, upper


def check_vector(y, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y
