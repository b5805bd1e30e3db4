"""Small input-validation helpers shared by the estimators and solvers."""

from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "check_gains",
    "check_positive",
    "check_unit_norm",
    "check_box",
    "check_random_state",
    "db_to_linear",
    "dbm_to_watts",
    "watts_to_dbm",
]


def check_positive(value, name: str, *, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if (strict and value <= 0) or (not strict and value < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value!r}")
    return float(value)


def check_gains(g_n, g_f):
    """Return 1-D float arrays of strictly positive, finite, equal-length gains."""
    g_n = np.atleast_1d(np.asarray(g_n, dtype=float)).ravel()
    g_f = np.atleast_1d(np.asarray(g_f, dtype=float)).ravel()
    if g_n.shape != g_f.shape:
        raise ValueError(f"NU and FU gains differ in length: {g_n.size} vs {g_f.size}")
    if g_n.size == 0:
        raise ValueError("need at least one group")
    for arr, name in ((g_n, "g_n"), (g_f, "g_f")):
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError(f"{name} must be finite and strictly positive")
    return g_n, g_f


def check_unit_norm(v, atol: float = 1e-9) -> np.ndarray:
    v = np.asarray(v)
    norm = np.linalg.norm(v, axis=0)
    if not np.allclose(norm, 1.0, atol=atol):
        raise ValueError(f"columns must have unit norm, got norms {norm}")
    return v


def check_box(w, lo: float = 0.0, hi: float = 1.0, atol: float = 0.0) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < lo - atol) or np.any(w > hi + atol):
        raise ValueError(f"entries must lie in [{lo}, {hi}]")
    return w


def check_random_state(seed) -> np.random.Generator:
    """Accept ``None``, an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10)


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30) / 10)


def watts_to_dbm(w):
    return 10 * np.log10(np.asarray(w, dtype=float)) + 30
