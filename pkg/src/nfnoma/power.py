"""Two-stage NOMA power allocation.

Within a group the far user receives exactly the power that meets its QoS
target and the remainder goes to the near user; across groups the group
budgets are found by box-constrained water-filling on the Lagrange
multiplier of the total power constraint.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gains

log = logging.getLogger(__name__)

__all__ = [
    "GroupGains",
    "PowerAllocation",
    "QosInfeasibleError",
    "SicOrderWarning",
    "qos_min_powers",
    "group_power_bounds",
    "intra_group_split",
    "inter_group_waterfill",
    "allocate",
    "noma_rates",
    "marginal_rates",
    "bisect_multiplier",
    "NomaPowerAllocator",
]

LN2 = np.log(2.0)


class QosInfeasibleError(ValueError):
    """The QoS targets cannot be met within the power budget."""

    def __init__(self, message, deficit=0.0):
        super().__init__(message)
        self.deficit = deficit


class SicOrderWarning(UserWarning):
    """A group's near user has a weaker effective channel than its far user."""


@dataclass
class GroupGains:
    """Effective channel gains of ``K`` NOMA groups (linear power units).

    Scalars broadcast across groups.
    """

    g_n: np.ndarray
    g_f: np.ndarray
    qos_n: np.ndarray | float = 1.0
    qos_f: np.ndarray | float = 1.0
    noise: float = 1.0

    def __post_init__(self):
        self.g_n, self.g_f = check_gains(self.g_n, self.g_f)
        k = self.g_n.size
        self.qos_n = np.broadcast_to(np.asarray(self.qos_n, dtype=float), (k,)).copy()
        self.qos_f = np.broadcast_to(np.asarray(self.qos_f, dtype=float), (k,)).copy()
        if np.any(self.qos_n < 0) or np.any(self.qos_f < 0):
            raise ValueError("QoS targets must be non-negative")
        if not self.noise > 0:
            raise ValueError("noise power must be positive")

    @property
    def n_groups(self) -> int:
        return self.g_n.size

    @property
    def gamma_n(self) -> np.ndarray:
        return 2.0**self.qos_n - 1

    @property
    def gamma_f(self) -> np.ndarray:
        return 2.0**self.qos_f - 1

    def subset(self, idx) -> "GroupGains":
        return GroupGains(self.g_n[idx], self.g_f[idx], self.qos_n[idx], self.qos_f[idx], self.noise)


@dataclass
class PowerAllocation:
    p1: np.ndarray
    p2: np.ndarray
    p_group: np.ndarray
    bounds: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.p_group))


def qos_min_powers(gains: GroupGains):
    """Per-group powers that meet both QoS targets with equality.

    Returns ``(p1_min, p2_min, p_min)`` arrays.
    """
    s2 = gains.noise
    p1 = gains.gamma_n * s2 / gains.g_n
    p2 = gains.gamma_f * s2 / gains.g_f + gains.gamma_f * p1
    return p1, p2, p1 + p2


def group_power_bounds(gains: GroupGains, p_max: float) -> np.ndarray:
    """Feasible interval ``[P_min,i, P_max,i]`` for each group budget, shape ``(K, 2)``."""
    _, _, p_min = qos_min_powers(gains)
    total_min = p_min.sum()
    if total_min > p_max * (1 + 1e-12):
        deficit = total_min - p_max
        raise QosInfeasibleError(
            f"QoS targets need {total_min:.6g} W but only {p_max:.6g} W is available "
            f"(deficit {deficit:.6g} W)", deficit)
    upper = p_max - (total_min - p_min)
    return np.column_stack([p_min, np.maximum(upper, p_min)])


def intra_group_split(gains: GroupGains, p_group):
    """Optimal NU/FU split of each group budget: the far user sits exactly on its target."""
    p_group = np.broadcast_to(np.asarray(p_group, dtype=float), (gains.n_groups,))
    _, _, p_min = qos_min_powers(gains)
    short = p_group < p_min * (1 - 1e-12) - 1e-300
    if np.any(short):
        idx = np.flatnonzero(short)
        raise QosInfeasibleError(f"group budget below its QoS minimum for groups {idx.tolist()}",
                                 float(np.sum(p_min[idx] - p_group[idx])))
    gf, gam = gains.g_f, gains.gamma_f
    p2 = gam * (gains.noise + p_group * gf) / (gf + gam * gf)
    p1 = p_group - p2
    return p1, p2


def bisect_multiplier(powers_at, total, mu_lo, mu_hi, *, rtol=1e-14, max_iter=400,
                      max_expansions=10):
    """Find ``mu`` with ``sum(powers_at(mu)) == total`` for a non-increasing map.

    Bisection runs on ``log(mu)``.  If the initial bracket does not straddle
    the target it is widened by a factor ``1e3`` per side at most
    ``max_expansions`` times.
    """
    lo, hi = np.log(mu_lo), np.log(mu_hi)
    for _ in range(max_expansions + 1):
        s_lo = powers_at(np.exp(lo)).sum()
        s_hi = powers_at(np.exp(hi)).sum()
        if s_lo >= total >= s_hi:
            break
        if s_lo < total:
            lo -= np.log(1e3)
        if s_hi > total:
            hi += np.log(1e3)
    else:
        raise RuntimeError("water-level bracket does not straddle the power budget")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s = powers_at(np.exp(mid)).sum()
        if abs(s - total) <= rtol * total or hi - lo < 1e-15:
            return np.exp(mid)
        if s >= total:
            lo = mid
        else:
            hi = mid
    return np.exp(0.5 * (lo + hi))


def _group_rate_terms(gains: GroupGains):
    # NU rate as a function of group budget P: log2(alpha + slope * P)
    gam = gains.gamma_f
    a = 1 / (1 + gam)
    b = gam * gains.noise / (gains.g_f + gam * gains.g_f)
    slope = gains.g_n * a / gains.noise
    alpha = 1 - gains.g_n * b / gains.noise
    return slope, alpha


def marginal_rates(gains: GroupGains, p_group) -> np.ndarray:
    """Derivative of each group's optimal sum rate w.r.t. its budget (bits/s/Hz per W)."""
    slope, alpha = _group_rate_terms(gains)
    return slope / ((alpha + slope * np.asarray(p_group, float)) * LN2)


def inter_group_waterfill(gains: GroupGains, bounds, p_max: float, tol: float = 1e-6) -> np.ndarray:
    """Box-constrained water-filling of the group budgets with ``sum == p_max``.

    At multiplier ``mu`` each group takes ``1 / (mu ln 2) - alpha_i / slope_i``
    clamped to its box, where ``log2(alpha_i + slope_i P)`` is the group's NU
    rate.  ``tol`` bounds ``|sum - p_max|``.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if gains.n_groups == 1:
        return np.array([min(max(p_max, lo[0]), hi[0])])
    slope, alpha = _group_rate_terms(gains)
    offset = alpha / slope

    def powers_at(mu):
        return np.clip(1 / (mu * LN2) - offset, lo, hi)

    mu_hi = float(np.max(marginal_rates(gains, lo)))
    mu_lo = float(np.min(marginal_rates(gains, hi)))
    mu = bisect_multiplier(powers_at, p_max, max(mu_lo, 1e-300) * 0.5, mu_hi * 2)
    p = powers_at(mu)
    # exact level on the identified active set
    free = (p > lo) & (p < hi)
    if np.any(free):
        level = (p_max - p[~free].sum() + offset[free].sum()) / free.sum()
        cand = p.copy()
        cand[free] = level - offset[free]
        if np.all(cand >= lo - 1e-15 * np.abs(lo)) and np.all(cand <= hi + 1e-15 * np.abs(hi)):
            p = np.clip(cand, lo, hi)
    if abs(p.sum() - p_max) > tol:
        raise RuntimeError(f"water-filling missed the budget by {p.sum() - p_max:.3g} W")
    return p


def noma_rates(gains: GroupGains, p1, p2):
    """NU/FU rates under the interference-free group model (SIC at the NU)."""
    s2 = gains.noise
    r_n = np.log2(1 + p1 * gains.g_n / s2)
    r_f = np.log2(1 + p2 * gains.g_f / (p1 * gains.g_f + s2))
    return r_n, r_f


def allocate(gains: GroupGains, p_max: float, tol: float = 1e-6) -> PowerAllocation:
    """Sum-rate optimal allocation: bounds, then water-filling, then intra-group split.

    ``tol`` bounds the gap (W) between the allocated total and ``p_max``.
    """
    weak = gains.g_n < gains.g_f
    if np.any(weak):
        warnings.warn(f"groups {np.flatnonzero(weak).tolist()} have g_N < g_F; "
                      "the SIC decoding constraint may bind", SicOrderWarning, stacklevel=2)
    bounds = group_power_bounds(gains, p_max)
    p_group = inter_group_waterfill(gains, bounds, p_max, tol)
    p1, p2 = intra_group_split(gains, p_group)
    return PowerAllocation(p1=p1, p2=p2, p_group=p_group, bounds=bounds)


class NomaPowerAllocator(BaseEstimator):
    """Estimator wrapper around :func:`allocate`.

    ``fit`` takes a ``(K, 2)`` array of effective gains ``[g_N, g_F]``; after
    fitting, ``p1_``, ``p2_``, ``p_group_`` and ``bounds_`` hold the allocation
    and ``transform`` returns the per-user rates for new gains under it.
    """

    def __init__(self, p_max=1.0, noise=1.0, qos_n=1.0, qos_f=1.0):
        self.p_max = p_max
        self.noise = noise
        self.qos_n = qos_n
        self.qos_f = qos_f

    def _gains(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"expected gains of shape (K, 2), got {X.shape}")
        return GroupGains(X[:, 0], X[:, 1], self.qos_n, self.qos_f, self.noise)

    def fit(self, X, y=None):
        gains = self._gains(X)
        alloc = allocate(gains, self.p_max)
        self.p1_, self.p2_ = alloc.p1, alloc.p2
        self.p_group_, self.bounds_ = alloc.p_group, alloc.bounds
        self.n_groups_ = gains.n_groups
        return self

    def transform(self, X):
        check_is_fitted(self, "p_group_")
        r_n, r_f = noma_rates(self._gains(X), self.p1_, self.p2_)
        return np.column_stack([r_n, r_f])

    def score(self, X, y=None):
        """Sum rate in bits/s/Hz."""
        return float(self.transform(X).sum())
