"""SINR and achievable-rate evaluation, SIC checks and baseline schemes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .power import GroupGains, LN2, QosInfeasibleError, bisect_multiplier
from .scenario import HybridBeamformer

__all__ = [
    "GainTable",
    "LinkBudget",
    "gain_table",
    "sinr_table",
    "sic_feasible",
    "baseline_fdma",
    "baseline_tdma",
    "allocate_fdma",
    "allocate_tdma",
    "baseline_zf",
    "DegenerateGeometryError",
]


class DegenerateGeometryError(ValueError):
    """The stacked channel matrix is rank deficient."""


@dataclass
class GainTable:
    """Effective power gains of every user through the transmit beams.

    ``desired_n[i]``/``desired_f[i]`` use group ``i``'s own sub-beam toward
    that user; ``cross_n[i, t]``/``cross_f[i, t]`` use group ``t``'s
    composite beam and feed the intra-group (``t == i``) and inter-group
    (``t != i``) interference terms.
    """

    desired_n: np.ndarray
    desired_f: np.ndarray
    cross_n: np.ndarray
    cross_f: np.ndarray

    @property
    def n_groups(self) -> int:
        return self.desired_n.size

    def group_gains(self, qos_n=1.0, qos_f=1.0, noise=1.0) -> GroupGains:
        return GroupGains(self.desired_n, self.desired_f, qos_n, qos_f, noise)


@dataclass
class LinkBudget:
    """Per-group SINRs and rates (bits/s/Hz) under full inter-group interference."""

    sinr_nn: np.ndarray
    sinr_ff: np.ndarray
    sinr_nf: np.ndarray
    inter_n: np.ndarray
    inter_f: np.ndarray
    noise: float

    @property
    def rate_n(self) -> np.ndarray:
        return np.log2(1 + self.sinr_nn)

    @property
    def rate_f(self) -> np.ndarray:
        return np.log2(1 + self.sinr_ff)

    @property
    def sum_rate(self) -> float:
        return float(self.rate_n.sum() + self.rate_f.sum())


def _beams(beams):
    if isinstance(beams, HybridBeamformer):
        return beams.effective("near"), beams.effective("far"), beams.effective("sum")
    u = np.asarray(beams, dtype=complex)
    return u, u, u


def gain_table(h_near: np.ndarray, h_far: np.ndarray, beams) -> GainTable:
    """Evaluate all effective gains.

    Parameters
    ----------
    h_near, h_far : ndarray, shape (M_t, K)
        Channel vectors of the NUs and FUs.
    beams : HybridBeamformer or ndarray of shape (M_t, K)
        Hybrid design, or fully digital transmit vectors.
    """
    u_n, u_f, u_c = _beams(beams)
    desired_n = np.abs(np.sum(h_near.conj() * u_n, axis=0)) ** 2
    desired_f = np.abs(np.sum(h_far.conj() * u_f, axis=0)) ** 2
    cross_n = np.abs(h_near.conj().T @ u_c) ** 2
    cross_f = np.abs(h_far.conj().T @ u_c) ** 2
    return GainTable(desired_n, desired_f, cross_n, cross_f)


def sinr_table(gains: GainTable, p1, p2, noise: float) -> LinkBudget:
    """SINRs with SIC at the NU and full inter-group interference.

    The NU first decodes the FU stream (``sinr_nf``) and then its own
    without intra-group interference; the FU treats the NU stream as noise.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if np.any(p1 < 0) or np.any(p2 < 0):
        raise ValueError("powers must be non-negative")
    pg = p1 + p2
    off = ~np.eye(gains.n_groups, dtype=bool)
    inter_n = np.sum(np.where(off, gains.cross_n * pg[None, :], 0.0), axis=1)
    inter_f = np.sum(np.where(off, gains.cross_f * pg[None, :], 0.0), axis=1)
    intra_n = np.diag(gains.cross_n)
    intra_f = np.diag(gains.cross_f)
    sinr_nn = p1 * gains.desired_n / (inter_n + noise)
    sinr_ff = p2 * gains.desired_f / (p1 * intra_f + inter_f + noise)
    sinr_nf = p2 * gains.desired_n / (p1 * intra_n + inter_n + noise)
    return LinkBudget(sinr_nn, sinr_ff, sinr_nf, inter_n, inter_f, noise)


def sic_feasible(budget: LinkBudget, rtol: float = 1e-12) -> np.ndarray:
    """Whether each NU can decode its partner's stream at the FU's rate."""
    return budget.sinr_nf >= budget.sinr_ff * (1 - rtol)


# ---------------------------------------------------------------- baselines

def baseline_fdma(gains: GroupGains, powers) -> np.ndarray:
    """Rates on two equal frequency bands per group, shape ``(K, 2)``.

    Each user sees half the noise power: ``R = log2(1 + p g / (noise / 2)) / 2``.
    """
    p = np.asarray(powers, dtype=float).reshape(-1, 2)
    g = np.column_stack([gains.g_n, gains.g_f])
    return 0.5 * np.log2(1 + p * g / (gains.noise / 2))


def baseline_tdma(gains: GroupGains, group_powers) -> np.ndarray:
    """Rates on two equal time slots per group with the full group power per slot."""
    pg = np.asarray(group_powers, dtype=float).reshape(-1, 1)
    g = np.column_stack([gains.g_n, gains.g_f])
    return 0.5 * np.log2(1 + pg * g / gains.noise)


def allocate_fdma(gains: GroupGains, p_max: float) -> np.ndarray:
    """Sum-rate optimal FDMA powers, shape ``(K, 2)``, meeting each QoS target.

    Water-filling over all ``2K`` sub-bands: ``p = 1 / (2 mu ln 2) - noise / (2 g)``
    clamped below at the QoS minimum.
    """
    g = np.concatenate([gains.g_n, gains.g_f])
    qos = np.concatenate([gains.qos_n, gains.qos_f])
    lo = (2.0 ** (2 * qos) - 1) * gains.noise / (2 * g)
    if lo.sum() > p_max * (1 + 1e-12):
        raise QosInfeasibleError("FDMA QoS targets exceed the power budget", lo.sum() - p_max)
    offset = gains.noise / (2 * g)

    def powers_at(mu):
        return np.clip(1 / (2 * mu * LN2) - offset, lo, p_max)

    mu_hi = float(np.max(1 / (2 * LN2 * (lo + offset))))
    mu_lo = float(1 / (2 * LN2 * (p_max + offset.max())))
    mu = bisect_multiplier(powers_at, p_max, mu_lo * 0.5, mu_hi * 2)
    p = powers_at(mu)
    p *= p_max / p.sum() if p.sum() > 0 else 1.0
    p = np.maximum(p, lo)
    k = gains.n_groups
    return np.column_stack([p[:k], p[k:]])


def _tdma_power(mu, g_n, g_f, noise):
    # stationary point of (log2(1 + P g_n / s) + log2(1 + P g_f / s)) / 2 at slope mu
    m = 2 * mu * LN2
    a = m * g_n * g_f
    b = m * noise * (g_n + g_f) - 2 * g_n * g_f
    c = m * noise**2 - noise * (g_n + g_f)
    disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
    return np.maximum((-b + disc) / (2 * a), 0.0)


def allocate_tdma(gains: GroupGains, p_max: float) -> np.ndarray:
    """Sum-rate optimal per-group TDMA powers meeting both users' QoS targets."""
    gmin = np.minimum(gains.g_n, gains.g_f)
    qos = np.maximum(gains.qos_n, gains.qos_f)
    lo = (2.0 ** (2 * qos) - 1) * gains.noise / gmin
    if lo.sum() > p_max * (1 + 1e-12):
        raise QosInfeasibleError("TDMA QoS targets exceed the power budget", lo.sum() - p_max)
    if gains.n_groups == 1:
        return np.array([p_max])
    s = gains.noise

    def slope(p):
        return (gains.g_n / (s + p * gains.g_n) + gains.g_f / (s + p * gains.g_f)) / (2 * LN2)

    def powers_at(mu):
        return np.clip(_tdma_power(mu, gains.g_n, gains.g_f, s), lo, p_max)

    mu = bisect_multiplier(powers_at, p_max, float(np.min(slope(np.full_like(lo, p_max)))) * 0.5,
                           float(np.max(slope(lo))) * 2)
    p = powers_at(mu)
    return np.maximum(p * p_max / p.sum(), lo)


def baseline_zf(h_near: np.ndarray, *, rcond: float = 1e-10) -> np.ndarray:
    """Fully digital zero-forcing beams toward the NUs, unit-norm columns.

    ``(h_j)^H w_i = 0`` for ``j != i``; the FUs are served only through
    whatever leaks toward them.
    """
    h = np.asarray(h_near, dtype=complex)
    s = np.linalg.svd(h, compute_uv=False)
    if s[-1] <= rcond * s[0]:
        raise DegenerateGeometryError("NU channels are linearly dependent; zero forcing is undefined")
    w = np.linalg.pinv(h.conj().T)
    return w / np.linalg.norm(w, axis=0, keepdims=True)
