"""Beam splitting for NOMA pairs at arbitrary locations.

Each group's digital vector is the sum of two sub-beams, one matched to
the NU and one to the FU.  Alternating optimisation switches between a
closed-form gain-balanced split of the digital vectors and a sequence of
linear programs that maximise a minorant of the max-min sub-beam gain over
the DMA amplitudes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dma import holographic_weights
from .geometry import array_response, far_field_response
from .scenario import HybridBeamformer, UserScenario
from .steering import ConvergenceError

log = logging.getLogger(__name__)

__all__ = [
    "SplitState",
    "SplitTrace",
    "DegenerateChannelError",
    "split_digital",
    "sca_lower_bound",
    "split_objective",
    "cap_violation",
    "solve_w_sca",
    "run_ao",
    "BeamSplittingDesigner",
]

# the interference disk |z| <= sqrt(eps) is replaced by this inscribed polygon
_N_SIDES = 8


class DegenerateChannelError(ValueError):
    """A user receives no signal through the current DMA weights."""


@dataclass
class SplitState:
    w: np.ndarray
    v_near: np.ndarray
    v_far: np.ndarray
    alphas: np.ndarray

    def copy(self) -> "SplitState":
        return SplitState(self.w.copy(), self.v_near.copy(), self.v_far.copy(), self.alphas.copy())


@dataclass
class SplitTrace:
    """``sca[r]`` is the max-min objective over the SCA iterations of AO round ``r``
    (starting value first); ``rounds`` holds the objective after each round."""

    sca: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    converged: bool = False


def split_digital(w: np.ndarray, a_near: np.ndarray, a_far: np.ndarray):
    """Gain-balanced matched-filter split of one group's digital vector.

    Returns ``(v_N, v_F, alpha_N, alpha_F)`` with ``v_s = alpha_s W^H a_s``,
    ``alpha_N ||W^H a_N||^2 = alpha_F ||W^H a_F||^2`` and
    ``||v_N + v_F|| = 1``.
    """
    w = np.asarray(w)
    g_n = w.conj().T @ a_near
    g_f = w.conj().T @ a_far
    nn, nf = np.vdot(g_n, g_n).real, np.vdot(g_f, g_f).real
    if nn <= 0 or nf <= 0:
        raise DegenerateChannelError("a user's response is orthogonal to every DMA feed")
    ratio = nf / nn
    s = np.linalg.norm(ratio * g_n + g_f)
    if s <= 0:
        raise DegenerateChannelError("sub-beams cancel; no unit-norm split exists")
    alpha_f = 1.0 / s
    alpha_n = alpha_f * ratio
    return alpha_n * g_n, alpha_f * g_f, alpha_n, alpha_f


def sca_lower_bound(w, w_bar, a, v) -> float:
    """Tangent minorant of ``|a^H W v|^2`` at ``W_bar``: ``2 Re(conj(s) a^H W v) - |s|^2``
    with ``s = a^H W_bar v``."""
    s_bar = np.vdot(a, w_bar @ v)
    s = np.vdot(a, w @ v)
    return float(2 * np.real(np.conj(s_bar) * s) - abs(s_bar) ** 2)


def split_objective(w, a_near, a_far, v_near, v_far) -> float:
    """``sum_i min(|a_Ni^H W v_Ni|^2, |a_Fi^H W v_Fi|^2)``."""
    g_n = np.abs(np.sum(a_near.conj() * (w @ v_near), axis=0)) ** 2
    g_f = np.abs(np.sum(a_far.conj() * (w @ v_far), axis=0)) ** 2
    return float(np.sum(np.minimum(g_n, g_f)))


def _leak_pairs(k):
    # (victim group, victim sub-beam, source group, source sub-beam) with victim != source
    return [(i, si, j, sj) for i in range(k) for j in range(k) if i != j
            for si in range(2) for sj in range(2)]


def cap_violation(w, a_near, a_far, v_near, v_far, eps) -> float:
    """Largest ``|a_i^H W v_j|^2 - eps`` over all cross-group (user, sub-beam) pairs."""
    a = (a_near, a_far)
    v = (v_near, v_far)
    k = a_near.shape[1]
    worst = -eps
    for i, si, j, sj in _leak_pairs(k):
        worst = max(worst, abs(np.vdot(a[si][:, i], w @ v[sj][:, j])) ** 2 - eps)
    return worst


def solve_w_sca(w_bar, a_near, a_far, v_near, v_far, eps: float = 1e-2):
    """One minorise-maximise step over the DMA amplitudes.

    Maximises ``sum_i tau_i`` with ``tau_i`` below both tangent minorants of
    group ``i``, ``W`` in the unit box and every cross-group leakage inside
    a regular polygon inscribed in the disk of radius ``sqrt(eps)``.  The
    problem is a linear program in ``(vec W, tau)``.
    """
    m, k = w_bar.shape
    n_w = m * k
    a = (a_near, a_far)
    v = (v_near, v_far)
    c = np.zeros(n_w + k)
    c[n_w:] = -1.0
    rows, rhs = [], []
    for i in range(k):
        for s in range(2):
            # a^H W v = sum_{m,k'} conj(a_m) v_k' W[m, k'] in row-major vec(W)
            coef = np.outer(a[s][:, i].conj(), v[s][:, i]).ravel()
            s_bar = np.vdot(a[s][:, i], w_bar @ v[s][:, i])
            row = np.zeros(n_w + k)
            row[:n_w] = -2 * np.real(np.conj(s_bar) * coef)
            row[n_w + i] = 1.0
            rows.append(row)
            rhs.append(-abs(s_bar) ** 2)
    if k > 1 and eps is not None:
        radius = np.sqrt(eps) * np.cos(np.pi / _N_SIDES)
        angles = 2 * np.pi * np.arange(_N_SIDES) / _N_SIDES
        for i, si, j, sj in _leak_pairs(k):
            coef = np.outer(a[si][:, i].conj(), v[sj][:, j]).ravel()
            for ang in angles:
                row = np.zeros(n_w + k)
                row[:n_w] = np.real(np.exp(-1j * ang) * coef)
                rows.append(row)
                rhs.append(radius)
    bounds = [(0.0, 1.0)] * n_w + [(None, None)] * k
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"SCA linear program failed: {res.message}", state=w_bar)
    return np.clip(res.x[:n_w].reshape(m, k), 0.0, 1.0)


def _shrink_to_caps(w, a_near, a_far, v_near, v_far, eps):
    # scaling W scales every leakage amplitude; bring the worst one inside the polygon
    viol = cap_violation(w, a_near, a_far, v_near, v_far, eps) + eps
    limit = eps * np.cos(np.pi / _N_SIDES) ** 2
    if viol > limit:
        w = w * np.sqrt(limit / viol) * (1 - 1e-9)
    return w


def run_ao(scenario: UserScenario, w0: np.ndarray | None = None, *, eps: float = 1e-2,
           tol_sca: float = 1e-2, tol_ao: float = 1e-2, max_sca: int = 50, max_rounds: int = 30,
           far_field: bool = False):
    """Alternate the closed-form split and SCA updates of ``W``.

    Returns ``(state, trace)``; raises :class:`ConvergenceError` with both
    attached when ``max_rounds`` is exhausted.
    """
    geom = scenario.geometry
    resp = far_field_response if far_field else array_response
    a_near = np.column_stack([resp(geom, g.near) for g in scenario.groups])
    a_far = np.column_stack([resp(geom, g.far) for g in scenario.groups])
    k = scenario.n_groups
    if w0 is None:
        w0 = 0.5 * (holographic_weights(geom, [g.near for g in scenario.groups]).amplitudes
                    + holographic_weights(geom, [g.far for g in scenario.groups]).amplitudes)
    w = np.clip(np.asarray(w0, dtype=float), 0.0, 1.0)
    trace = SplitTrace()
    state = None
    prev = -np.inf
    for rnd in range(max_rounds):
        parts = [split_digital(w, a_near[:, i], a_far[:, i]) for i in range(k)]
        v_n = np.column_stack([p[0] for p in parts])
        v_f = np.column_stack([p[1] for p in parts])
        alphas = np.array([[p[2], p[3]] for p in parts])
        w_bar = _shrink_to_caps(w, a_near, a_far, v_n, v_f, eps) if k > 1 else w
        seq = [split_objective(w_bar, a_near, a_far, v_n, v_f)]
        for _ in range(max_sca):
            w_new = solve_w_sca(w_bar, a_near, a_far, v_n, v_f, eps)
            f_new = split_objective(w_new, a_near, a_far, v_n, v_f)
            if f_new < seq[-1]:
                # the minorant guarantees ascent; a drop can only be LP round-off
                break
            w_bar = w_new
            seq.append(f_new)
            if abs(seq[-1] - seq[-2]) <= tol_sca * abs(seq[-2]):
                break
        f_round = seq[-1]
        if f_round < prev:
            trace.converged = True
            log.debug("AO round %d lowered the objective; keeping the previous round", rnd)
            return state, trace
        trace.sca.append(np.array(seq))
        trace.rounds.append(f_round)
        state = SplitState(w_bar, v_n, v_f, alphas)
        w = w_bar
        if np.isfinite(prev) and abs(f_round - prev) <= tol_ao * abs(prev):
            trace.converged = True
            return state, trace
        prev = f_round
    raise ConvergenceError(f"beam splitting did not settle within {max_rounds} AO rounds",
                           state=state, trace=trace)


class BeamSplittingDesigner(BaseEstimator):
    """Estimator front end for the AO beam-splitting design.

    ``fit`` takes a :class:`UserScenario` (users may sit anywhere) and sets
    ``beamformer_`` (with NU and FU sub-beams), ``state_`` and ``trace_``.
    ``transform`` returns ``(K, 2)`` effective gains of each user through its
    own sub-beam.
    """

    def __init__(self, interference_cap=1e-2, tol_sca=1e-2, tol_ao=1e-2, max_sca=50,
                 max_rounds=30, far_field=False, on_no_convergence="warn"):
        self.interference_cap = interference_cap
        self.tol_sca = tol_sca
        self.tol_ao = tol_ao
        self.max_sca = max_sca
        self.max_rounds = max_rounds
        self.far_field = far_field
        self.on_no_convergence = on_no_convergence

    def fit(self, X: UserScenario, y=None):
        try:
            state, trace = run_ao(X, eps=self.interference_cap, tol_sca=self.tol_sca,
                                  tol_ao=self.tol_ao, max_sca=self.max_sca,
                                  max_rounds=self.max_rounds, far_field=self.far_field)
        except ConvergenceError as err:
            if self.on_no_convergence == "raise" or err.state is None:
                raise
            warnings.warn(str(err), RuntimeWarning, stacklevel=2)
            state, trace = err.state, err.trace
        self.state_, self.trace_ = state, trace
        self.beamformer_ = HybridBeamformer(state.w, state.v_near, state.v_far)
        return self

    def transform(self, X: UserScenario) -> np.ndarray:
        check_is_fitted(self, "beamformer_")
        bf = self.beamformer_
        g_n = np.abs(np.sum(X.channels("near").conj() * bf.effective("near"), axis=0)) ** 2
        g_f = np.abs(np.sum(X.channels("far").conj() * bf.effective("far"), axis=0)) ** 2
        return np.column_stack([g_n, g_f])
