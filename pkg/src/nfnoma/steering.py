"""Beam steering with a large beam depth via a two-layer penalty method.

A group's NU and FU share a direction, so one beam should deliver a flat
gain ``t`` over the range band ``[r_N, r_F]`` along that direction and as
little as possible elsewhere.  The mismatch is measured on a quantised
(azimuth, elevation, range) codebook and minimised over the DMA amplitudes
``W`` and the digital vectors ``v_i``.

The coupling ``W v_i`` is split through auxiliary beams ``vbar_i`` and a
quadratic penalty ``||vbar_i - W v_i||^2 / (2 rho)``.  The inner layer runs
block-coordinate descent over ``(vbar, theta, v, W)``; the outer layer
shrinks ``rho`` until the penalty term is negligible.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dma import holographic_weights
from .geometry import (ArrayGeometry, SphericalLocation, array_responses, far_field_responses)
from .scenario import HybridBeamformer, UserGroup, UserScenario

log = logging.getLogger(__name__)

__all__ = [
    "Codebook",
    "GroupTarget",
    "SteeringProblem",
    "SteeringState",
    "ConvergenceTrace",
    "ConvergenceError",
    "build_codebook",
    "group_target",
    "bpe",
    "solve_vbar",
    "solve_theta",
    "solve_v",
    "sphere_quadratic_min",
    "solve_w",
    "box_qp_objective",
    "initial_state",
    "inner_objective",
    "run_two_layer",
    "BeamSteeringDesigner",
]


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The last iterate and any diagnostic residuals are attached.
    """

    def __init__(self, message, *, state=None, trace=None, residuals=None):
        super().__init__(message)
        self.state = state
        self.trace = trace
        self.residuals = residuals


# ---------------------------------------------------------------- codebook

@dataclass(frozen=True)
class Codebook:
    """Uniform (azimuth, elevation, range) sample grid and its array responses.

    Samples are stored in flat order with range fastest, then elevation,
    then azimuth, so 1-based ``(q1, q2, q3)`` maps to
    ``q = q3 + (q2 - 1) Q3 + (q1 - 1) Q3 Q2``.  ``responses[q]`` is the
    unconjugated response ``a_q``; ``response_matrix @ u`` evaluates the
    scaled correlations ``sqrt(d_az d_el) a_q^H u``.
    """

    geometry: ArrayGeometry
    q1: int
    q2: int
    q3: int
    r_max_m: float
    far_field: bool = False
    azimuths: np.ndarray = field(init=False, repr=False)
    elevations: np.ndarray = field(init=False, repr=False)
    ranges: np.ndarray = field(init=False, repr=False)
    responses: np.ndarray = field(init=False, repr=False)
    _gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("q1", "q2", "q3"):
            if int(getattr(self, name)) < 2:
                raise ValueError(f"{name} must be at least 2")
        if not self.r_max_m > 0:
            raise ValueError("r_max_m must be positive")
        az = np.linspace(-np.pi / 2, np.pi / 2, self.q1)
        el = np.linspace(-np.pi / 2, np.pi / 2, self.q2)
        r = np.linspace(0.0, self.r_max_m, self.q3)
        set_ = object.__setattr__
        set_(self, "azimuths", az)
        set_(self, "elevations", el)
        set_(self, "ranges", r)
        aa, ee, rr = np.meshgrid(az, el, r, indexing="ij")
        set_(self, "responses", _responses(self.geometry, aa.ravel(), ee.ravel(), rr.ravel(),
                                           self.far_field))
        # sum_q a_q a_q^H over the whole grid; per-group Gram matrices subtract from it
        set_(self, "_gram", self.responses.T @ self.responses.conj())

    @property
    def n_samples(self) -> int:
        return self.q1 * self.q2 * self.q3

    @property
    def delta_az(self) -> float:
        return np.pi / (self.q1 - 1)

    @property
    def delta_el(self) -> float:
        return np.pi / (self.q2 - 1)

    @property
    def delta_r(self) -> float:
        return self.r_max_m / (self.q3 - 1)

    @property
    def scale(self) -> float:
        """Quadrature weight ``sqrt(d_az d_el)`` of off-target samples."""
        return float(np.sqrt(self.delta_az * self.delta_el))

    @property
    def response_matrix(self) -> np.ndarray:
        return self.scale * self.responses.conj()

    @property
    def samples(self) -> list[SphericalLocation]:
        aa, ee, rr = np.meshgrid(self.azimuths, self.elevations, self.ranges, indexing="ij")
        return [SphericalLocation(a, e, r) for a, e, r in zip(aa.ravel(), ee.ravel(), rr.ravel())]

    def flat_index(self, q1: int, q2: int, q3: int) -> int:
        """1-based flat sample index of the 1-based grid triple."""
        if not (1 <= q1 <= self.q1 and 1 <= q2 <= self.q2 and 1 <= q3 <= self.q3):
            raise IndexError(f"grid index ({q1}, {q2}, {q3}) out of range")
        return q3 + (q2 - 1) * self.q3 + (q1 - 1) * self.q3 * self.q2

    def direction_block(self, i1: int, i2: int) -> slice:
        """0-based rows of the grid direction ``(i1, i2)`` (0-based)."""
        start = (i1 * self.q2 + i2) * self.q3
        return slice(start, start + self.q3)

    def nearest_direction(self, azimuth: float, elevation: float) -> tuple[int, int]:
        return (int(np.argmin(np.abs(self.azimuths - azimuth))),
                int(np.argmin(np.abs(self.elevations - elevation))))


def _responses(geom, az, el, r, far_field):
    if far_field:
        return far_field_responses(geom, az, el)
    return array_responses(geom, az, el, r)


def build_codebook(geom: ArrayGeometry, q1: int, q2: int, q3: int, r_max: float,
                   far_field: bool = False) -> Codebook:
    """Quantise the half-space in front of the array into ``q1 * q2 * q3`` samples."""
    return Codebook(geom, int(q1), int(q2), int(q3), float(r_max), far_field)


@dataclass(frozen=True)
class GroupTarget:
    """Per-group view of the codebook used by the penalty subproblems.

    ``target_rows`` holds ``a^H`` along the group's exact direction at every
    codebook range (unscaled); ``in_band`` marks the ranges inside
    ``[r_N, r_F]``.  ``leak_gram`` is ``d_az d_el sum a a^H`` over every
    other grid direction, and ``gram`` adds the target rows to it.
    """

    target_rows: np.ndarray
    in_band: np.ndarray
    leak_gram: np.ndarray
    gram: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def n_in_band(self) -> int:
        return int(self.in_band.sum())

    def hinv(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Apply ``(gram + sigma I)^{-1}`` via the cached eigendecomposition."""
        e = self.eigvecs
        d = (self.eigvals + sigma).reshape((-1,) + (1,) * (x.ndim - 1))
        return e @ ((e.conj().T @ x) / d)

    def residual(self, u: np.ndarray, theta: np.ndarray, t: float) -> float:
        """``||t_i - A_i u||^2`` with target phases ``theta`` on the in-band rows."""
        x = self.target_rows @ u
        tgt = t * np.exp(1j * theta)
        val = np.sum(np.abs(tgt - x[self.in_band]) ** 2) + np.sum(np.abs(x[~self.in_band]) ** 2)
        return float(val + np.real(np.vdot(u, self.leak_gram @ u)))


def group_target(codebook: Codebook, group: UserGroup) -> GroupTarget:
    """Build the target/leakage split of the codebook for one steering group.

    The nearest grid direction is left out of the leakage set, and so is the
    mirror direction ``(-az, -el)``, which has an identical array response.
    """
    az, el = group.near.azimuth_rad, group.near.elevation_rad
    r_n, r_f = group.near.range_m, group.far.range_m
    in_band = (codebook.ranges >= r_n) & (codebook.ranges <= r_f)
    if not in_band.any():
        raise ValueError(f"no codebook range sample falls in [{r_n:g}, {r_f:g}] m; "
                         "increase q3 or widen the band")
    geom = codebook.geometry
    n_r = codebook.q3
    target = _responses(geom, np.full(n_r, az), np.full(n_r, el), codebook.ranges,
                        codebook.far_field).conj()
    excluded = {codebook.nearest_direction(az, el), codebook.nearest_direction(-az, -el)}
    gram_all = codebook._gram.copy()
    for i1, i2 in excluded:
        rows = codebook.responses[codebook.direction_block(i1, i2)]
        gram_all -= rows.T @ rows.conj()
    leak = codebook.scale**2 * gram_all
    leak = 0.5 * (leak + leak.conj().T)
    gram = leak + target.conj().T @ target
    gram = 0.5 * (gram + gram.conj().T)
    s, e = eigh(gram)
    return GroupTarget(target, in_band, leak, gram, np.maximum(s, 0.0), e)


def bpe(beamformer: np.ndarray, group: UserGroup, codebook: Codebook, t: float) -> float:
    """Beam pattern error of an effective beamformer ``u = W v`` for one group.

    Sum over the group's direction of ``(t - |a^H u|)^2`` in band and
    ``|a^H u|^2`` out of band, plus ``d_az d_el |a^H u|^2`` over every other
    grid direction.
    """
    u = np.asarray(beamformer, dtype=complex)
    gt = group_target(codebook, group)
    x = np.abs(gt.target_rows @ u)
    val = np.sum((t - x[gt.in_band]) ** 2) + np.sum(x[~gt.in_band] ** 2)
    return float(val + np.real(np.vdot(u, gt.leak_gram @ u)))


# ------------------------------------------------------------ subproblems

def _cap_objective(gt, b, sigma, const, v):
    # v^H H v - 2 Re b^H v + const with H = gram + sigma I
    return float(np.real(np.vdot(v, gt.gram @ v) + sigma * np.vdot(v, v)) - 2 * np.real(np.vdot(b, v)) + const)


def solve_vbar(gt: GroupTarget, wv: np.ndarray, theta: np.ndarray, t: float, rho: float,
               caps: np.ndarray | None = None, eps: float = 1e-2, vbar_prev=None,
               *, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Minimise ``||t_i - A_i vbar||^2 + ||vbar - W v_i||^2 / (2 rho)`` subject to
    ``|c_j^H vbar|^2 <= eps`` for every column ``c_j`` of ``caps``.

    The caps are handled exactly through their Lagrange dual, maximised by a
    projected Newton method; with ``m`` caps only ``m x m`` systems are
    solved.  If ``vbar_prev`` is feasible and no worse, it is returned.
    """
    sigma = 1.0 / (2 * rho)
    b = gt.target_rows[gt.in_band].conj().T @ (t * np.exp(1j * theta)) + sigma * wv
    const = t**2 * gt.n_in_band + sigma * float(np.real(np.vdot(wv, wv)))
    u = gt.hinv(b, sigma)
    caps = np.zeros((u.size, 0), complex) if caps is None else np.asarray(caps, complex)
    vbar = u
    if caps.shape[1] and np.max(np.abs(caps.conj().T @ u) ** 2) > eps:
        vbar = _dual_newton(gt, u, caps, sigma, eps, tol, max_iter)
    if vbar_prev is not None:
        prev_ok = caps.shape[1] == 0 or np.max(np.abs(caps.conj().T @ vbar_prev) ** 2) <= eps + 1e-9
        if prev_ok and (_cap_objective(gt, b, sigma, const, vbar_prev)
                        < _cap_objective(gt, b, sigma, const, vbar)):
            return vbar_prev
    return vbar


def _dual_newton(gt, u, caps, sigma, eps, tol, max_iter):
    m = caps.shape[1]
    umat = gt.hinv(caps, sigma)
    g = caps.conj().T @ umat
    g = 0.5 * (g + g.conj().T)
    y0 = caps.conj().T @ u
    eye = np.eye(m)

    def leak(lam):
        return np.linalg.solve(eye + g * lam[None, :], y0)

    def dual(lam):
        y = leak(lam)
        return float(np.real(np.vdot(y0, lam * y))) - eps * lam.sum()

    lam = np.zeros(m)
    y = y0
    for it in range(max_iter):
        y = leak(lam)
        grad = np.abs(y) ** 2 - eps
        pg = np.where(lam > 0, grad, np.maximum(grad, 0.0))
        if np.max(np.abs(pg)) <= tol * max(eps, 1.0):
            break
        n_mat = np.linalg.solve(eye + g * lam[None, :], g)
        hess = -2 * np.real(np.conj(y)[:, None] * n_mat * y[None, :])
        hess = 0.5 * (hess + hess.T)
        free = (lam > 0) | (grad > 0)
        d = np.zeros(m)
        hf = -hess[np.ix_(free, free)]
        reg = 1e-14 * max(1.0, np.max(np.abs(hf)))
        d[free] = np.linalg.solve(hf + reg * np.eye(hf.shape[0]), grad[free])
        g0 = dual(lam)
        step = 1.0
        for _ in range(60):
            cand = np.maximum(lam + step * d, 0.0)
            if dual(cand) >= g0 + 1e-4 * grad @ (cand - lam):
                break
            step *= 0.5
        else:
            # Newton direction failed; take a projected gradient step instead
            cand = np.maximum(lam + grad / max(np.max(np.abs(hf)), 1e-300), 0.0)
        lam = cand
    else:
        y = leak(lam)
        worst = np.max(np.abs(y) ** 2)
        if worst > eps * (1 + 1e-3):
            raise ConvergenceError("interference-cap dual did not converge",
                                   state=u - umat @ (lam * y), residuals=np.abs(y) ** 2 - eps)
        if worst > eps:
            # nearly singular cap Gram: pull the slightly infeasible point onto the caps
            return (u - umat @ (lam * y)) * np.sqrt(eps / worst)
    y = leak(lam)
    return u - umat @ (lam * y)


def solve_theta(gt: GroupTarget, vbar: np.ndarray) -> np.ndarray:
    """Optimal in-band target phases: ``theta_q = arg(a_q^H vbar)`` (0 where it vanishes)."""
    return theta_from_correlation(gt.target_rows[gt.in_band] @ vbar)


def theta_from_correlation(c: np.ndarray) -> np.ndarray:
    """Phases maximising ``Re(tbar^H c)`` over ``|tbar_q| = t``."""
    c = np.asarray(c, dtype=complex)
    return np.where(np.abs(c) > 0, np.angle(c), 0.0)


def sphere_quadratic_min(h: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Global minimiser of ``v^H h v - 2 Re(b^H v)`` on the unit sphere.

    Solves the secular equation ``||(h - lam I)^{-1} b|| = 1`` for
    ``lam < lambda_min(h)``, including the hard case.  For ``b = 0`` the
    eigenvector of the smallest eigenvalue is returned.
    """
    d, q = eigh(0.5 * (h + h.conj().T))
    beta = q.conj().T @ b
    nb = np.linalg.norm(b)
    if nb <= 1e-300:
        return q[:, 0].astype(complex)
    d0 = d[0]
    scale = max(abs(d[-1]), nb, 1e-300)
    bottom = (d - d0) <= 1e-12 * scale
    rest = ~bottom

    def norm_at(lam):
        return np.sqrt(np.sum(np.abs(beta) ** 2 / (d - lam) ** 2))

    if np.linalg.norm(beta[bottom]) <= 1e-12 * nb:
        w = np.zeros_like(beta)
        w[rest] = beta[rest] / (d[rest] - d0)
        nw = np.linalg.norm(w)
        if nw <= 1.0:
            w[np.flatnonzero(bottom)[0]] = np.sqrt(max(1.0 - nw**2, 0.0))
            v = q @ w
            return v / np.linalg.norm(v)
    lo = d0 - 1.01 * nb  # norm_at(lo) <= 1 / 1.01
    hi = d0 - 1e-14 * scale
    while norm_at(hi) < 1.0 and hi > lo:
        # nearly hard case: approach the pole more closely
        hi = d0 - (d0 - hi) * 1e-3
        if d0 - hi <= np.finfo(float).eps * max(abs(d0), 1.0):
            break
    lam = brentq(lambda x: 1.0 / norm_at(x) - 1.0, lo, hi, xtol=1e-15 * scale, rtol=4 * np.finfo(float).eps,
                 maxiter=500) if norm_at(hi) >= 1.0 else hi
    v = q @ (beta / (d - lam))
    return v / np.linalg.norm(v)


def solve_v(w: np.ndarray, vbar: np.ndarray, v_prev: np.ndarray | None = None,
            caps: np.ndarray | None = None, eps: float = 1e-2, *, kappa0: float | None = None,
            max_doublings: int = 60) -> np.ndarray:
    """Minimise ``||vbar - W v||^2`` over unit-norm ``v`` with ``|c_j^H W v|^2 <= eps``.

    The caps enter as an exterior quadratic penalty on the violated set,
    whose weight doubles until the caps hold.  The incoming ``v_prev`` is
    kept when the candidate is worse or infeasible.
    """
    w = np.asarray(w)
    h = w.conj().T @ w
    b = w.conj().T @ vbar

    def obj(v):
        r = vbar - w @ v
        return float(np.real(np.vdot(r, r)))

    v = sphere_quadratic_min(h, b)
    d = np.zeros((w.shape[1], 0), complex) if caps is None else w.conj().T @ np.asarray(caps, complex)

    def violated(v):
        return np.abs(d.conj().T @ v) ** 2 > eps

    if d.shape[1] and violated(v).any():
        kappa = kappa0 or (np.linalg.norm(h, 2) + np.linalg.norm(b)) / max(eps, 1e-12)
        active = violated(v)
        for _ in range(max_doublings):
            da = d[:, active]
            v = sphere_quadratic_min(h + kappa * da @ da.conj().T, b)
            viol = violated(v)
            if not viol.any():
                break
            active |= viol
            kappa *= 2
    if v_prev is not None:
        feas_new = d.shape[1] == 0 or not violated(v).any()
        feas_old = d.shape[1] == 0 or not violated(v_prev).any()
        if obj(v) > obj(v_prev) or (feas_old and not feas_new):
            return v_prev
    return v


def box_qp_objective(wmat, v, vbar) -> float:
    """``sum_i ||vbar_i - W v_i||^2``."""
    r = vbar - wmat @ v
    return float(np.real(np.vdot(r, r)))


def solve_w(v: np.ndarray, vbar: np.ndarray, w_prev: np.ndarray | None = None,
            *, tol: float = 1e-12, max_iter: int = 3000) -> np.ndarray:
    """Minimise ``sum_i ||vbar_i - W v_i||^2`` over real ``W`` in ``[0, 1]``.

    Rows of ``W`` decouple into ``K``-variable box QPs sharing the Hessian
    ``R = Re(V V^H)``.  All rows run accelerated projected gradient together
    with step ``1 / (2 lambda_max(R))``; each row is then polished by solving
    its reduced system on the detected free set.
    """
    v = np.asarray(v, dtype=complex)
    vbar = np.asarray(vbar, dtype=complex)
    m, k = vbar.shape[0], v.shape[0]
    r = np.real(v @ v.conj().T)
    g = np.real(vbar.conj() @ v.T)
    lip = 2 * max(np.linalg.eigvalsh(r)[-1], 1e-300)
    x = np.clip(w_prev, 0, 1) if w_prev is not None else np.full((m, k), 0.5)
    y, tk = x.copy(), 1.0
    for _ in range(max_iter):
        x_new = np.clip(y - (2 * (y @ r - g)) / lip, 0.0, 1.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        y = x_new + ((tk - 1) / t_new) * (x_new - x)
        done = np.max(np.abs(x_new - x)) <= tol
        x, tk = x_new, t_new
        if done:
            break
    x = _polish_rows(x, r, g)
    if w_prev is not None and box_qp_objective(x, v, vbar) > box_qp_objective(w_prev, v, vbar):
        return np.asarray(w_prev, dtype=float)
    return x


def _row_objective(x, r, g):
    return np.einsum("mi,ij,mj->m", x, r, x) - 2 * np.sum(x * g, axis=1)


def _polish_rows(x, r, g, atol=1e-9):
    lower = x <= atol
    upper = x >= 1 - atol
    free = ~(lower | upper)
    out = x.copy()
    fixed = np.where(upper, 1.0, 0.0)
    patterns, inverse = np.unique(free, axis=0, return_inverse=True)
    for p_idx, pat in enumerate(patterns):
        if not pat.any():
            continue
        rows = np.flatnonzero(inverse.ravel() == p_idx)
        rff = r[np.ix_(pat, pat)]
        rhs = g[np.ix_(rows, pat)] - fixed[np.ix_(rows, ~pat)] @ r[np.ix_(~pat, pat)]
        sol, *_ = np.linalg.lstsq(rff, rhs.T, rcond=None)
        cand = out[rows].copy()
        cand[:, pat] = np.clip(sol.T, 0.0, 1.0)
        cand[:, ~pat] = fixed[np.ix_(rows, ~pat)]
        better = _row_objective(cand, r, g[rows]) < _row_objective(out[rows], r, g[rows])
        out[rows[better]] = cand[better]
    return out


# -------------------------------------------------------------- two-layer

@dataclass
class SteeringProblem:
    """Inputs and tuning of the two-layer steering design."""

    scenario: UserScenario
    codebook: Codebook
    target_strength: float
    interference_cap: float = 1e-2
    penalty: float = 1.0
    penalty_divisor: float = 1.1
    tol_inner: float = 1e-2
    tol_outer: float = 1e-2
    max_inner: int = 50
    max_outer: int = 400

    def __post_init__(self):
        self.scenario.check_steering()
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if not self.penalty_divisor > 1:
            raise ValueError("penalty_divisor must exceed 1")
        if not self.target_strength > 0:
            raise ValueError("target_strength must be positive")
        if self.scenario.geometry != self.codebook.geometry:
            raise ValueError("codebook and scenario use different array geometries")

    @property
    def n_groups(self) -> int:
        return self.scenario.n_groups

    def targets(self) -> list[GroupTarget]:
        return [group_target(self.codebook, g) for g in self.scenario.groups]

    def caps(self) -> list[np.ndarray]:
        """Design-model responses of every user outside group ``i``, one array per group."""
        geom, ff = self.codebook.geometry, self.codebook.far_field
        users = [(i, u) for i, g in enumerate(self.scenario.groups) for u in g.users]
        resp = _responses(geom, np.array([u.azimuth_rad for _, u in users]),
                          np.array([u.elevation_rad for _, u in users]),
                          np.array([u.range_m for _, u in users]), ff)
        owner = np.array([i for i, _ in users])
        out = []
        for i in range(self.n_groups):
            # identical responses (e.g. a pair under the planar-wave model) give duplicate caps
            _, keep = np.unique(np.round(resp[owner != i], 12), axis=0, return_index=True)
            out.append(resp[owner != i][np.sort(keep)].T)
        return out


@dataclass
class SteeringState:
    w: np.ndarray
    v: np.ndarray
    vbar: np.ndarray
    theta: list

    def copy(self) -> "SteeringState":
        return SteeringState(self.w.copy(), self.v.copy(), self.vbar.copy(), [t.copy() for t in self.theta])

    def penalty_term(self) -> float:
        return box_qp_objective(self.w, self.v, self.vbar)


@dataclass
class ConvergenceTrace:
    """Objective after every block update, grouped by inner iteration.

    ``inner[o]`` lists, for outer iteration ``o``, one array per inner
    iteration holding the objective before the iteration followed by its
    value after each of the four block updates.
    """

    inner: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    converged: bool = False

    @property
    def objective(self) -> np.ndarray:
        """Objective at the end of every inner iteration, flattened over outer loops."""
        return np.array([seq[-1] for outer in self.inner for seq in outer])

    @property
    def n_inner(self) -> int:
        return sum(len(o) for o in self.inner)


def inner_objective(state: SteeringState, targets, t: float, rho: float) -> float:
    val = sum(gt.residual(state.vbar[:, i], state.theta[i], t) for i, gt in enumerate(targets))
    return float(val + state.penalty_term() / (2 * rho))


def initial_state(problem: SteeringProblem, targets=None) -> SteeringState:
    """Holographic amplitudes aimed at the middle of each group's band, ``v_i = e_i``,
    ``theta = 0`` and ``vbar`` from one feasible ``vbar`` solve."""
    geom = problem.scenario.geometry
    mids = [g.near.with_range(0.5 * (g.near.range_m + g.far.range_m)) for g in problem.scenario.groups]
    w = holographic_weights(geom, mids).amplitudes
    k = problem.n_groups
    v = np.eye(k, dtype=complex)
    targets = targets or problem.targets()
    caps = problem.caps()
    theta = [np.zeros(gt.n_in_band) for gt in targets]
    vbar = np.column_stack([
        solve_vbar(gt, w @ v[:, i], theta[i], problem.target_strength, problem.penalty,
                   caps[i], problem.interference_cap)
        for i, gt in enumerate(targets)])
    return SteeringState(w, v, vbar, theta)


def run_two_layer(problem: SteeringProblem, state: SteeringState | None = None):
    """Run the penalty/BCD design to convergence.

    Returns ``(state, trace)``.  Raises :class:`ConvergenceError` carrying
    both when the outer budget runs out before the penalty term drops to
    ``tol_outer``.
    """
    targets = problem.targets()
    caps = problem.caps()
    state = state.copy() if state is not None else initial_state(problem, targets)
    t, eps = problem.target_strength, problem.interference_cap
    rho = problem.penalty
    trace = ConvergenceTrace()
    k = problem.n_groups
    for outer in range(problem.max_outer):
        seqs = []
        f_prev = inner_objective(state, targets, t, rho)
        for inner in range(problem.max_inner):
            seq = [f_prev]
            for i, gt in enumerate(targets):
                state.vbar[:, i] = solve_vbar(gt, state.w @ state.v[:, i], state.theta[i], t, rho,
                                              caps[i], eps, vbar_prev=state.vbar[:, i])
            seq.append(inner_objective(state, targets, t, rho))
            for i, gt in enumerate(targets):
                state.theta[i] = solve_theta(gt, state.vbar[:, i])
            seq.append(inner_objective(state, targets, t, rho))
            for i in range(k):
                state.v[:, i] = solve_v(state.w, state.vbar[:, i], state.v[:, i], caps[i], eps)
            seq.append(inner_objective(state, targets, t, rho))
            state.w = solve_w(state.v, state.vbar, state.w)
            f_new = inner_objective(state, targets, t, rho)
            seq.append(f_new)
            seqs.append(np.array(seq))
            done = abs(f_prev - f_new) <= problem.tol_inner * abs(f_prev)
            f_prev = f_new
            if done:
                break
        pen = state.penalty_term()
        trace.inner.append(seqs)
        trace.penalty.append(pen)
        trace.rho.append(rho)
        log.debug("outer %d: rho=%.3g penalty=%.3g inner=%d", outer, rho, pen, len(seqs))
        if pen <= problem.tol_outer:
            trace.converged = True
            return state, trace
        rho /= problem.penalty_divisor
    raise ConvergenceError(f"penalty term {trace.penalty[-1]:.3g} still above {problem.tol_outer:g} "
                           f"after {problem.max_outer} outer iterations", state=state, trace=trace)


class BeamSteeringDesigner(BaseEstimator):
    """Estimator front end for the two-layer steering design.

    ``fit`` takes a :class:`UserScenario` whose groups share directions and
    stores ``beamformer_``, ``trace_``, ``state_`` and ``bpe_`` (one value
    per group).  ``transform`` maps a scenario to its effective channel
    gains ``|h^H W v_i|^2``, shape ``(K, 2)`` for (NU, FU).

    Parameters
    ----------
    target_strength : float, optional
        Desired in-band amplitude ``t``.  ``None`` means ``M_t / 4``.
    codebook_shape : tuple of int
        ``(Q1, Q2, Q3)`` samples in azimuth, elevation and range.
    r_max : float
        Range horizon of the codebook in meters.
    far_field : bool
        Design on planar-wave responses instead of spherical ones.
    on_no_convergence : {'warn', 'raise'}
        What to do when the outer loop exhausts its budget.
    """

    def __init__(self, target_strength=1e3, codebook_shape=(9, 9, 16), r_max=20.0,
                 interference_cap=1e-2, rho0=1.0, penalty_divisor=1.1, tol_inner=1e-2,
                 tol_outer=1e-2, max_inner=50, max_outer=400, far_field=False,
                 on_no_convergence="warn"):
        self.target_strength = target_strength
        self.codebook_shape = codebook_shape
        self.r_max = r_max
        self.interference_cap = interference_cap
        self.rho0 = rho0
        self.penalty_divisor = penalty_divisor
        self.tol_inner = tol_inner
        self.tol_outer = tol_outer
        self.max_inner = max_inner
        self.max_outer = max_outer
        self.far_field = far_field
        self.on_no_convergence = on_no_convergence

    def fit(self, X: UserScenario, y=None, codebook: Codebook | None = None):
        geom = X.geometry
        if codebook is None:
            codebook = build_codebook(geom, *self.codebook_shape, self.r_max, far_field=self.far_field)
        elif codebook.far_field != self.far_field:
            raise ValueError("codebook response model does not match far_field")
        t = self.target_strength if self.target_strength is not None else geom.n_elements / 4
        problem = SteeringProblem(X, codebook, t, self.interference_cap, self.rho0, self.penalty_divisor,
                                  self.tol_inner, self.tol_outer, self.max_inner, self.max_outer)
        try:
            state, trace = run_two_layer(problem)
        except ConvergenceError as err:
            if self.on_no_convergence == "raise" or not isinstance(err.state, SteeringState):
                raise
            warnings.warn(str(err), RuntimeWarning, stacklevel=2)
            state, trace = err.state, err.trace
        self.state_, self.trace_ = state, trace
        self.beamformer_ = HybridBeamformer(state.w, state.v)
        self.target_strength_ = t
        self.bpe_ = np.array([bpe(state.w @ state.v[:, i], g, codebook, t)
                              for i, g in enumerate(X.groups)])
        return self

    def transform(self, X: UserScenario) -> np.ndarray:
        check_is_fitted(self, "beamformer_")
        u = self.beamformer_.effective()
        g_n = np.abs(np.sum(X.channels("near").conj() * u, axis=0)) ** 2
        g_f = np.abs(np.sum(X.channels("far").conj() * u, axis=0)) ** 2
        return np.column_stack([g_n, g_f])
