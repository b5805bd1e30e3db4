"""Independent reference solvers used by the tests (slow but simple)."""

import itertools

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize

from nfnoma.geometry import array_response, far_field_response


def phase_objective(theta, x, t):
    return float(np.sum(np.abs(t * np.exp(1j * theta) - x) ** 2))


def phase_sdr(x, t, n_draws=500, rng=None):
    """Best objective of SDR + Gaussian randomisation for min ||t e^{j theta} - x||^2."""
    rng = np.random.default_rng(rng)
    n = x.size
    # maximise Re(conj(s) x^H z) over the lifted [z; s]
    q = np.zeros((n + 1, n + 1), complex)
    q[:n, n] = x
    q[n, :n] = x.conj()
    z = cp.Variable((n + 1, n + 1), hermitian=True)
    prob = cp.Problem(cp.Maximize(cp.real(cp.trace(q @ z)) / 2), [z >> 0, cp.diag(z) == 1])
    prob.solve(solver=cp.CLARABEL)
    zv = 0.5 * (z.value + z.value.conj().T)
    s, e = np.linalg.eigh(zv)
    root = e * np.sqrt(np.maximum(s, 0))[None, :]
    best = np.inf
    for _ in range(n_draws):
        xi = root @ ((rng.standard_normal(n + 1) + 1j * rng.standard_normal(n + 1)) / np.sqrt(2))
        theta = np.angle(xi[:n]) - np.angle(xi[n])
        best = min(best, phase_objective(theta, x, t))
    return best


def sphere_objective(v, h, b):
    return float(np.real(np.vdot(v, h @ v)) - 2 * np.real(np.vdot(b, v)))


def sphere_search_2d(h, b, n_points=100_000, polish=8):
    """Grid search of v^H h v - 2 Re b^H v over the unit sphere of C^2, then local polish.

    Returns ``(grid_best, polished_best)``.
    """
    n = int(round(n_points ** (1 / 3)))
    alpha = np.linspace(0, np.pi / 2, n)
    beta = np.linspace(0, 2 * np.pi, n, endpoint=False)
    a, b1, b2 = np.meshgrid(alpha, beta, beta, indexing="ij")
    v = np.stack([np.cos(a) * np.exp(1j * b1), np.sin(a) * np.exp(1j * b2)], axis=-1).reshape(-1, 2)
    vals = (np.real(np.einsum("ni,ij,nj->n", v.conj(), h, v)) - 2 * np.real(v @ b.conj()))
    order = np.argsort(vals)[:polish]

    def f(p):
        vv = np.array([np.cos(p[0]) * np.exp(1j * p[1]), np.sin(p[0]) * np.exp(1j * p[2])])
        return sphere_objective(vv, h, b)

    polished = vals[order[0]]
    for idx in order:
        i, j, k = np.unravel_index(idx, a.shape)
        res = minimize(f, [alpha[i], beta[j], beta[k]], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        polished = min(polished, res.fun)
    return float(vals[order[0]]), float(polished)


def box_qp_enumerate(r, g):
    """Exact minimum of x^T r x - 2 g^T x over [0, 1]^K by active-set enumeration (3^K cases)."""
    k = r.shape[0]
    best, arg = np.inf, None
    for status in itertools.product((0, 1, 2), repeat=k):
        status = np.array(status)
        free = status == 2
        x = np.where(status == 1, 1.0, 0.0)
        if free.any():
            rhs = g[free] - r[np.ix_(free, ~free)] @ x[~free]
            try:
                x[free] = np.linalg.solve(r[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                x[free] = np.linalg.lstsq(r[np.ix_(free, free)], rhs, rcond=None)[0]
            if np.any(x[free] < -1e-12) or np.any(x[free] > 1 + 1e-12):
                continue
        val = x @ r @ x - 2 * g @ x
        if val < best:
            best, arg = val, np.clip(x, 0, 1)
    return best, arg


def vbar_cvxpy(gt, wv, theta, t, rho, caps, eps):
    """Convex v-bar subproblem solved by a generic conic solver."""
    m = wv.size
    x = cp.Variable(m, complex=True)
    tgt = t * np.exp(1j * theta)
    s, e = np.linalg.eigh(gt.leak_gram)
    factor = (e * np.sqrt(np.maximum(s, 0))[None, :]).conj().T
    rows_in = gt.target_rows[gt.in_band]
    rows_out = gt.target_rows[~gt.in_band]
    obj = (cp.sum_squares(rows_in @ x - tgt) + cp.sum_squares(rows_out @ x)
           + cp.sum_squares(factor @ x) + cp.sum_squares(x - wv) / (2 * rho))
    cons = [cp.abs(caps[:, j].conj() @ x) <= np.sqrt(eps) for j in range(caps.shape[1])]
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return np.asarray(x.value), float(prob.value)


def bpe_bruteforce(u, group, codebook, t):
    """Beam pattern error by looping over every codebook sample."""
    resp = far_field_response if codebook.far_field else array_response
    geom = codebook.geometry
    az, el = group.near.azimuth_rad, group.near.elevation_rad
    i1, i2 = codebook.nearest_direction(az, el)
    j1, j2 = codebook.nearest_direction(-az, -el)
    total = 0.0
    for q3, r in enumerate(codebook.ranges):
        a = resp(geom, group.near.with_range(r))
        g = abs(np.vdot(a, u))
        total += (t - g) ** 2 if group.near.range_m <= r <= group.far.range_m else g**2
    w = codebook.delta_az * codebook.delta_el
    for n1, a1 in enumerate(codebook.azimuths):
        for n2, e2 in enumerate(codebook.elevations):
            if (n1, n2) in {(i1, i2), (j1, j2)}:
                continue
            for r in codebook.ranges:
                a = resp(geom, type(group.near)(a1, e2, r))
                total += w * abs(np.vdot(a, u)) ** 2
    return total
