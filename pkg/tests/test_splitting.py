import numpy as np
import pytest
from sklearn.base import clone

from nfnoma.geometry import ArrayGeometry, SphericalLocation, array_response
from nfnoma.scenario import UserGroup, UserScenario
from nfnoma.splitting import (BeamSplittingDesigner, DegenerateChannelError, cap_violation, run_ao,
                              sca_lower_bound, solve_w_sca, split_digital, split_objective)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_scenario(rng, geom, k=2):
    groups = []
    for _ in range(k):
        az_n, az_f = rng.uniform(-1.3, 1.3, 2)
        el_n, el_f = rng.uniform(0.4, 2.7, 2)
        groups.append(UserGroup(SphericalLocation(az_n, el_n, rng.uniform(1, 4)),
                                SphericalLocation(az_f, el_f, rng.uniform(4, 8))))
    return UserScenario(geom, groups)


def test_split_balances_gains_and_normalises():
    rng = np.random.default_rng(0)
    w = rng.uniform(0, 1, (16, 2))
    a_n, a_f = crandn(rng, 16), crandn(rng, 16)
    v_n, v_f, al_n, al_f = split_digital(w, a_n, a_f)
    assert np.linalg.norm(v_n + v_f) == pytest.approx(1.0, abs=1e-12)
    lhs = al_n * np.linalg.norm(w.T @ a_n.conj()) ** 2
    rhs = al_f * np.linalg.norm(w.T @ a_f.conj()) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-12)
    # sub-beams are matched filters of each user's effective channel
    g_n = w.conj().T @ a_n
    assert abs(np.vdot(g_n, v_n)) == pytest.approx(np.linalg.norm(g_n) * np.linalg.norm(v_n))


def test_split_degenerate():
    with pytest.raises(DegenerateChannelError):
        split_digital(np.zeros((4, 2)), np.ones(4, complex), np.ones(4, complex))


def test_minorant_is_tight_and_below():
    rng = np.random.default_rng(1)
    a, v = crandn(rng, 9), crandn(rng, 3)
    w_bar = rng.uniform(0, 1, (9, 3))
    assert sca_lower_bound(w_bar, w_bar, a, v) == pytest.approx(abs(np.vdot(a, w_bar @ v)) ** 2)
    for _ in range(2000):
        w = rng.uniform(0, 1, (9, 3))
        assert sca_lower_bound(w, w_bar, a, v) <= abs(np.vdot(a, w @ v)) ** 2 + 1e-9


def test_sca_step_ascends_and_respects_caps():
    rng = np.random.default_rng(2)
    geom = ArrayGeometry(4, 4)
    sc = random_scenario(rng, geom)
    a_n, a_f = sc.responses("near"), sc.responses("far")
    w = np.full((16, 2), 0.02)
    parts = [split_digital(w, a_n[:, i], a_f[:, i]) for i in range(2)]
    v_n = np.column_stack([p[0] for p in parts])
    v_f = np.column_stack([p[1] for p in parts])
    eps = 10.0
    assert cap_violation(w, a_n, a_f, v_n, v_f, eps) <= 0
    w_new = solve_w_sca(w, a_n, a_f, v_n, v_f, eps)
    assert np.all((w_new >= 0) & (w_new <= 1))
    assert split_objective(w_new, a_n, a_f, v_n, v_f) >= split_objective(w, a_n, a_f, v_n, v_f) - 1e-9
    assert cap_violation(w_new, a_n, a_f, v_n, v_f, eps) <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_ao_monotone(seed):
    rng = np.random.default_rng(seed)
    sc = random_scenario(rng, ArrayGeometry(4, 4))
    state, trace = run_ao(sc, eps=1e-2)
    for seq in trace.sca:
        assert np.all(np.diff(seq) >= -1e-9 * np.abs(seq[:-1]))
    assert np.all(np.diff(trace.rounds) >= -1e-9 * np.abs(trace.rounds[:-1]))
    assert cap_violation(state.w, sc.responses("near"), sc.responses("far"),
                         state.v_near, state.v_far, 1e-2) <= 1e-8


def test_single_group_focuses_on_both_users():
    geom = ArrayGeometry(8, 8)
    near = SphericalLocation(-0.6, np.pi / 2, 0.1)
    far = SphericalLocation(0.6, np.pi / 2, 0.2)
    est = BeamSplittingDesigner().fit(UserScenario(geom, [UserGroup(near, far)]))
    gains = est.transform(UserScenario(geom, [UserGroup(near, far)]))
    assert gains.shape == (1, 2)
    # the sub-beam gain toward each user beats what a random amplitude pattern achieves
    rng = np.random.default_rng(0)
    for loc, which in ((near, "near"), (far, "far")):
        a = array_response(geom, loc)
        ours = np.abs(a.conj() @ est.beamformer_.effective(which)[:, 0]) ** 2
        rand = np.abs(a.conj() @ rng.uniform(0, 1, 64)) ** 2
        assert ours > rand
    assert est.beamformer_.is_split
    assert clone(est).get_params()["interference_cap"] == 1e-2
