import json

import numpy as np
import pytest

from nfnoma.geometry import ArrayGeometry, SphericalLocation, los_channel
from nfnoma.scenario import HybridBeamformer, UserGroup, UserScenario


def test_group_and_scenario():
    geom = ArrayGeometry(3, 3)
    g = UserGroup(SphericalLocation(0.2, 1.0, 2.0), SphericalLocation(0.2, 1.0, 4.0))
    assert g.shares_direction
    sc = UserScenario(geom, [g])
    sc.check_steering()
    assert sc.channels("near").shape == (9, 1)
    assert np.allclose(sc.channels("far")[:, 0], los_channel(geom, g.far).gains)
    with pytest.raises(ValueError):
        UserScenario(geom, [])
    with pytest.raises(ValueError):
        UserGroup(SphericalLocation(0, 1, 0.0), SphericalLocation(0, 1, 1.0))
    swapped = UserScenario(geom, [UserGroup(g.far, g.near)])
    with pytest.raises(ValueError):
        swapped.check_steering()


def test_beamformer_round_trip():
    rng = np.random.default_rng(0)
    w = rng.uniform(0, 1, (6, 2))
    v = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    vf = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    for bf in (HybridBeamformer(w, v), HybridBeamformer(w, v, vf)):
        doc = json.loads(json.dumps(bf.to_dict()))
        assert "layout" in doc
        back = HybridBeamformer.from_dict(doc)
        assert np.array_equal(back.weights, bf.weights)
        assert np.array_equal(back.digital, bf.digital)
        assert np.allclose(back.effective(), bf.effective())
    split = HybridBeamformer(w, v, vf)
    assert np.allclose(split.effective("sum"), split.effective("near") + split.effective("far"))
    with pytest.raises(ValueError):
        split.effective("middle")
    with pytest.raises(ValueError):
        HybridBeamformer(w, np.ones((3, 2)))
