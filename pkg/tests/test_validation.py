import numpy as np
import pytest

from nfnoma._validation import (check_box, check_gains, check_positive, check_random_state,
                                check_unit_norm, dbm_to_watts, watts_to_dbm)


def test_unit_conversions_round_trip():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    x = np.array([-75.0, 0.0, 12.5])
    assert np.allclose(watts_to_dbm(dbm_to_watts(x)), x)


def test_checks():
    assert check_positive(2, "x") == 2.0
    with pytest.raises(ValueError):
        check_positive(0.0, "x")
    assert check_positive(0.0, "x", strict=False) == 0.0
    with pytest.raises(ValueError):
        check_gains([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        check_gains([1.0, -2.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        check_unit_norm(np.ones((2, 1)))
    with pytest.raises(ValueError):
        check_box([0.5, 1.5])
    rng = np.random.default_rng(3)
    assert check_random_state(rng) is rng
    assert check_random_state(5).integers(100) == np.random.default_rng(5).integers(100)
