import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import random_off_sigma_points, sigma_minus_point
from nilswitch.pmp import (CotangentPoint, OnSwitchingLocus, SingularControlUndefined, bang_feedback,
                           hmax, hmax_flow_field, lift, lift_field, lift_values, singular_feedback,
                           singular_flow_field, singular_hamiltonian)


def fd_symplectic(H, z, h=1e-6):
    """Central differences of a scalar H on T*R^4, arranged as (dH/dp, -dH/dx)."""
    z = np.asarray(z, dtype=float)
    g = np.array([(H(z + h * e) - H(z - h * e)) / (2 * h) for e in np.eye(8)])
    return np.concatenate([g[4:], -g[:4]])


def test_lift_fields_match_finite_differences(example, rng):
    for z in random_off_sigma_points(example, rng, 50):
        for key in ("0", "1", "2", "01", "02", "12"):
            F = example.field(key)
            exact = lift_field(F, z)
            approx = fd_symplectic(lambda w: lift(F, w), z.as_array())
            assert np.allclose(exact, approx, atol=1e-6, rtol=1e-6), key


def test_hmax_field_matches_finite_differences(example, rng):
    for z in random_off_sigma_points(example, rng, 50):
        exact = hmax_flow_field(example, z)
        approx = fd_symplectic(lambda w: hmax(example, CotangentPoint.from_array(w)), z.as_array())
        assert np.allclose(exact, approx, atol=1e-6, rtol=1e-6)


def test_singular_field_matches_finite_differences(example, rng):
    for z in random_off_sigma_points(example, rng, 20):
        if abs(lift_values(example, z).H12) < 0.2:
            continue
        exact = singular_flow_field(example, z)
        approx = fd_symplectic(lambda w: singular_hamiltonian(example, CotangentPoint.from_array(w)),
                               z.as_array())
        assert np.allclose(exact, approx, atol=1e-6, rtol=1e-6)


def test_bang_feedback_is_unit_and_undefined_on_sigma(example):
    z = CotangentPoint([0.3, 0.7, 0.1, 0.2], [0.5, -0.4, -1.0, -1.0])
    u = bang_feedback(lift_values(example, z))
    assert np.linalg.norm(u) == pytest.approx(1.0)
    with pytest.raises(OnSwitchingLocus):
        bang_feedback(lift_values(example, sigma_minus_point(example)))


def test_hmax_conserved_along_bang_arc(example):
    z0 = CotangentPoint([0.3, 0.7, 0.1, 0.2], [0.5, -0.4, -1.0, -1.0])
    sol = solve_ivp(lambda t, z: hmax_flow_field(example, z), (0, 0.5), z0.as_array(),
                    method="DOP853", rtol=1e-11, atol=1e-12)
    H = [hmax(example, CotangentPoint.from_array(z)) for z in sol.y.T]
    assert max(H) - min(H) < 1e-9


def test_singular_flow_keeps_switching_functions_zero(example):
    z0 = sigma_minus_point(example, p1=0.6)
    lv = lift_values(example, z0)
    assert lv.rho == 0.0 and abs(lv.H12) > 0
    sol = solve_ivp(lambda t, z: singular_flow_field(example, z), (0, 1.0), z0.as_array(),
                    method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
    assert sol.success
    worst = max(lift_values(example, z).rho for z in sol.sol(np.linspace(0, 1, 101)).T)
    assert worst <= 1e-8


def test_singular_feedback_admissibility():
    from nilswitch.pmp import LiftValues
    u, ok = singular_feedback(LiftValues(0, 0, 0, 0.3, 0.4, 1.0))
    assert np.allclose(u, [-0.4, 0.3]) and ok
    _, ok = singular_feedback(LiftValues(0, 0, 0, 3.0, 4.0, 1.0))
    assert not ok
    with pytest.raises(SingularControlUndefined):
        singular_feedback(LiftValues(0, 0, 0, 1.0, 0.0, 0.0))
