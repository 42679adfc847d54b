import math

import numpy as np
import pytest

from nilswitch.chart import SigmaClass, classify
from nilswitch.example_kepler import (ExampleParams, NoRootInBracket, contact_residual,
                                      hmax_closed_form, planar_rays, reduced_planar_field,
                                      run_example, shoot_planar, solve_contact_condition)
from nilswitch.integrate import integrate_bang
from nilswitch.pmp import CotangentPoint, hmax, lift_values

GOLDEN = (1 + math.sqrt(5)) / 2


@pytest.fixture(scope="module")
def params():
    return solve_contact_condition(a=1.0, b=0.0, c=1.0)


@pytest.fixture(scope="module")
def report(params):
    return run_example(params)


def test_default_parameters(params):
    assert params.d == pytest.approx(math.sqrt(GOLDEN), abs=1e-14)
    assert abs(params.residual) <= 1e-12
    assert params.t_bar == pytest.approx(-params.d)
    assert params.x_bar == pytest.approx(-1 / params.d)


def test_solve_for_other_parameters(params):
    p = solve_contact_condition(a=1.0, b=0.0, d=params.d, sign=1.0)
    assert abs(contact_residual(p.a, p.b, p.c, p.d)) < 1e-12
    with pytest.raises(ValueError):
        solve_contact_condition(a=1.0, b=0.0)
    with pytest.raises(NoRootInBracket):
        solve_contact_condition(a=1.0, b=0.0, c=1.0, bracket=(0.0, 0.1))


def test_contact_point_is_sigma0(example, params):
    lv = lift_values(example, params.contact_point())
    assert classify(lv, tol_sigma=1e-12) is SigmaClass.SigmaZero


def test_hmax_closed_form_matches_lifts(example, rng):
    for _ in range(20):
        z = CotangentPoint(rng.normal(size=4), rng.normal(size=4))
        assert hmax_closed_form(z.x, z.p) == pytest.approx(hmax(example, z), abs=1e-12)


def test_cyclic_adjoint_components(example):
    z0 = CotangentPoint([0.1, 0.6, 0.0, 0.0], [0.0, 1.2, -1.0, -1.0])
    arc = integrate_bang(example, z0, 0.8)
    t = arc.times
    p = arc.states[:, 4:]
    assert np.abs(p[:, 2] + 1.0).max() <= 1e-10 and np.abs(p[:, 3] + 1.0).max() <= 1e-10
    assert np.abs(p[:, 0] - (1.0 * t + 0.0)).max() <= 1e-10


def test_closed_form_p2_is_not_an_extremal_adjoint(example):
    # dp2/dt = c - p1 u1, not c: the linear formula for p2 drifts off the true adjoint
    z0 = CotangentPoint([0.1, 0.6, 0.0, 0.0], [0.0, 1.2, -1.0, -1.0])
    arc = integrate_bang(example, z0, 0.8)
    drift = np.abs(arc.states[:, 5] - (1.0 * arc.times + 1.2)).max()
    assert drift > 1e-3


def test_planar_rays(params):
    rays = planar_rays(params)
    assert any(r.stable for r in rays) and any(not r.stable for r in rays)
    F = reduced_planar_field(params, (params.x_bar, params.t_bar))
    assert np.allclose(F, 0.0, atol=1e-12)


def test_shooting_hits_the_contact(params):
    shot = shoot_planar(params)
    assert shot.residual <= 1e-6


def test_closed_form_route_drifts(report):
    cf = report.closed_form
    assert cf["x2_residual"] <= 1e-6
    assert cf["endpoint_class"] == "SigmaZero"
    assert cf["hmax_drift"] > 1e-2


def test_exact_route(report, params):
    ex = report.exact
    assert ex["x2_residual"] <= 1e-6
    assert ex["endpoint_class"] == "SigmaZero"
    assert ex["hmax_drift"] <= 1e-8
    assert ex["contact_time"] == pytest.approx(params.t_bar, abs=1e-8)
    # the contact of this family is left in forward time (t_bar < 0)
    assert ex["direction_in"] == -1 and ex["c"] < 0
    assert ex["min_rho"] > 0


def test_invalid_parameters():
    with pytest.raises(ValueError):
        run_example(ExampleParams(1.0, 0.0, 1.0, 1.0))
