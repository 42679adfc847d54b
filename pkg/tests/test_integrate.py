import math

import numpy as np
import pytest

from conftest import near_sigma_plus, sigma0_point, sigma_minus_point
from nilswitch.blowup import ChartIState, m0_closed_form
from nilswitch.chart import wrap
from nilswitch.integrate import (CONTACT, SWITCH_PI, Arc, IntegratorOptions, Jump, NearSigmaField,
                                 NotInNeighborhood, contact_time, integrate_bang,
                                 integrate_model_contact, integrate_near_sigma, point_from_state,
                                 state_from_point)
from nilswitch.manifolds import stable_manifold_point
from nilswitch.pmp import CotangentPoint, hmax, lift_values


def test_options_validation():
    with pytest.raises(ValueError):
        IntegratorOptions(atol=0.0)
    with pytest.raises(ValueError):
        IntegratorOptions(direction=0)
    with pytest.raises(ValueError):
        IntegratorOptions(method="Euler")


def test_arc_requires_increasing_times():
    with pytest.raises(ValueError):
        Arc("Bang", "t", [0.0, 0.0], np.zeros((2, 8)))


def test_jump_gap_wraps():
    assert Jump(0.0, 3.0, -3.0, "switch").gap == pytest.approx(2 * math.pi - 6.0)


def test_state_round_trip(example):
    z = CotangentPoint([0.3, 0.7, 0.1, 0.2], [0.5, -0.4, -1.0, -1.0])
    y = state_from_point(example, z, t=1.5)
    assert y[8] == 1.5
    assert np.allclose(point_from_state(example, y).as_array(), z.as_array(), atol=1e-12)


def test_bang_arc_conserves_hmax(example):
    z = CotangentPoint([0.3, 0.7, 0.1, 0.2], [0.5, -0.4, -1.0, -1.0])
    arc = integrate_bang(example, z, 0.5)
    H = [hmax(example, CotangentPoint.from_array(s)) for s in arc.states]
    assert max(H) - min(H) < 1e-8


def _sigma_minus_shot(example, p1, rho_end=1e-13):
    """Start on the incoming saddle at tiny rho, run backward, return the start point."""
    zb = sigma_minus_point(example, p1=p1)
    lv = lift_values(example, zb)
    a = lv.H12 / lv.r
    th = math.atan2(lv.H02, lv.H01) + math.pi - math.asin(a)
    y = np.array([*zb.x, math.log(rho_end), th, lv.H01, lv.H02, 0.0])
    back = integrate_near_sigma(example, y, IntegratorOptions(direction=-1, horizon=0.2))
    return back.arcs[-1].states[-1], a


@pytest.mark.parametrize("p1", [0.0, 0.4, -0.7])
def test_sigma_minus_single_switch_with_predicted_jump(example, p1):
    y0, a = _sigma_minus_shot(example, p1)
    ex = integrate_near_sigma(example, y0, IntegratorOptions(horizon=0.4))
    sw = ex.find(SWITCH_PI)
    assert len(sw) == 1
    predicted = wrap(2 * math.asin(a) - math.pi)
    assert abs(wrap(sw[0]["jump"] - predicted)) < 2e-3
    assert abs(sw[0]["t"]) < 1e-6


def test_sigma_plus_transit_has_no_switch(example):
    z = near_sigma_plus(example, 0.03, 0.4)
    ex = integrate_near_sigma(example, z, IntegratorOptions(horizon=0.5))
    assert not ex.find(SWITCH_PI)
    assert ex.find("NoSwitch")[0]["min_rho"] > 1e-3


def test_outside_neighborhood_is_rejected(example):
    z = CotangentPoint([0.3, 0.7, 0.1, 0.2], [5.0, -4.0, -1.0, -1.0])
    with pytest.raises(NotInNeighborhood):
        integrate_near_sigma(example, z, IntegratorOptions())


@pytest.mark.parametrize("o", [1, -1])
def test_contact_reached_with_continuous_control(example, o):
    app = stable_manifold_point(example, sigma0_point(o), R_seed=1e-5, R_stop=0.01)
    ex = integrate_near_sigma(example, app.state, IntegratorOptions(direction=app.direction_in,
                                                                     R_contact=5e-5))
    (ct,) = ex.find(CONTACT)
    assert ct["tail"] < 1e-8
    assert ct["gap"] < 1e-4
    ctimes = contact_time(ex)
    assert ctimes.t_sigma0 == pytest.approx(ct["t"])
    # the forward contact time matches the backward construction
    assert abs(ct["t"] - app.state[8]) == pytest.approx(app.t_contact, rel=1e-3)


def test_model_contact_time_scales_with_R0_squared():
    c = 5.0 / 9.0                           # sbar0 = 1
    sb, zb = m0_closed_form(c)
    times = []
    for R0 in (1e-2, 5e-3):
        ex = integrate_model_contact(c, ChartIState(R0, sb, zb), R_end=1e-6)
        times.append(ex.events[0][0])
    assert times[0] == pytest.approx(1.5e-4, rel=1e-3)
    assert math.log(times[0] / times[1]) / math.log(2) == pytest.approx(2.0, abs=1e-3)


def test_diagnostics_cache_is_consistent(example):
    f = NearSigmaField(example)
    y = state_from_point(example, CotangentPoint([0.3, 0.7, 0.1, 0.2], [0.5, -0.4, -1.0, -1.0]))
    a, b = f(y), f(y.copy())
    assert a.Rq == b.Rq and np.array_equal(a.field_t2, b.field_t2)
