import math

import numpy as np
import pytest

from conftest import sigma0_point, sigma_minus_point
from nilswitch.blowup import DegenerateC, m0_closed_form
from nilswitch.integrate import (IntegratorOptions, NearSigmaField, integrate_near_sigma,
                                 point_from_state)
from nilswitch.manifolds import (ManifoldSeed, bisect_strata, classify_initial_condition,
                                 falsify_periodic_orbits, interior_quadrant, m0_radial_seed,
                                 portrait_sphere, sigma0_seed, sphere_divergence,
                                 stable_manifold_m0, stable_manifold_point)
from nilswitch.pmp import CotangentPoint, lift_values


def test_radial_seed_is_an_eigenvector():
    seed = m0_radial_seed(1.0, 1e-4)
    assert seed.eigenvalue == pytest.approx(-m0_closed_form(1.0)[0] / 3)
    with pytest.raises(ValueError):
        ManifoldSeed(seed.equilibrium, np.array([0.0, 1.0, 0.0]), 1e-4, 1, seed.eigenvalue)


@pytest.mark.parametrize("eps", [1e-3, 5e-4, 2.5e-4])
def test_stable_manifold_round_trip(eps):
    arc = stable_manifold_m0(1.0, eps)
    assert arc.meta["exited"] and arc.meta["time_direction"] == -1
    # integrating back down to the seed radius lands on the seed again
    assert abs(arc.meta["residual"] - eps) < 0.01 * eps


def test_stable_manifold_eps_range():
    with pytest.raises(ValueError):
        stable_manifold_m0(1.0, 1e-2)


def test_sigma0_seed_sits_on_the_model_equilibrium(example):
    y, nf = sigma0_seed(example, sigma0_point(1), 1e-4)
    sb, zb = m0_closed_form(nf.c)
    d = NearSigmaField(example)(y)
    assert d.sigma == nf.orientation
    assert d.rho == pytest.approx(1e-12)
    assert d.s / 1e-4 == pytest.approx(sb, rel=1e-6)
    assert d.zeta / 1e-8 == pytest.approx(zb, rel=1e-3)


def test_stable_manifold_point_contact_time(example):
    app = stable_manifold_point(example, sigma0_point(-1), R_seed=1e-5, R_stop=0.01)
    assert app.tail < 1e-9
    assert app.t_contact > app.tail


def _switching_start(example):
    zb = sigma_minus_point(example, p1=0.4)
    lv = lift_values(example, zb)
    th = math.atan2(lv.H02, lv.H01) + math.pi - math.asin(lv.H12 / lv.r)
    y = np.array([*zb.x, math.log(1e-13), th, lv.H01, lv.H02, 0.0])
    back = integrate_near_sigma(example, y, IntegratorOptions(direction=-1, horizon=0.2))
    return point_from_state(example, back.arcs[-1].states[-1])


def test_strata_labels_and_bisection(example):
    o = IntegratorOptions(horizon=0.4)
    z_s = _switching_start(example)
    z_off = CotangentPoint(z_s.x, z_s.p + np.array([0.0, 0.05, 0.0, 0.0]))
    assert classify_initial_condition(example, z_s, o).label == "Ss"
    assert classify_initial_condition(example, z_off, o).label == "S0"
    lo, hi, la, lb = bisect_strata(example, z_s, z_off, o, tol=1e-4)
    assert (la, lb) == ("Ss", "S0") and hi - lo <= 1e-4


@pytest.fixture(scope="module")
def portrait():
    return portrait_sphere(1.0, n=30, n_boundary=32)  # no ring sample on an equilibrium


def test_portrait_forward_limits(portrait):
    fwd = portrait.counts("limit_forward", chart="i")
    assert set(fwd) <= {"pi/2", "-pi/2", "-omega0"}
    assert "escape" not in portrait.counts("limit_backward")


def test_portrait_quadrant_backward_limit_is_m0(portrait):
    rows = interior_quadrant(portrait.rows)
    assert rows and {r["limit_backward"] for r in rows} == {"m0"}


def test_portrait_boundary_ring(portrait):
    ring = [r for r in portrait.rows if r["chart"] == "ii"]
    assert {r["limit_forward"] for r in ring} <= {"pi/2", "-omega0", "-pi/2"}


def test_divergence_is_seven_thirds_sbar(rng):
    s = rng.uniform(-3, 3, 200)
    z = rng.uniform(-3, 3, 200)
    assert np.allclose(sphere_divergence(s, z), 7.0 / 3.0 * s, atol=1e-6)


def test_no_periodic_orbit_candidates():
    rep = falsify_periodic_orbits(1.0, n_sections=24)
    assert rep.n_returns > 0
    assert rep.n_candidates == 0
    assert rep.divergence_ok


def test_degenerate_c_rejected():
    with pytest.raises(DegenerateC):
        portrait_sphere(0.0, n=3)
