"""A concrete four-dimensional system with a contact on Sigma_0.

F0 = x1 d3 + x2 d4, F1 = x2 d1 + d3, F2 = d2.  The coordinates x3, x4 are
cyclic, so p3 = -a and p4 = -c are constant and p1(t) = a t + b exactly.

Two constructions are provided.  The *closed-form route* follows the
textbook reduction: p2(t) = c t + d, the planar system in (x2, t), and the
contact condition.  It treats p2 as linear in t, but
dp2/dt = -dH/dx2 = c - p1 u1, so the reconstructed curve is not an
extremal and H^max drifts along it.  The *exact route* builds the true
extremal through the same Sigma_0 point from the blown-up stable manifold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .chart import SigmaClass, classify
from .integrate import (CONTACT, IntegratorOptions, NearSigmaField, integrate_near_sigma,
                        point_from_state, section_point)
from .manifolds import stable_manifold_point
from .pmp import CotangentPoint, hmax, lift_values
from .polyfield import AffineSystem, MultiPoly, field_from_dict


class NoRootInBracket(ValueError):
    pass


class ShootingFailed(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def example_system() -> AffineSystem:
    x1, x2 = MultiPoly.var(0), MultiPoly.var(1)
    F0 = field_from_dict({2: x1, 3: x2})
    F1 = field_from_dict({0: x2, 2: 1})
    F2 = field_from_dict({1: 1})
    return AffineSystem(F0, (F1, F2), name="example")


def hmax_closed_form(x, p) -> float:
    return p[2] * x[0] + p[3] * x[1] + math.hypot(p[0] * x[1] + p[2], p[1])


def contact_residual(a, b, c, d) -> float:
    D = a * d - b * c
    return D * D * (D * D - c * c) - a**4 * c**4


@dataclass(frozen=True)
class ExampleParams:
    a: float
    b: float
    c: float
    d: float

    @property
    def residual(self):
        return contact_residual(self.a, self.b, self.c, self.d)

    @property
    def t_bar(self):
        return -self.d / self.c

    @property
    def x_bar(self):
        return -self.a * self.c / (self.a * self.d - self.b * self.c)

    def p_closed_form(self, t):
        return np.array([self.a * t + self.b, self.c * t + self.d, -self.a, -self.c])

    def contact_point(self, x1=0.0, x3=0.0, x4=0.0) -> CotangentPoint:
        return CotangentPoint([x1, self.x_bar, x3, x4], self.p_closed_form(self.t_bar))


def solve_contact_condition(a=None, b=None, c=None, d=None, bracket=None, sign=1.0) -> ExampleParams:
    """Solve the contact condition for the one parameter left as None.

    Safeguarded Brent iteration; when no bracket is given one is grown
    geometrically on the side selected by ``sign``.
    """
    vals = {"a": a, "b": b, "c": c, "d": d}
    free = [k for k, v in vals.items() if v is None]
    if len(free) != 1:
        raise ValueError("give exactly three of a, b, c, d")
    name = free[0]

    def f(v):
        return contact_residual(**{**vals, name: v})

    if bracket is None:
        lo, hi = 0.0, 0.5 * sign
        while f(lo) * f(hi) > 0:
            lo, hi = hi, 2 * hi
            if abs(hi) > 1e8:
                raise NoRootInBracket(f"no sign change for {name} on the {'+' if sign > 0 else '-'} side")
        bracket = (min(lo, hi), max(lo, hi))
    lo, hi = bracket
    if f(lo) * f(hi) > 0:
        raise NoRootInBracket(f"residual has the same sign at both ends of {bracket}")
    root = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return ExampleParams(**{**vals, name: root})


# --- the reduced planar system -----------------------------------------------------------

def reduced_planar_field(params: ExampleParams, state) -> np.ndarray:
    """(x2', t') in the regularized time s with dt = rho ds and p2 = c t + d."""
    x2, t = state
    a, b, c, d = params.a, params.b, params.c, params.d
    return np.array([c * t + d, math.hypot((a * t + b) * x2 - a, c * t + d)])


@dataclass(frozen=True)
class RayDirection:
    angle: float
    vector: np.ndarray
    rate: float  # lambda with F_lin(v) = lambda v

    @property
    def stable(self):
        return self.rate < 0


def planar_linearization(params: ExampleParams):
    """Leading homogeneous part of the planar field at (x_bar, t_bar).

    With X = x2 - x_bar, T = t - t_bar it is (c T, |(beta X + alpha T, c T)|),
    beta = a t_bar + b, alpha = a x_bar.  It is Lipschitz but not
    differentiable, so there is no Jacobian; invariant rays replace eigenvectors.
    """
    beta = params.a * params.t_bar + params.b
    alpha = params.a * params.x_bar
    c = params.c

    def F(v):
        X, T = v
        return np.array([c * T, math.hypot(beta * X + alpha * T, c * T)])
    return F


def planar_rays(params: ExampleParams, n: int = 3600):
    """Invariant rays of the homogeneous part: directions v with F(v) parallel to v."""
    F = planar_linearization(params)

    def cross(th):
        v = np.array([math.cos(th), math.sin(th)])
        w = F(v)
        return v[0] * w[1] - v[1] * w[0]

    grid = np.linspace(-math.pi, math.pi, n + 1) + 1e-4
    vals = [cross(t) for t in grid]
    out = []
    for t0, t1, g0, g1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if g0 * g1 < 0:
            th = brentq(cross, t0, t1, xtol=1e-15)
            v = np.array([math.cos(th), math.sin(th)])
            out.append(RayDirection(th, v, float(v @ F(v))))
    return out


@dataclass
class PlanarShot:
    x2_0: float
    residual: float
    s: np.ndarray
    states: np.ndarray   # columns x2, t, x1, x3, x4


def _planar_aug(params):
    a, b, c, d = params.a, params.b, params.c, params.d

    def f(s, y):
        x2, t, x1 = y[0], y[1], y[2]
        H1 = (a * t + b) * x2 - a
        H2 = c * t + d
        rho = math.hypot(H1, H2)
        return np.array([H2, rho, H1 * x2, x1 * rho + H1, x2 * rho])
    return f


def _shoot(params, x2_0, s_max, rtol=1e-12, atol=1e-13):
    """Integrate the planar system from (x2_0, t = 0) towards t = t_bar."""
    sgn = 1.0 if params.t_bar > 0 else -1.0
    f = _planar_aug(params)
    ev = lambda s, y: y[1] - params.t_bar
    ev.terminal = True
    sol = solve_ivp(lambda s, y: sgn * f(s, y), (0.0, s_max), [x2_0, 0.0, 0.0, 0.0, 0.0],
                    method="DOP853", events=ev, rtol=rtol, atol=atol, dense_output=True)
    hit = len(sol.t_events[0]) > 0
    return sol, hit


def shoot_planar(params: ExampleParams, bracket=None, tol: float = 1e-13, s_max: float = 200.0) -> PlanarShot:
    """Bisection on x2(0) so that the planar orbit arrives at (x_bar, t_bar).

    Orbits off the invariant ray reach t = t_bar at a finite regularized
    time with x2 on one side of x_bar; the sign of x2 - x_bar there is the
    shooting function.  The final residual is measured on the closest
    approach of the converged orbit.
    """
    xb = params.x_bar

    def side(x0):
        sol, hit = _shoot(params, x0, s_max)
        if hit:
            return math.copysign(1.0, sol.y_events[0][0][0] - xb)
        return 0.0

    if bracket is None:
        grid = np.linspace(-5, 5, 101)
        sides = [side(g) for g in grid]
        bracket = None
        for g0, g1, s0, s1 in zip(grid[:-1], grid[1:], sides[:-1], sides[1:]):
            if s0 * s1 < 0:
                bracket = (g0, g1)
                break
        if bracket is None:
            raise ShootingFailed("no sign change of the shooting function on [-5, 5]")
    lo, hi = bracket
    slo = side(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        sm = side(mid)
        if sm == 0.0:
            lo = hi = mid
            break
        if sm == slo:
            lo = mid
        else:
            hi = mid
    x0 = 0.5 * (lo + hi)
    sol, _ = _shoot(params, x0, s_max)
    s = np.linspace(0.0, sol.t[-1], 4001)
    Y = sol.sol(s)
    dist = np.hypot(Y[0] - xb, Y[1] - params.t_bar)
    k = int(np.argmin(dist))
    return PlanarShot(x0, float(abs(Y[0, k] - xb)), s[: k + 1], Y[:, : k + 1].T)


# --- end-to-end -------------------------------------------------------------------------

@dataclass
class ExampleReport:
    params: ExampleParams
    contact_residual: float
    closed_form: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)


def _closed_form_route(sys, params, shot: PlanarShot, band):
    Y = shot.states
    x2, t, x1, x3, x4 = Y[:, 0], Y[:, 1], Y[:, 2], Y[:, 3], Y[:, 4]
    H = []
    for k in range(len(t)):
        x = np.array([x1[k], x2[k], x3[k], x4[k]])
        H.append(hmax_closed_form(x, params.p_closed_form(t[k])))
    H = np.array(H)
    end = CotangentPoint([x1[-1], x2[-1], x3[-1], x4[-1]], params.p_closed_form(params.t_bar))
    lv = lift_values(sys, end)
    return {"x2_0": shot.x2_0, "x2_residual": shot.residual,
            "endpoint_class": classify(lv, tol_sigma=band, tol_rho=1e-6).value,
            "hmax_drift": float(H.max() - H.min()), "H12_over_r": lv.H12 / lv.r,
            "times": t, "states": Y}


def _exact_route(sys, params, band, R_seed, R_contact, opts):
    """The true extremal through the contact point, integrated backward from it.

    Points reaching Sigma_0 form a codimension-2 set and the contact is a
    saddle of the blown-up flow, so forward shooting from t = 0 is
    ill-conditioned: a replay from the reconstructed initial point misses by
    the seed error amplified along the unstable direction.  The replay's
    closest approach is reported as a diagnostic.
    """
    zbar = params.contact_point()
    base = opts or IntegratorOptions()
    app = stable_manifold_point(sys, zbar, R_seed=R_seed, R_stop=0.04, opts=base)
    din = app.direction_in
    remaining = abs(params.t_bar) - app.t_contact
    far = IntegratorOptions(**{**base.to_dict(), "direction": -din, "R_stop": None,
                               "rho_exit": 1e6, "horizon": remaining})
    out = integrate_near_sigma(sys, app.state, far)
    y_init = out.arcs[-1].states[-1]
    z_init = point_from_state(sys, y_init)
    seed = app.backward.arcs[0].states[0]
    zc = section_point(sys, seed)
    lv = lift_values(sys, zc)
    states = [y for ex in (app.backward, out) for arc in ex.arcs for y in arc.states]
    H = np.array([hmax(sys, point_from_state(sys, y)) for y in states])
    diag = NearSigmaField(sys)
    # contact time measured from t = 0: the backward runs plus the analytic tail
    t_contact = din * (abs(y_init[8] - seed[8]) + app.tail)
    replay = IntegratorOptions(**{**base.to_dict(), "direction": din, "R_stop": None,
                                  "rho_exit": 1e6, "horizon": 2 * abs(params.t_bar),
                                  "R_contact": R_contact, "max_releases": 1})
    rep = integrate_near_sigma(sys, y_init, replay)
    closest = min(diag(y).Rq for arc in rep.arcs for y in arc.states)
    return {"z0": z_init.as_array().tolist(),
            "p0_closed_form": params.p_closed_form(0.0).tolist(),
            "p2_0_defect": float(z_init.p[1] - params.d),
            "contact_time": t_contact, "t_bar": params.t_bar,
            "contact_time_error": float(t_contact - params.t_bar),
            "tail": app.tail, "seed_R": diag(seed).Rq,
            "x2_residual": float(abs(seed[1] - params.x_bar)),
            "endpoint_class": classify(lv, tol_sigma=band, tol_rho=1e-6).value,
            "H12_over_r": lv.H12 / lv.r, "c": app.params.c, "direction_in": din,
            "hmax_drift": float(H.max() - H.min()),
            "min_rho": float(min(diag(y).rho for y in states)),
            "replay_closest_R": float(closest), "replay_reached_contact": bool(rep.find(CONTACT)),
            "extremal": (app.backward, out)}


def run_example(params: Optional[ExampleParams] = None, band: float = 1e-6, R_seed: float = 1e-5,
                R_contact: float = 1e-4, opts: Optional[IntegratorOptions] = None) -> ExampleReport:
    params = params or solve_contact_condition(a=1.0, b=0.0, c=1.0)
    res = params.residual
    if abs(res) > 1e-10:
        raise ValueError(f"contact-condition residual {res:.3g} exceeds 1e-10")
    if params.c <= 0:
        raise ValueError("c > 0 is required")
    sys = example_system()
    shot = shoot_planar(params)
    rep = ExampleReport(params, res)
    rep.closed_form = _closed_form_route(sys, params, shot, band)
    rep.exact = _exact_route(sys, params, band, R_seed, R_contact, opts)
    return rep
