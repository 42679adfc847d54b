"""Quasi-homogeneous blow-up of the nilpotent point of the normal form.

The blow-up is rho = R^3 rhobar, s = R sbar, zeta = R^2 zetabar.  Chart (i)
fixes rhobar = 1, chart (ii) puts (sbar, zetabar) = (sin w, cos w).  Fields
here are the truncated ones; chart (i) also accepts a perturbation of the
normal form and then returns the exact pushforward (1/R) phi_* X.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import brentq

from .chart import model_field_hot

OMEGA0 = math.acos(1.0 - math.sqrt(2.0))
ATLAS_BOX = 2.0
ATLAS_BAND = 0.1


class DegenerateC(ValueError):
    pass


@dataclass(frozen=True)
class ChartIState:
    R: float
    sbar: float
    zetabar: float
    xi_rest: tuple = ()

    def as_array(self):
        return np.array([self.R, self.sbar, self.zetabar, *self.xi_rest], dtype=float)


@dataclass(frozen=True)
class ChartIIState:
    R: float
    omega: float
    rhobar: float

    def as_array(self):
        return np.array([self.R, self.omega, self.rhobar], dtype=float)


@dataclass(frozen=True)
class EquilibriumReport:
    location: Union[ChartIState, ChartIIState]
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    stable_dim: int
    unstable_dim: int
    label: str = ""
    directional: dict = field(default_factory=dict)

    @property
    def hyperbolic(self):
        return self.stable_dim + self.unstable_dim == len(self.eigenvalues)


def _report(location, jac, label="", directional=None, tol=1e-12):
    ev = np.linalg.eigvals(jac)
    return EquilibriumReport(location, jac, ev, int(np.sum(ev.real < -tol)),
                             int(np.sum(ev.real > tol)), label, directional or {})


# --- chart (i) ----------------------------------------------------------------

def chart_i_field(st: ChartIState, c: float, perturbation: Optional[Callable] = None) -> np.ndarray:
    """Blown-up field in chart (i), time t3 (dt3 = R dt2).

    Carried parameters xi_rest are frozen (zero rate), as they are on R = 0.
    """
    R, sb, zb = st.R, st.sbar, st.zetabar
    if perturbation is None or R == 0.0:
        core = np.array([-R * sb / 3.0, 5.0 / 6.0 * sb * sb + zb, 2.0 / 3.0 * sb * zb + c])
    else:
        rho_d, s_d, z_d = model_field_hot((R**3, R * sb, R * R * zb), c, perturbation)
        Rd = rho_d / (3 * R * R)
        core = np.array([Rd, (s_d - Rd * sb) / R, (z_d - 2 * R * Rd * zb) / (R * R)]) / R
    return np.concatenate([core, np.zeros(len(st.xi_rest))])


def chart_i_jacobian(st: ChartIState, c: float = 0.0) -> np.ndarray:
    R, sb, zb = st.R, st.sbar, st.zetabar
    return np.array([[-sb / 3.0, -R / 3.0, 0.0],
                     [0.0, 5.0 / 3.0 * sb, 1.0],
                     [0.0, 2.0 / 3.0 * zb, 2.0 / 3.0 * sb]])


def m0_closed_form(c: float):
    """(sbar0, zetabar0) of the interior equilibrium.

    zetabar0 = -(5/6) sbar0^2 is negative for either sign of c.
    """
    if c == 0:
        raise DegenerateC("c = 0: the interior equilibrium is not isolated")
    sb = math.copysign((9.0 * abs(c) / 5.0) ** (1.0 / 3.0), c)
    return sb, -5.0 / 6.0 * sb * sb


def equilibrium_m0(c: float) -> EquilibriumReport:
    sb, zb = m0_closed_form(c)
    loc = ChartIState(0.0, sb, zb)
    return _report(loc, chart_i_jacobian(loc, c), "m0")


def m0_eigenvalues_closed_form(c: float) -> np.ndarray:
    sb, _ = m0_closed_form(c)
    w = math.sqrt(11.0) / 6.0
    return np.array([-sb / 3.0, sb * complex(7.0 / 6.0, w), sb * complex(7.0 / 6.0, -w)])


def locate_m0(c: float, guess, tol: float = 1e-14, maxiter: int = 100):
    """Newton iteration for the zero of the chart (i) field on R = 0."""
    v = np.array(guess, dtype=float)
    for _ in range(maxiter):
        st = ChartIState(0.0, v[0], v[1])
        f = chart_i_field(st, c)[1:3]
        J = chart_i_jacobian(st, c)[1:, 1:]
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            return None
        v = v - step
        if not np.all(np.isfinite(v)) or np.abs(v).max() > 1e6:
            return None
        if np.linalg.norm(step) < tol * (1 + np.linalg.norm(v)):
            return v
    return v if np.linalg.norm(chart_i_field(ChartIState(0.0, *v), c)[1:3]) < 1e-12 else None


# --- chart (ii) ---------------------------------------------------------------

def _P(w):
    return math.sin(w) * (math.cos(w) + 0.5 * math.sin(w) ** 2)


def _dP(w):
    s, co = math.sin(w), math.cos(w)
    return co * co - s * s + 1.5 * s * s * co


def _Q(w):
    return math.cos(w) * (2 * math.cos(w) + math.sin(w) ** 2)


def _dQ(w):
    s, co = math.sin(w), math.cos(w)
    return -s * (2 * co + s * s) + co * (-2 * s + 2 * s * co)


def _S(w):
    return math.sin(w) * (1 + math.cos(w) ** 2)


def _dS(w):
    s, co = math.sin(w), math.cos(w)
    return co * (1 + co * co) - 2 * s * s * co


def chart_ii_field(st: ChartIIState, c: float) -> np.ndarray:
    """Truncated chart (ii) field, multiplied by (1 + cos^2 w) (an orbital equivalence).

    R' = R N, w' = cos w (2 cos w + sin^2 w) - c rhobar sin w,
    rhobar' = -rhobar (sin w (1 + cos^2 w) + 3 N),
    with N = sin w (cos w + sin^2 w / 2) + c rhobar cos w.
    """
    R, w, rb = st.R, st.omega, st.rhobar
    N = _P(w) + c * rb * math.cos(w)
    return np.array([R * N,
                     _Q(w) - c * rb * math.sin(w),
                     -rb * (_S(w) + 3 * N)])


def chart_ii_jacobian(st: ChartIIState, c: float) -> np.ndarray:
    R, w, rb = st.R, st.omega, st.rhobar
    s, co = math.sin(w), math.cos(w)
    N = _P(w) + c * rb * co
    Nw = _dP(w) - c * rb * s
    return np.array([[N, R * Nw, R * c * co],
                     [0.0, _dQ(w) - c * rb * co, -c * s],
                     [0.0, -rb * (_dS(w) + 3 * Nw), -(_S(w) + 3 * N) - 3 * c * rb * co]])


def boundary_circle_zeros(n: int = 4000):
    """Zeros of w' on {R = rhobar = 0}, found by sign changes and Brent refinement."""
    grid = np.linspace(-math.pi, math.pi, n + 1) + 1e-3
    vals = [_Q(w) for w in grid]
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(brentq(_Q, a, b, xtol=1e-15, rtol=1e-15))
    return sorted(((w + math.pi) % (2 * math.pi)) - math.pi for w in roots)


def boundary_equilibria(c: float):
    out = []
    for label, w in (("+pi/2", math.pi / 2), ("-pi/2", -math.pi / 2),
                     ("+omega0", OMEGA0), ("-omega0", -OMEGA0)):
        st = ChartIIState(0.0, w, 0.0)
        J = chart_ii_jacobian(st, c)
        out.append(_report(st, J, label, {"R": J[0, 0], "omega": J[1, 1], "rhobar": J[2, 2]}))
    return out


# --- changes of chart -------------------------------------------------------------

def blow_down(st):
    if isinstance(st, ChartIState):
        return st.R**3, st.R * st.sbar, st.R**2 * st.zetabar
    return st.R**3 * st.rhobar, st.R * math.sin(st.omega), st.R**2 * math.cos(st.omega)


def blow_up_i(rho: float, s: float, zeta: float, xi_rest=()) -> ChartIState:
    if rho <= 0:
        raise ValueError("chart (i) needs rho > 0")
    R = rho ** (1.0 / 3.0)
    return ChartIState(R, s / R, zeta / R**2, tuple(xi_rest))


def chart_i_to_ii(st: ChartIState) -> ChartIIState:
    """Rescale so that sbar^2 + zetabar^2 = 1; R grows by k = rhobar^(-1/3)."""
    sb, zb = st.sbar, st.zetabar
    if sb == 0.0 and zb == 0.0:
        raise ValueError("the rho axis sbar = zetabar = 0 lies outside chart (ii)")
    k2 = 0.5 * (sb * sb + math.hypot(sb * sb, 2.0 * zb))
    k = math.sqrt(k2)
    return ChartIIState(st.R * k, math.atan2(sb / k, zb / k2), k ** -3)


def chart_ii_to_i(st: ChartIIState) -> ChartIState:
    if st.rhobar <= 0:
        raise ValueError("rhobar = 0 lies outside chart (i)")
    k = st.rhobar ** (1.0 / 3.0)
    return ChartIState(st.R * k, math.sin(st.omega) / k, math.cos(st.omega) / (k * k))


def in_chart_i_box(sbar: float, zetabar: float, box: float = ATLAS_BOX) -> bool:
    return abs(sbar) <= box and abs(zetabar) <= box
