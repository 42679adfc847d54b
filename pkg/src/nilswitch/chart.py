"""Adapted coordinates near the switching locus.

Under the rank assumption the map (x, p) -> (x, H1, H2, H01, H02) is a local
diffeomorphism, so a point of T*R^4 is recovered from x and the four lift
values by a 4x4 linear solve.  Writing (H1, H2) = rho (cos theta, sin theta)
and (H01, H02) = r (cos phi, sin phi) gives the polar chart; psi = theta - phi
and s = psi - pi/2.

The *extended* state used for integration is the 9-vector

    y = (x1, x2, x3, x4, rho, theta, H01, H02, t)

which keeps theta meaningful when rho = 0.  Its field in the time t2
(dt = rho/r dt2) is regular on all of rho >= 0.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .pmp import (TAU_P, TAU_RHO, AdjointVanishes, CotangentPoint, LiftValues,
                  lift_values, std_lifts)
from .polyfield import AffineSystem, TAU_A, check_assumption_A, frame_matrix

TAU_SIGMA = 1e-8
TAU_GEN = 1e-9
FD_STEP = 1e-5


class AssumptionAViolated(ValueError):
    pass


class GenericityViolated(ValueError):
    pass


class SigmaClass(enum.Enum):
    SigmaMinus = "SigmaMinus"
    SigmaPlus = "SigmaPlus"
    SigmaZero = "SigmaZero"
    NotOnSigma = "NotOnSigma"


def wrap(angle):
    """Wrap to (-pi, pi]."""
    a = np.mod(np.asarray(angle, dtype=float) + np.pi, 2 * np.pi) - np.pi
    a = np.where(a == -np.pi, np.pi, a)
    return float(a) if np.ndim(a) == 0 else a


@dataclass(frozen=True)
class SingularChartState:
    x: np.ndarray
    rho: float
    theta: float
    r: float
    phi: float

    @property
    def psi(self):
        return wrap(self.theta - self.phi)

    @property
    def s(self):
        return wrap(self.theta - self.phi - np.pi / 2)

    @property
    def lifts(self):
        """(H1, H2, H01, H02) reproduced from the polar values."""
        return np.array([self.rho * math.cos(self.theta), self.rho * math.sin(self.theta),
                         self.r * math.cos(self.phi), self.r * math.sin(self.phi)])


def to_chart(sys: AffineSystem, z: CotangentPoint, tol_A: float = TAU_A) -> SingularChartState:
    if not check_assumption_A(sys, z.x, tol_A).holds:
        raise AssumptionAViolated(f"the rank assumption fails at x = {z.x}")
    if np.linalg.norm(z.p) <= TAU_P:
        raise AdjointVanishes("p = 0")
    lv = lift_values(sys, z)
    return SingularChartState(z.x.copy(), lv.rho, wrap(math.atan2(lv.H2, lv.H1)),
                              lv.r, wrap(math.atan2(lv.H02, lv.H01)))


def adjoint_from_lifts(sys: AffineSystem, x, lifts) -> np.ndarray:
    return np.linalg.solve(frame_matrix(sys, x), np.asarray(lifts, dtype=float))


def from_chart(sys: AffineSystem, st: SingularChartState) -> CotangentPoint:
    return CotangentPoint(st.x, adjoint_from_lifts(sys, st.x, st.lifts))


def classify(lv: LiftValues, tol_sigma: float = TAU_SIGMA, tol_rho: float = TAU_RHO) -> SigmaClass:
    if lv.rho > tol_rho:
        return SigmaClass.NotOnSigma
    r2 = lv.H01**2 + lv.H02**2
    gap = lv.H12**2 - r2
    if abs(gap) <= tol_sigma * r2:
        return SigmaClass.SigmaZero
    return SigmaClass.SigmaPlus if gap > 0 else SigmaClass.SigmaMinus


# --- extended polar coordinates ------------------------------------------

def extended_from_point(sys: AffineSystem, z: CotangentPoint, t: float = 0.0) -> np.ndarray:
    lv = lift_values(sys, z)
    return np.array([*z.x, lv.rho, math.atan2(lv.H2, lv.H1), lv.H01, lv.H02, t])


def point_from_extended(sys: AffineSystem, y) -> CotangentPoint:
    x = np.asarray(y[:4], dtype=float)
    rho, theta = y[4], y[5]
    lifts = (rho * math.cos(theta), rho * math.sin(theta), y[6], y[7])
    return CotangentPoint(x, adjoint_from_lifts(sys, x, lifts))


def _physical_rates(sys, y):
    """Physical-time rates: (zdot, H1dot, H2dot, H01dot, H02dot) at control e_theta."""
    z = point_from_extended(sys, y)
    _, gx, gp = std_lifts(sys, z)
    w = np.array([1.0, math.cos(y[5]), math.sin(y[5])])
    zdot = np.concatenate([w @ gp[:3], -(w @ gx[:3])])
    rates = gx[1:5] @ zdot[:4] + gp[1:5] @ zdot[4:]
    return z, zdot, rates


def extended_field_t2(sys: AffineSystem, y) -> np.ndarray:
    """d y / d t2 with dt = (rho / r) dt2; the last entry is dt/dt2."""
    z, zdot, (d1, d2, d01, d02) = _physical_rates(sys, y)
    rho, theta = y[4], y[5]
    r = math.hypot(y[6], y[7])
    c, s = math.cos(theta), math.sin(theta)
    k = rho / r
    out = np.empty(9)
    out[:4] = k * zdot[:4]
    out[4] = k * (c * d1 + s * d2)
    out[5] = (-s * d1 + c * d2) / r
    out[6] = k * d01
    out[7] = k * d02
    out[8] = k
    return out


@dataclass(frozen=True)
class RescaledTangent:
    """Rates in the time t1 (dt1 = r dt) of (rho, s, x, r, phi)."""

    rho: float
    s: float
    x: np.ndarray
    r: float
    phi: float


def rescaled_field(sys: AffineSystem, st: SingularChartState) -> RescaledTangent:
    y = np.array([*st.x, st.rho, st.theta, st.r * math.cos(st.phi), st.r * math.sin(st.phi), 0.0])
    z, zdot, (d1, d2, d01, d02) = _physical_rates(sys, y)
    r = st.r
    c, s = math.cos(st.theta), math.sin(st.theta)
    H01, H02 = y[6], y[7]
    rho_dot = (c * d1 + s * d2) / r
    theta_dot = (-s * d1 + c * d2) / (st.rho * r)
    phi_dot = (H01 * d02 - H02 * d01) / r**3
    r_dot = (H01 * d01 + H02 * d02) / r**2
    return RescaledTangent(rho_dot, theta_dot - phi_dot, zdot[:4] / r, r_dot, phi_dot)


# --- normal form ------------------------------------------------------------

def section_a(sys: AffineSystem, x, H01, H02) -> float:
    """a(xi) = H12 / r evaluated on the section H1 = H2 = 0."""
    x = np.asarray(x, dtype=float)
    p = adjoint_from_lifts(sys, x, (0.0, 0.0, H01, H02))
    vals, _ = sys.bundle()(x)
    return float(p @ vals[5]) / math.hypot(H01, H02)


def transverse_rate(sys: AffineSystem, z: CotangentPoint, sigma: float) -> np.ndarray:
    """h~ at rho = 0: t1-rates of xi = (x, H01, H02) with the contact control.

    The contact control is sigma * (-sin phi, cos phi), the limit of the bang
    control at the nilpotent point psi = sigma pi / 2.
    """
    H, gx, gp = std_lifts(sys, z)
    r = math.hypot(H[3], H[4])
    w = np.array([1.0, -sigma * H[4] / r, sigma * H[3] / r])
    zdot = np.concatenate([w @ gp[:3], -(w @ gx[:3])])
    rates = gx[3:5] @ zdot[:4] + gp[3:5] @ zdot[4:]
    return np.concatenate([zdot[:4], rates]) / r


def xi_of(z: CotangentPoint, lv: LiftValues) -> np.ndarray:
    return np.array([*z.x, lv.H01, lv.H02])


def a_of_xi(sys, xi) -> float:
    return section_a(sys, xi[:4], xi[4], xi[5])


def directional_derivative(f: Callable, xi, v, h: float = FD_STEP) -> float:
    """Central difference with one Richardson refinement."""
    def d(hh):
        return (f(xi + hh * v) - f(xi - hh * v)) / (2 * hh)
    return (4 * d(h / 2) - d(h)) / 3


@dataclass(frozen=True)
class NormalFormParams:
    a: float
    alpha: float
    c: float
    orientation: int  # sign of H12; sigma = -1 is the time-reversed normal form

    @property
    def entering(self) -> bool:
        """True when the blown-up equilibrium has a stable radial direction in forward time."""
        return self.orientation * self.c > 0


def normal_form_params(sys: AffineSystem, zbar: CotangentPoint, tol_rho: float = 1e-8,
                       tol_gen: float = TAU_GEN, require_generic: bool = False,
                       h: float = FD_STEP) -> NormalFormParams:
    lv = lift_values(sys, zbar)
    if lv.rho > tol_rho:
        raise ValueError(f"point is not on Sigma (rho = {lv.rho:.3g})")
    a = lv.H12 / lv.r
    sigma = 1 if a >= 0 else -1
    v = transverse_rate(sys, zbar, sigma)
    xi = xi_of(zbar, lv)
    c = directional_derivative(lambda q: a_of_xi(sys, q), xi, v, h)
    if require_generic and abs(c) <= tol_gen:
        raise GenericityViolated(f"|c| = {abs(c):.3g}")
    return NormalFormParams(a, abs(a) - 1.0, c, sigma)


def genericity_diagnostic(sys: AffineSystem, zbar: CotangentPoint, h: float = FD_STEP) -> float:
    """Derivative of f = H12 / r along F0 - sin(phi) F1 + cos(phi) F2 and the lifted rates.

    Equals the constant c for a contact with H12 > 0; kept as a cross-check.
    """
    lv = lift_values(sys, zbar)
    v = transverse_rate(sys, zbar, 1.0)
    return directional_derivative(lambda q: a_of_xi(sys, q), xi_of(zbar, lv), v, h)


def normal_coordinates(sys: AffineSystem, y, sigma: int):
    """(rho, s, zeta) of an extended state relative to the orientation sigma.

    s = psi - sigma pi/2 (wrapped) and zeta = sigma a(xi) - 1; in the time
    sigma * t2 the truncated dynamics is the model of :func:`model_field_hot`.
    """
    rho, theta, H01, H02 = y[4], y[5], y[6], y[7]
    phi = math.atan2(H02, H01)
    s = wrap(theta - phi - sigma * np.pi / 2)
    zeta = sigma * section_a(sys, y[:4], H01, H02) - 1.0
    return rho, s, zeta


def model_field_hot(state, c: float, perturbation: Optional[Callable] = None) -> np.ndarray:
    """Truncated normal form rho' = -rho s, s' = zeta + s^2/2, zeta' = c rho."""
    rho, s, zeta = state
    out = np.array([-rho * s, zeta + 0.5 * s * s, c * rho])
    if perturbation is not None:
        out = out + np.asarray(perturbation(rho, s, zeta), dtype=float)
    return out


def generic_perturbation(k1=0.3, k2=0.2, k3=-0.1, k4=0.25, k5=0.15):
    """A smooth perturbation of the normal form with the admissible orders.

    rho' gets O(rho s^3), s' gets O(rho) + O(s^4), zeta' gets rho O(rho + |s|).
    """
    def pert(rho, s, zeta):
        return (k1 * rho * s**3, k2 * rho + k3 * s**4, rho * (k4 * rho + k5 * s))
    return pert
