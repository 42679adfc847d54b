"""Hamiltonian lifts and extremal vector fields on T*R^4.

Conventions: the lift of a field F is H_F(x, p) = <p, F(x)>, H_ij is the
lift of [F_i, F_j] (bracket from :func:`lie_bracket`), and the symplectic
gradient of a function H is X_H = (dH/dp, -dH/dx).  With these, the
derivative of H_G along X_{H_F} is H_{[F, G]}.

All state vectors of the cotangent bundle are length-8 arrays ``(x, p)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polyfield import AffineSystem, PolyVectorField

TAU_RHO = 1e-10
TAU_P = 1e-12


class OnSwitchingLocus(ValueError):
    """(H1, H2) vanishes (up to tau_rho): the bang feedback is undefined."""


class SingularControlUndefined(ValueError):
    pass


class AdjointVanishes(ValueError):
    pass


@dataclass(frozen=True)
class CotangentPoint:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(4))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(4))

    @classmethod
    def from_array(cls, z):
        z = np.asarray(z, dtype=float)
        return cls(z[:4], z[4:])

    def as_array(self):
        return np.concatenate([self.x, self.p])

    def require_nonzero_adjoint(self, tol=TAU_P):
        if np.linalg.norm(self.p) <= tol:
            raise AdjointVanishes(f"|p| = {np.linalg.norm(self.p):.3g}")
        return self


@dataclass(frozen=True)
class LiftValues:
    H0: float
    H1: float
    H2: float
    H01: float
    H02: float
    H12: float

    @property
    def rho(self):
        return float(np.hypot(self.H1, self.H2))

    @property
    def r(self):
        return float(np.hypot(self.H01, self.H02))


def _split(z):
    if isinstance(z, CotangentPoint):
        return z.x, z.p
    z = np.asarray(z, dtype=float)
    return z[:4], z[4:]


def lift(F: PolyVectorField, z) -> float:
    x, p = _split(z)
    return float(p @ F(x))


def lift_gradient(F: PolyVectorField, z):
    """Gradient of H_F as (d/dx, d/dp); both are exact polynomial expressions."""
    x, p = _split(z)
    return F.jacobian(x).T @ p, F(x)


def symplectic(grad_x, grad_p):
    return np.concatenate([grad_p, -grad_x])


def lift_field(F: PolyVectorField, z):
    return symplectic(*lift_gradient(F, z))


def std_lifts(sys: AffineSystem, z):
    """Values, x-gradients and p-gradients of the lifts of F0, F1, F2, F01, F02, F12."""
    x, p = _split(z)
    vals, jacs = sys.bundle()(x)
    return vals @ p, np.einsum("kij,i->kj", jacs, p), vals


def lift_values(sys: AffineSystem, z) -> LiftValues:
    return LiftValues(*(float(v) for v in std_lifts(sys, z)[0]))


def hmax(sys: AffineSystem, z) -> float:
    lv = lift_values(sys, z)
    return lv.H0 + lv.rho


def bang_feedback(lv: LiftValues, tol: float = TAU_RHO) -> np.ndarray:
    rho = lv.rho
    if rho <= tol:
        raise OnSwitchingLocus(f"rho = {rho:.3g}")
    return np.array([lv.H1, lv.H2]) / rho


def controlled_field(sys: AffineSystem, z, u) -> np.ndarray:
    """Hamiltonian field of H0 + u1 H1 + u2 H2 with u held fixed."""
    _, gx, gp = std_lifts(sys, z)
    w = np.array([1.0, u[0], u[1]])
    return symplectic(w @ gx[:3], w @ gp[:3])


def hmax_flow_field(sys: AffineSystem, z, tol: float = TAU_RHO) -> np.ndarray:
    """Symplectic gradient of H0 + sqrt(H1^2 + H2^2).

    The square-root term differentiates to u1 dH1 + u2 dH2, so the field is the
    controlled field at the bang feedback.
    """
    H, gx, gp = std_lifts(sys, z)
    rho = float(np.hypot(H[1], H[2]))
    if rho <= tol:
        raise OnSwitchingLocus(f"rho = {rho:.3g}")
    w = np.array([1.0, H[1] / rho, H[2] / rho])
    return symplectic(w @ gx[:3], w @ gp[:3])


def singular_feedback(lv: LiftValues, tol: float = TAU_RHO):
    """Return ``(u_s, admissible)`` with u_s = (-H02, H01) / H12."""
    if abs(lv.H12) <= tol:
        raise SingularControlUndefined(f"|H12| = {abs(lv.H12):.3g}")
    u = np.array([-lv.H02, lv.H01]) / lv.H12
    return u, bool(np.linalg.norm(u) <= 1.0)


def singular_hamiltonian(sys: AffineSystem, z) -> float:
    lv = lift_values(sys, z)
    return lv.H0 - lv.H02 / lv.H12 * lv.H1 + lv.H01 / lv.H12 * lv.H2


def singular_flow_field(sys: AffineSystem, z, tol: float = TAU_RHO) -> np.ndarray:
    """Symplectic gradient of H0 - (H02/H12) H1 + (H01/H12) H2, valid off Sigma too."""
    H, gxs, gps = std_lifts(sys, z)
    lv = LiftValues(*(float(v) for v in H))
    if abs(lv.H12) <= tol:
        raise SingularControlUndefined(f"|H12| = {abs(lv.H12):.3g}")
    g = {k: (gxs[i], gps[i]) for i, k in enumerate(("0", "1", "2", "01", "02", "12"))}
    k1 = -lv.H02 / lv.H12
    k2 = lv.H01 / lv.H12
    gx = g["0"][0] + k1 * g["1"][0] + k2 * g["2"][0]
    gp = g["0"][1] + k1 * g["1"][1] + k2 * g["2"][1]
    # gradient of the quotients, weighted by H1, H2 (vanishes on Sigma)
    for coef, num, sign in ((lv.H1, "02", -1.0), (lv.H2, "01", 1.0)):
        Hn = getattr(lv, "H" + num)
        dq_x = (g[num][0] * lv.H12 - Hn * g["12"][0]) / lv.H12**2
        dq_p = (g[num][1] * lv.H12 - Hn * g["12"][1]) / lv.H12**2
        gx = gx + sign * coef * dq_x
        gp = gp + sign * coef * dq_p
    return symplectic(gx, gp)


@dataclass(frozen=True)
class SingleInputSingular:
    field: np.ndarray
    control: float
    H100: float
    H101: float


def single_input_singular_field(drift: PolyVectorField, control: PolyVectorField, z,
                                tol: float = TAU_RHO) -> SingleInputSingular:
    """Singular extremal field for x' = F0 + u F1 with |u| <= 1.

    The Hamiltonian is H0 - (H100 / H101) H1, where H10 lifts [F1, F0],
    H100 lifts [[F1, F0], F0] and H101 lifts [[F1, F0], F1]; the control
    solving H100 + u H101 = 0 is returned alongside the field.
    """
    from .polyfield import lie_bracket

    F10 = lie_bracket(control, drift)
    F100 = lie_bracket(F10, drift)
    F101 = lie_bracket(F10, control)
    H1 = lift(control, z)
    H100 = lift(F100, z)
    H101 = lift(F101, z)
    if abs(H101) <= tol:
        raise SingularControlUndefined(f"|H101| = {abs(H101):.3g}")
    k = -H100 / H101
    gx0, gp0 = lift_gradient(drift, z)
    gx1, gp1 = lift_gradient(control, z)
    ga_x, ga_p = lift_gradient(F100, z)
    gb_x, gb_p = lift_gradient(F101, z)
    dk_x = -(ga_x * H101 - H100 * gb_x) / H101**2
    dk_p = -(ga_p * H101 - H100 * gb_p) / H101**2
    fld = symplectic(gx0 + k * gx1 + H1 * dk_x, gp0 + k * gp1 + H1 * dk_p)
    return SingleInputSingular(fld, k, H100, H101)
