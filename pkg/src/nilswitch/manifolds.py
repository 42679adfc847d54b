"""Invariant manifolds of the blown-up equilibrium, strata and sphere portraits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .blowup import (OMEGA0, ChartIState, DegenerateC, EquilibriumReport, _Q, chart_i_field,
                     equilibrium_m0, m0_closed_form)
from .chart import a_of_xi, normal_form_params, wrap
from .integrate import (BLOWN_UP, CONTACT, SWITCH_PI, Arc, Event, Extremal, IntegratorOptions,
                        NearSigmaField, integrate_near_sigma, march, point_from_state)
from .pmp import CotangentPoint, lift_values
from .polyfield import AffineSystem

LIMIT_RADIUS = 1e-4
DWELL = 5.0
STABLE_SET_DELTA = 1e-7


class Inconclusive(RuntimeError):
    def __init__(self, message, min_distance=None):
        super().__init__(message)
        self.min_distance = min_distance


# --- W^s(m0) in chart (i) ---------------------------------------------------------

@dataclass(frozen=True)
class ManifoldSeed:
    equilibrium: EquilibriumReport
    direction: np.ndarray
    offset: float
    side: int
    eigenvalue: float = 0.0

    def __post_init__(self):
        J = self.equilibrium.jacobian
        v = np.asarray(self.direction, dtype=float)
        if np.linalg.norm(J @ v - self.eigenvalue * v) > 1e-10:
            raise ValueError("seed direction is not an eigenvector of the stored Jacobian")

    @property
    def point(self):
        loc = self.equilibrium.location
        return np.array([loc.R, loc.sbar, loc.zetabar]) + self.side * self.offset * self.direction


def m0_radial_seed(c: float, eps: float, side: int = 1) -> ManifoldSeed:
    """Seed along the real eigenvector -sbar0/3 (transverse to the sphere)."""
    rep = equilibrium_m0(c)
    lam = -m0_closed_form(c)[0] / 3.0
    w, V = np.linalg.eig(rep.jacobian)
    k = int(np.argmin(np.abs(w - lam)))
    v = np.real(V[:, k])
    v = v / np.linalg.norm(v)
    if v[0] < 0:
        v = -v
    return ManifoldSeed(rep, v, eps, side, float(np.real(w[k])))


def _chart_i_rhs(c, perturbation):
    def f(t, y):
        return chart_i_field(ChartIState(*y), c, perturbation)
    return f


def stable_manifold_m0(c: float, eps: float, horizon: float = 400.0, perturbation=None,
                       R_exit: float = 0.5, opts: Optional[IntegratorOptions] = None) -> Arc:
    """Radial invariant manifold of m0 traced away from the sphere.

    For c > 0 this is W^s(m0) and is traced in backward t3-time; for c < 0
    the same branch is unstable and is traced forward.  The returned arc's
    meta holds the shooting residual: the distance to m0 when the reversed
    integration returns to R = R_seed.
    """
    if c == 0:
        raise DegenerateC("c = 0")
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-8, 1e-3]")
    opts = opts or IntegratorOptions()
    seed = m0_radial_seed(c, eps)
    y0 = seed.point
    sgn = -1.0 if c > 0 else 1.0
    f = _chart_i_rhs(c, perturbation)
    fun = lambda t, y: sgn * f(t, y)
    ts, ys, _, hit = march(fun, y0, [Event("exit", lambda t, y: y[0] - R_exit, 1)], opts, t_end=horizon)
    m0 = np.array([0.0, *m0_closed_form(c)])
    R_seed = y0[0]
    ts2, ys2, _, hit2 = march(lambda t, y: -fun(t, y), ys[-1],
                              [Event("back", lambda t, y: y[0] - R_seed, -1)], opts, t_end=ts[-1] * 1.5)
    residual = float(np.linalg.norm(ys2[-1] - m0))
    meta = {"chart": "i", "c": c, "eps": eps, "time_direction": int(sgn), "exited": hit is not None,
            "residual": residual, "returned": hit2 is not None, "seed": seed}
    return Arc(BLOWN_UP, "t3", ts, ys, None, meta)


# --- Sigma_0 contacts of a concrete system -----------------------------------------

def _grad(f, xi, h=1e-6):
    return np.array([(f(xi + h * e) - f(xi - h * e)) / (2 * h) for e in np.eye(len(xi))])


def sigma0_seed(sys: AffineSystem, zbar: CotangentPoint, R: float):
    """Near-Sigma state approximating W^s of m0 at blow-up radius R over zbar.

    The normal coordinates are placed at (rho, s, zeta) = (R^3, R sbar0, R^2 zetabar0)
    and the carried variables xi are moved along grad a so that zeta is exact.
    """
    lv = lift_values(sys, zbar)
    nf = normal_form_params(sys, zbar)
    sig = nf.orientation
    sb, zb = m0_closed_form(nf.c)
    xi = np.array([*zbar.x, lv.H01, lv.H02])
    f = lambda q: sig * a_of_xi(sys, q) - 1.0
    for _ in range(4):
        g = _grad(f, xi)
        xi = xi - (f(xi) - R * R * zb) * g / (g @ g)
    phi = math.atan2(xi[5], xi[4])
    y = np.array([*xi[:4], 3 * math.log(R), phi + sig * math.pi / 2 + R * sb, xi[4], xi[5], 0.0])
    return y, nf


@dataclass
class Sigma0Approach:
    z0: CotangentPoint
    state: np.ndarray         # the same point as a near-Sigma state
    backward: Extremal
    t_contact: float          # physical time from z0 to the contact
    tail: float               # analytic time from the seed to the contact
    direction_in: int         # physical direction in which z0 flows into the contact
    params: object


def stable_manifold_point(sys: AffineSystem, zbar: CotangentPoint, R_seed: float = 1e-4,
                          R_stop: float = 0.04, opts: Optional[IntegratorOptions] = None) -> Sigma0Approach:
    """A point whose extremal reaches zbar in Sigma_0, built by reversed integration from the seed."""
    y, nf = sigma0_seed(sys, zbar, R_seed)
    if nf.c == 0:
        raise DegenerateC("c = 0 at zbar")
    din = 1 if nf.orientation * nf.c > 0 else -1
    base = opts or IntegratorOptions()
    o = IntegratorOptions(**{**base.to_dict(), "direction": -din, "R_stop": R_stop,
                             "R_contact": min(base.R_contact, R_seed / 10)})
    back = integrate_near_sigma(sys, y, o)
    end = back.arcs[-1].states[-1]
    sbar0 = m0_closed_form(nf.c)[0]
    tail = 3.0 * R_seed**2 / (2.0 * abs(sbar0) * lift_values(sys, zbar).r)
    return Sigma0Approach(point_from_state(sys, end), end.copy(), back, abs(end[8]) + tail, tail, din, nf)


# --- strata ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StratumLabel:
    label: str  # "S0", "Ss" or "Ss0"
    witness: dict = field(default_factory=dict)


def classify_initial_condition(sys: AffineSystem, z0, opts: Optional[IntegratorOptions] = None) -> StratumLabel:
    opts = opts or IntegratorOptions()
    ex = integrate_near_sigma(sys, z0, opts)
    contacts = ex.find(CONTACT)
    if contacts:
        return StratumLabel("Ss0", contacts[0])
    switches = ex.find(SWITCH_PI)
    if switches:
        return StratumLabel("Ss", switches[0])
    last = ex.arcs[-1]
    diag = NearSigmaField(sys)
    min_rho = min(diag(y).rho_hat for a in ex.arcs for y in a.states)
    if ex.terminal_event is None and diag(last.states[-1]).rho_hat < opts.rho_switch:
        raise Inconclusive("horizon reached while still on the switching scale", min_rho)
    return StratumLabel("S0", {"min_rho_hat": min_rho, "terminal": ex.terminal_event})


def bisect_strata(sys: AffineSystem, za, zb, opts: Optional[IntegratorOptions] = None,
                  tol: float = 1e-10, label_of=None):
    """Locate a label change along z(lam) = (1 - lam) za + lam zb.

    Returns (lam_lo, lam_hi, label_lo, label_hi) with lam_hi - lam_lo <= tol.
    """
    za = za.as_array() if isinstance(za, CotangentPoint) else np.asarray(za, dtype=float)
    zb = zb.as_array() if isinstance(zb, CotangentPoint) else np.asarray(zb, dtype=float)
    label_of = label_of or (lambda z: classify_initial_condition(sys, CotangentPoint.from_array(z), opts).label)
    la, lb = label_of(za), label_of(zb)
    if la == lb:
        raise Inconclusive("both ends carry the same label")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if label_of((1 - mid) * za + mid * zb) == la:
            lo = mid
        else:
            hi = mid
    return lo, hi, la, lb


# --- the sphere R = 0 -------------------------------------------------------------------

def _rescaled_sphere_field(c):
    """Chart (i) field on R = 0 divided by (1 + s^4 + z^2)^(1/4), vectorized.

    The rescaling keeps the flow complete, so limits on the boundary circle
    are reached in infinite time like interior ones.
    """
    def f(t, y):
        s, z = y[0::2], y[1::2]
        nu = (1.0 + s**4 + z * z) ** 0.25
        out = np.empty_like(y)
        out[0::2] = (5.0 / 6.0 * s * s + z) / nu
        out[1::2] = (2.0 / 3.0 * s * z + c) / nu
        return out
    return f


def to_chart_ii(s, z):
    """Vectorized chart (i) -> (omega, rhobar) on R = 0."""
    s, z = np.asarray(s, dtype=float), np.asarray(z, dtype=float)
    s4 = s**4
    q = 2.0 / (s * s + np.sqrt(s4 + 4 * z * z))
    return np.arctan2(s * np.sqrt(q), z * q), q**1.5


def sphere_equilibria(c):
    sb, zb = m0_closed_form(c)
    return {"m0": ("i", (sb, zb)), "pi/2": ("ii", math.pi / 2), "-pi/2": ("ii", -math.pi / 2),
            "omega0": ("ii", OMEGA0), "-omega0": ("ii", -OMEGA0)}


def _label_points(samples_s, samples_z, c, radius=LIMIT_RADIUS):
    """samples_*: (n_points, n_times) over the dwell window."""
    eq = sphere_equilibria(c)
    n = samples_s.shape[0]
    labels = np.array(["escape"] * n, dtype=object)
    w, rb = to_chart_ii(samples_s, samples_z)
    for name, (chart, loc) in eq.items():
        if chart == "i":
            dist = np.hypot(samples_s - loc[0], samples_z - loc[1])
        else:
            dist = np.hypot(wrap(w - loc), rb)
        inside = np.all(dist < radius, axis=1) & (labels == "escape")
        labels[inside] = name
    return labels


def _limits_interior(c, s0, z0, T, sign, dwell=DWELL, rtol=1e-9, atol=1e-12):
    f = _rescaled_sphere_field(c)
    y0 = np.empty(2 * len(s0))
    y0[0::2], y0[1::2] = s0, z0
    t_eval = np.linspace(T - dwell, T, 26)
    sol = solve_ivp(lambda t, y: sign * f(t, y), (0.0, T), y0, method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return _label_points(sol.y[0::2], sol.y[1::2], c), sol


def _limits_boundary(omegas, T, sign, dwell=DWELL):
    """Flow on the invariant circle {R = rhobar = 0}: w' = Q(w)."""
    Qv = np.vectorize(_Q)
    sol = solve_ivp(lambda t, w: sign * Qv(w), (0.0, T), np.asarray(omegas, dtype=float),
                    method="DOP853", t_eval=np.linspace(T - dwell, T, 26), rtol=1e-10, atol=1e-12)
    labels = []
    for row in sol.y:
        lab = "escape"
        for name, loc in (("pi/2", math.pi / 2), ("-pi/2", -math.pi / 2), ("omega0", OMEGA0),
                          ("-omega0", -OMEGA0)):
            if np.all(np.abs(wrap(row - loc)) < LIMIT_RADIUS):
                lab = name
        labels.append(lab)
    return np.array(labels, dtype=object)


@dataclass
class Portrait:
    c: float
    rows: list  # dicts with chart, coords, limit_forward, limit_backward
    columns = ("chart", "u", "v", "limit_forward", "limit_backward", "steps", "min_R")

    def counts(self, which="limit_forward", chart=None):
        out = {}
        for r in self.rows:
            if chart is None or r["chart"] == chart:
                out[r[which]] = out.get(r[which], 0) + 1
        return dict(sorted(out.items()))

    def table(self):
        return [[r[k] for k in self.columns] for r in self.rows]


def portrait_sphere(c: float, n: int = 50, box: float = 2.0, n_boundary: Optional[int] = None,
                    T: float = 40.0) -> Portrait:
    """Forward and backward limits from an n x n chart (i) grid and a boundary ring."""
    if c == 0:
        raise DegenerateC("c = 0")
    g = np.linspace(-box, box, n)
    S, Z = np.meshgrid(g, g, indexing="ij")
    s0, z0 = S.ravel(), Z.ravel()
    fwd, sol_f = _limits_interior(c, s0, z0, T, 1.0)
    bwd, sol_b = _limits_interior(c, s0, z0, T, -1.0)
    rows = []
    for k in range(len(s0)):
        rows.append({"chart": "i", "u": float(s0[k]), "v": float(z0[k]), "limit_forward": fwd[k],
                     "limit_backward": bwd[k], "steps": int(sol_f.nfev + sol_b.nfev), "min_R": 0.0})
    nb = n if n_boundary is None else n_boundary
    om = -math.pi + (np.arange(nb) + 0.5) * 2 * math.pi / nb
    bf = _limits_boundary(om, T, 1.0)
    bb = _limits_boundary(om, T, -1.0)
    for k in range(nb):
        rows.append({"chart": "ii", "u": float(om[k]), "v": 0.0, "limit_forward": bf[k],
                     "limit_backward": bb[k], "steps": 0, "min_R": 0.0})
    return Portrait(c, rows)


def interior_quadrant(rows):
    """Grid points of the open quadrant {sbar > 0, zetabar < 0} of chart (i)."""
    return [r for r in rows if r["chart"] == "i" and r["u"] > 0 and r["v"] < 0]


# --- periodic orbit falsification ------------------------------------------------------------

def sphere_divergence(s, z, h=1e-6):
    """Divergence of the unscaled chart (i) field on R = 0, by central differences."""
    f = lambda a, b: np.array([5.0 / 6.0 * a * a + b, 2.0 / 3.0 * a * b])
    return ((f(s + h, z)[0] - f(s - h, z)[0]) + (f(s, z + h)[1] - f(s, z - h)[1])) / (2 * h)


@dataclass
class CycleReport:
    c: float
    n_sections: int
    n_returns: int
    candidates: list
    displacements: np.ndarray   # (direction, section, radius); NaN where no return
    divergence_ok: bool
    divergence_max_err: float

    @property
    def n_candidates(self):
        return len(self.candidates)


def _return_displacements(c, s0, z0, r0, sign, T):
    """Radial displacement at the first full turn around m0, in time direction ``sign``."""
    sb, zb = m0_closed_form(c)
    f = _rescaled_sphere_field(c)
    y0 = np.empty(2 * len(s0))
    y0[0::2], y0[1::2] = s0, z0
    t_eval = np.linspace(0.0, T, int(T / 0.01) + 1)
    sol = solve_ivp(lambda t, y: sign * f(t, y), (0.0, T), y0, method="DOP853", t_eval=t_eval,
                    dense_output=True, rtol=1e-10, atol=1e-13)
    ang = np.unwrap(np.arctan2(sol.y[1::2] - zb, sol.y[0::2] - sb), axis=1)
    wind = ang - ang[:, :1]
    out = np.full(len(s0), np.nan)
    for k in range(len(s0)):
        idx = np.nonzero(np.abs(wind[k]) >= 2 * math.pi)[0]
        if len(idx) == 0:
            continue
        i = idx[0]
        sgn = math.copysign(1.0, wind[k, i])

        def excess(t, k=k, i=i, sgn=sgn):
            y = sol.sol(t)
            a = math.atan2(y[2 * k + 1] - zb, y[2 * k] - sb)
            return sgn * (wind[k, i - 1] + wrap(a - ang[k, i - 1])) - 2 * math.pi

        tr = brentq(excess, t_eval[i - 1], t_eval[i], xtol=1e-13)
        y = sol.sol(tr)
        out[k] = math.hypot(y[2 * k] - sb, y[2 * k + 1] - zb) - r0[k]
    return out


def falsify_periodic_orbits(c: float, n_sections: int = 50, radii=None, T: float = 30.0,
                            n_div: int = 400, seed: int = 0) -> CycleReport:
    """First-return displacements on rays from m0.

    Any cycle on the open hemisphere encloses m0, so it crosses every ray
    from m0; a fixed point of a return map would show up as a sign change of
    the displacement between neighboring radii.  Orbits leave the unstable
    focus m0 before completing a turn, so returns are sought in both time
    directions.
    """
    if c == 0:
        raise DegenerateC("c = 0")
    radii = np.geomspace(0.02, 1.5, 12) if radii is None else np.asarray(radii, dtype=float)
    sb, zb = m0_closed_form(c)
    betas = 2 * math.pi * np.arange(n_sections) / n_sections
    B, Rr = np.meshgrid(betas, radii, indexing="ij")
    s0 = sb + Rr.ravel() * np.cos(B.ravel())
    z0 = zb + Rr.ravel() * np.sin(B.ravel())
    disp = np.full((2, len(s0)), np.nan)
    for row, sign in enumerate((1.0, -1.0)):
        disp[row] = _return_displacements(c, s0, z0, Rr.ravel(), sign, T)
    disp = disp.reshape(2, *B.shape)
    cands = []
    for d, sign in enumerate((1, -1)):
        for j in range(n_sections):
            row = disp[d, j]
            for i in range(len(radii) - 1):
                if np.isfinite(row[i]) and np.isfinite(row[i + 1]) and row[i] * row[i + 1] < 0:
                    cands.append((sign, float(betas[j]), float(radii[i]), float(radii[i + 1])))
    rng = np.random.default_rng(seed)
    ps = rng.uniform(0.0, 3.0, n_div)
    pz = rng.uniform(-3.0, 0.0, n_div)
    div = sphere_divergence(ps, pz)
    err = float(np.max(np.abs(div - 7.0 / 3.0 * ps)))
    return CycleReport(c, n_sections, int(np.isfinite(disp).sum()), cands, disp,
                       bool(np.all(div > 0) and err < 1e-6), err)
