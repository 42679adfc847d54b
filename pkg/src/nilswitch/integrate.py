"""Event-driven integration of extremals near the switching locus.

Three time frames are used.  Physical time t; the time t2 with
dt = (rho / r) dt2, in which the extremal flow is regular up to and
including rho = 0; and the blown-up time t3 with dt2 = dt3 / R_q near the
nilpotent point, where R_q = (rho_hat^2 + s^6 + |zeta|^3)^(1/6) is a
quasi-homogeneous norm of the normal coordinates and rho_hat = rho / r.

Near Sigma the state is the 9-vector

    y = (x1, x2, x3, x4, log rho, theta, H01, H02, t)

Using log rho keeps the relative accuracy of rho when a trajectory passes
extremely close to Sigma.  Through a crossing of Sigma_- the t2-flow follows
the circle {rho = 0} from the incoming to the outgoing equilibrium, which
is how the control jump shows up in physical time.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.integrate import DOP853, RK45

from .blowup import ChartIState, chart_i_field, m0_closed_form
from .chart import normal_form_params, wrap
from .pmp import (TAU_RHO, CotangentPoint, OnSwitchingLocus, hmax_flow_field, lift_values,
                  singular_feedback, singular_flow_field)
from .polyfield import AffineSystem, check_assumption_A

EPS = np.finfo(float).eps

BANG, SINGULAR, BLOWN_UP = "Bang", "Singular", "BlownUp"
SWITCH_PI, CONTACT, EXIT, HANDOFF = "SwitchPi", "ContactSigma0", "ExitNeighborhood", "BlowupHandoff"


class StepSizeUnderflow(RuntimeError):
    def __init__(self, message, t=None, y=None):
        super().__init__(message)
        self.t = t
        self.y = None if y is None else np.array(y)


class TolerancesUnachievable(ValueError):
    pass


class NotInNeighborhood(ValueError):
    pass


class NoContact(ValueError):
    pass


@dataclass
class IntegratorOptions:
    atol: float = 1e-10
    rtol: float = 1e-10
    method: str = "DOP853"
    rho_switch: float = 1e-6      # bang arcs stop here; near Sigma it marks a switch (relative to r)
    rho_exit: float = 0.5         # neighborhood of Sigma, in units of r
    R_hand: float = 0.05          # enter the t3 frame below this R_q
    R_contact: float = 1e-3       # Sigma_0 contact declared below this R_q
    R_stop: Optional[float] = None  # optional terminal event when R_q rises through this value
    horizon: float = 10.0         # physical time budget
    direction: int = 1            # +1 forward, -1 backward in physical time
    event_tol: float = 1e-12
    max_steps: int = 200_000
    singular_horizon: float = 0.0
    singular_tol: float = 1e-5
    max_frame_time: float = 1e7
    max_releases: Optional[int] = None  # stop after this many exits from the blown-up frame

    def __post_init__(self):
        for name in ("atol", "rtol", "rho_switch", "rho_exit", "R_hand", "R_contact", "horizon",
                     "event_tol", "singular_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.method not in _SOLVERS:
            raise ValueError(f"unknown method {self.method!r}")

    def to_dict(self):
        return asdict(self)


_SOLVERS = {"DOP853": DOP853, "RK45": RK45}


@dataclass
class Arc:
    kind: str
    frame: str
    times: np.ndarray
    states: np.ndarray
    terminal_event: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("arc sample times must be strictly increasing")

    @property
    def physical_times(self):
        if self.frame == "t":
            return self.meta.get("t_start", 0.0) + self.meta.get("direction", 1) * self.times
        return self.states[:, -1]


@dataclass(frozen=True)
class Jump:
    t: float
    theta_minus: float
    theta_plus: float
    kind: str  # "switch" or "contact"

    @property
    def gap(self):
        return abs(wrap(self.theta_plus - self.theta_minus))


@dataclass
class ControlHistory:
    """Piecewise control angle theta(t) with an explicit list of jumps."""

    times: np.ndarray
    angles: np.ndarray
    jumps: List[Jump] = field(default_factory=list)

    def u(self, t):
        order = np.argsort(self.times)
        th = np.interp(t, self.times[order], np.unwrap(self.angles[order]))
        return np.array([np.cos(th), np.sin(th)])


@dataclass
class Extremal:
    arcs: List[Arc]
    events: list          # (physical time, descriptor dict)
    controls: ControlHistory
    system: Optional[AffineSystem] = None
    options: Optional[IntegratorOptions] = None

    def find(self, kind):
        return [d for _, d in self.events if d["kind"] == kind]

    @property
    def terminal_event(self):
        return self.arcs[-1].terminal_event if self.arcs else None


@dataclass(frozen=True)
class ContactTimes:
    t_sigma: Optional[float] = None
    t_sigma0: Optional[float] = None
    tail_bound: float = 0.0


# --- stepping with bisection-refined events ---------------------------------------

@dataclass
class Event:
    name: str
    g: Callable
    direction: int = 0
    terminal: bool = True


@dataclass
class Hit:
    name: str
    t: float
    y: np.ndarray


def _check_tolerances(opts):
    if opts.rtol < 100 * EPS:
        raise TolerancesUnachievable(f"rtol = {opts.rtol:.3g} is below 100 machine epsilons")
    if opts.atol < 1e-300:
        raise TolerancesUnachievable("atol underflows")


def _crossed(g0, g1, direction):
    if direction >= 0 and g0 < 0 <= g1:
        return True
    if direction <= 0 and g0 > 0 >= g1:
        return True
    return False


def _bisect(dense, g, ta, tb, ga, tol):
    while tb - ta > tol:
        tm = 0.5 * (ta + tb)
        if tm in (ta, tb):
            break
        gm = g(tm, dense(tm))
        if (gm < 0) == (ga < 0) and gm != 0:
            ta, ga = tm, gm
        else:
            tb = tm
    return tb


def march(fun, y0, events, opts: IntegratorOptions, t_end=None):
    """Integrate from frame time 0 until a terminal event, t_end, or failure.

    Returns (times, states, hits, terminal_hit).  Event times are refined by
    bisection on the step's dense output to ``opts.event_tol``.
    """
    _check_tolerances(opts)
    t_end = opts.max_frame_time if t_end is None else t_end
    y0 = np.asarray(y0, dtype=float)
    solver = _SOLVERS[opts.method](fun, 0.0, y0, t_end, rtol=opts.rtol, atol=opts.atol)
    ts, ys, hits = [0.0], [y0.copy()], []
    gprev = [ev.g(0.0, y0) for ev in events]
    steps = 0
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise StepSizeUnderflow(f"integration failed: {msg}", ts[-1], ys[-1])
        steps += 1
        if steps > opts.max_steps:
            raise StepSizeUnderflow("step budget exhausted", ts[-1], ys[-1])
        t, y = solver.t, solver.y
        if not np.all(np.isfinite(y)):
            raise StepSizeUnderflow("non-finite state", ts[-1], ys[-1])
        dense = solver.dense_output()
        gnew = [ev.g(t, y) for ev in events]
        found = []
        for i, ev in enumerate(events):
            if _crossed(gprev[i], gnew[i], ev.direction):
                found.append((_bisect(dense, ev.g, ts[-1], t, gprev[i], opts.event_tol), i))
        for tc, i in sorted(found):
            yc = dense(tc)
            hits.append(Hit(events[i].name, tc, yc))
            if events[i].terminal:
                if tc > ts[-1]:
                    ts.append(tc)
                    ys.append(yc)
                return np.array(ts), np.array(ys), hits, hits[-1]
        ts.append(t)
        ys.append(y.copy())
        gprev = gnew
    return np.array(ts), np.array(ys), hits, None


# --- bang arcs in physical time ---------------------------------------------------

def integrate_bang(sys: AffineSystem, z0, horizon: float, opts: Optional[IntegratorOptions] = None) -> Arc:
    opts = opts or IntegratorOptions()
    z0 = z0 if isinstance(z0, CotangentPoint) else CotangentPoint.from_array(z0)
    if lift_values(sys, z0).rho <= TAU_RHO:
        raise OnSwitchingLocus("initial point lies on Sigma")

    def rho_of(t, z):
        lv = lift_values(sys, z)
        return lv.rho - opts.rho_switch

    events = [Event("switch", rho_of, -1)]
    ts, zs, _, hit = march(lambda t, z: hmax_flow_field(sys, z, tol=0.0), z0.as_array(),
                           events, opts, t_end=horizon)
    return Arc(BANG, "t", ts, zs, SWITCH_PI if hit else None,
               {"rho_switch": opts.rho_switch} if hit else {})


# --- the near-Sigma state -------------------------------------------------------------

def state_from_point(sys: AffineSystem, z: CotangentPoint, t: float = 0.0) -> np.ndarray:
    lv = lift_values(sys, z)
    if lv.rho <= 0:
        raise OnSwitchingLocus("log-polar state needs rho > 0")
    return np.array([*z.x, math.log(lv.rho), math.atan2(lv.H2, lv.H1), lv.H01, lv.H02, t])


def point_from_state(sys: AffineSystem, y) -> CotangentPoint:
    x = np.asarray(y[:4], dtype=float)
    rho = math.exp(y[4])
    vals, _ = sys.bundle()(x)
    lifts = np.array([rho * math.cos(y[5]), rho * math.sin(y[5]), y[6], y[7]])
    return CotangentPoint(x, np.linalg.solve(vals[1:5], lifts))


def section_point(sys: AffineSystem, y) -> CotangentPoint:
    """Projection of a state onto Sigma: same x, H01, H02 and H1 = H2 = 0."""
    x = np.asarray(y[:4], dtype=float)
    vals, _ = sys.bundle()(x)
    return CotangentPoint(x, np.linalg.solve(vals[1:5], np.array([0.0, 0.0, y[6], y[7]])))


@dataclass(frozen=True)
class NearSigmaDiag:
    field_t2: np.ndarray
    rho: float
    r: float
    a: float
    sigma: int
    s: float
    zeta: float
    Rq: float

    @property
    def rho_hat(self):
        return self.rho / self.r


class NearSigmaField:
    """Fused evaluation of the t2 field and the normal-coordinate diagnostics."""

    def __init__(self, sys: AffineSystem):
        self.sys = sys
        self.bundle = sys.bundle()
        self._key = None
        self._val = None

    def __call__(self, y) -> NearSigmaDiag:
        key = y.tobytes()
        if key == self._key:
            return self._val
        x = y[:4]
        rho = math.exp(y[4])
        th, H01, H02 = y[5], y[6], y[7]
        r = math.hypot(H01, H02)
        vals, jacs = self.bundle(x)
        c, s = math.cos(th), math.sin(th)
        rhs = np.array([[rho * c, 0.0], [rho * s, 0.0], [H01, H01], [H02, H02]])
        P = np.linalg.solve(vals[1:5], rhs)
        p = P[:, 0]
        gx = np.einsum("kij,i->kj", jacs, p)
        w = np.array([1.0, c, s])
        xdot = w @ vals[:3]
        pdot = -(w @ gx[:3])
        d1, d2, d01, d02 = gx[1:5] @ xdot + vals[1:5] @ pdot
        k = rho / r
        out = np.empty(9)
        out[:4] = k * xdot
        out[4] = (c * d1 + s * d2) / r
        out[5] = (-s * d1 + c * d2) / r
        out[6] = k * d01
        out[7] = k * d02
        out[8] = k
        a = float(P[:, 1] @ vals[5]) / r
        sigma = 1 if a >= 0 else -1
        sn = wrap(th - math.atan2(H02, H01) - sigma * math.pi / 2)
        zeta = abs(a) - 1.0
        Rq = ((rho / r) ** 2 + sn**6 + abs(zeta) ** 3) ** (1.0 / 6.0)
        self._key, self._val = key, NearSigmaDiag(out, rho, r, a, sigma, sn, zeta, Rq)
        return self._val


def _near_events(diag, opts, t0, frame):
    d = opts.direction
    ev = [
        Event("horizon", lambda t, y: d * (y[8] - t0) - opts.horizon, 1),
        Event("exit", lambda t, y: diag(y).rho_hat - opts.rho_exit, 1),
        Event("rho_in", lambda t, y: diag(y).rho_hat - opts.rho_switch, -1, False),
        Event("rho_out", lambda t, y: diag(y).rho_hat - opts.rho_switch, 1, False),
        Event("rho_min", lambda t, y: d * diag(y).field_t2[4], 1, False),
    ]
    if opts.R_stop is not None:
        ev.append(Event("stop", lambda t, y: diag(y).Rq - opts.R_stop, 1))
    if frame == "t2":
        ev.append(Event("handoff", lambda t, y: diag(y).Rq - opts.R_hand, -1))
    else:
        ev.append(Event("contact", lambda t, y: diag(y).Rq - opts.R_contact, -1))
        ev.append(Event("release", lambda t, y: diag(y).Rq - 2 * opts.R_hand, 1))
    return ev


def _extrapolate_s(arc: Arc, diag, opts):
    """Linear fit of s against R_q over the final approach, evaluated at R_q = 0."""
    pts = [(diag(y).Rq, diag(y).s) for y in arc.states[-12:]]
    pts = [p for p in pts if p[0] < 8 * opts.R_contact] or pts[-2:]
    R = np.array([p[0] for p in pts])
    S = np.array([p[1] for p in pts])
    if len(R) < 2 or np.ptp(R) == 0:
        return float(S[-1])
    k, s0 = np.polyfit(R, S, 1)
    return float(s0)


def integrate_near_sigma(sys: AffineSystem, z0, opts: Optional[IntegratorOptions] = None) -> Extremal:
    """Follow an extremal through a neighborhood of Sigma.

    ``z0`` is a CotangentPoint, an 8-array (x, p) or a 9-entry near-Sigma
    state as produced by :func:`state_from_point`.
    """
    opts = opts or IntegratorOptions()
    if not isinstance(z0, CotangentPoint) and len(z0) == 9:
        y = np.array(z0, dtype=float)  # already a near-Sigma state; avoids losing tiny rho
    else:
        z0 = z0 if isinstance(z0, CotangentPoint) else CotangentPoint.from_array(z0)
        y = state_from_point(sys, z0)
    if not check_assumption_A(sys, y[:4]).holds:
        raise NotInNeighborhood("the rank assumption fails at the initial point")
    diag = NearSigmaField(sys)
    if diag(y).rho_hat >= opts.rho_exit:
        raise NotInNeighborhood(f"rho / r = {diag(y).rho_hat:.3g} is outside the neighborhood")
    d = opts.direction
    t0 = float(y[8])
    frame = "t3" if diag(y).Rq < opts.R_hand else "t2"
    arcs, hits_all = [], []
    terminal = None
    releases = 0
    for _ in range(200):
        if frame == "t2":
            fun = lambda t, yy: d * diag(yy).field_t2
        else:
            fun = lambda t, yy: d * diag(yy).field_t2 / diag(yy).Rq
        ts, ys, hits, hit = march(fun, y, _near_events(diag, opts, t0, frame), opts)
        name = hit.name if hit else None
        kind = BANG if frame == "t2" else BLOWN_UP
        term = {"exit": EXIT, "stop": EXIT, "contact": CONTACT, "handoff": HANDOFF,
                "release": HANDOFF, "horizon": None, None: None}[name]
        arcs.append(Arc(kind, frame, ts, ys, term, {"stop_reason": name}))
        hits_all.extend(hits)
        y = ys[-1]
        releases += name == "release"
        if opts.max_releases is not None and releases >= opts.max_releases:
            terminal = name
            break
        if name in ("handoff", "release"):
            frame = "t3" if name == "handoff" else "t2"
            continue
        terminal = name
        break
    else:
        raise StepSizeUnderflow("too many frame changes", y[8], y)
    return _assemble(sys, arcs, hits_all, terminal, diag, opts)


def _assemble(sys, arcs, hits, terminal, diag, opts):
    d = opts.direction
    events, jumps = [], []
    # switches: rho_in -> rho_min (below threshold) -> rho_out
    pending_in = None
    pending_min = None
    for h in hits:
        if h.name == "rho_in":
            pending_in, pending_min = h, None
        elif h.name == "rho_min" and pending_in is not None and diag(h.y).rho_hat < opts.rho_switch:
            pending_min = h
        elif h.name == "rho_out" and pending_in is not None and pending_min is not None:
            th_in, th_out = pending_in.y[5], h.y[5]
            if d < 0:
                th_in, th_out = th_out, th_in
            J = Jump(float(pending_min.y[8]), float(th_in), float(th_out), "switch")
            jumps.append(J)
            psi_in = wrap(pending_in.y[5] - math.atan2(pending_in.y[7], pending_in.y[6]))
            events.append((J.t, {"kind": SWITCH_PI, "t": J.t, "theta_minus": J.theta_minus,
                                 "theta_plus": J.theta_plus, "jump": wrap(J.theta_plus - J.theta_minus),
                                 "rho_min": diag(pending_min.y).rho, "a": diag(pending_min.y).a,
                                 "psi_in": psi_in, "t_in": float(pending_in.y[8]),
                                 "t_out": float(h.y[8])}))
            pending_in = pending_min = None
    min_rho = min(float(np.exp(a.states[:, 4].min())) for a in arcs)
    if terminal == "contact":
        arc = arcs[-1]
        yc = arc.states[-1]
        dg = diag(yc)
        zbar = section_point(sys, yc)
        nf = normal_form_params(sys, zbar, tol_rho=1e-6)
        sbar0 = m0_closed_form(nf.c)[0]
        tail = 3.0 * dg.rho ** (2.0 / 3.0) / (2.0 * abs(sbar0) * dg.r)
        t_bar = float(yc[8]) + d * tail
        phi = math.atan2(yc[7], yc[6])
        th_minus = phi + dg.sigma * math.pi / 2 + _extrapolate_s(arc, diag, opts)
        lv = lift_values(sys, zbar)
        us, admissible = singular_feedback(lv)
        us_norm = float(np.linalg.norm(us))
        th_plus = math.atan2(us[1], us[0])
        J = Jump(t_bar, wrap(th_minus), th_plus, "contact")
        jumps.append(J)
        desc = {"kind": CONTACT, "t": t_bar, "t_event": float(yc[8]), "tail": tail,
                "rho": dg.rho, "R": dg.Rq, "r": dg.r, "a": lv.H12 / lv.r, "sigma": dg.sigma,
                "c": nf.c, "sbar0": sbar0, "theta_minus": J.theta_minus, "theta_plus": th_plus,
                "gap": J.gap, "us_norm": us_norm,
                "continued": bool(us_norm <= 1 + opts.singular_tol and opts.singular_horizon > 0),
                "zbar": zbar.as_array().tolist()}
        events.append((t_bar, desc))
        if desc["continued"]:
            arcs.append(_singular_arc(sys, zbar, t_bar, opts))
    elif terminal == "exit":
        events.append((float(arcs[-1].states[-1, 8]), {"kind": EXIT}))
    if not jumps and terminal != "contact":
        events.append((float(arcs[-1].states[-1, 8]), {"kind": "NoSwitch", "min_rho": min_rho}))
    times, angles = [], []
    for arc in arcs:
        if arc.kind == SINGULAR:
            for tt, zz in zip(arc.physical_times, arc.states):
                u, _ = singular_feedback(lift_values(sys, zz))
                times.append(tt)
                angles.append(math.atan2(u[1], u[0]))
        else:
            times.extend(arc.states[:, 8])
            angles.extend(arc.states[:, 5])
    events.sort(key=lambda e: d * e[0])
    return Extremal(arcs, events, ControlHistory(np.array(times), np.array(angles), jumps), sys, opts)


def _singular_arc(sys, zbar, t_bar, opts):
    d = opts.direction

    def g(t, z):
        lv = lift_values(sys, z)
        return float(np.hypot(lv.H01, lv.H02) / abs(lv.H12)) - (1 + opts.singular_tol)

    ts, zs, _, hit = march(lambda t, z: d * singular_flow_field(sys, z), zbar.as_array(),
                           [Event("inadmissible", g, 1)], opts, t_end=opts.singular_horizon)
    return Arc(SINGULAR, "t", ts, zs, None,
               {"stop_reason": hit.name if hit else "horizon", "t_start": t_bar, "direction": d})


# --- blown-up model ---------------------------------------------------------------

def integrate_model_contact(c: float, start: ChartIState, r0: float = 1.0, perturbation=None,
                            opts: Optional[IntegratorOptions] = None, R_end: Optional[float] = None,
                            t3_max: Optional[float] = None) -> Extremal:
    """Forward run of the blown-up normal form in chart (i) down to R = R_end.

    Physical time is carried along as dt/dt3 = R^2 rhobar / r0 with rhobar = 1.
    """
    opts = opts or IntegratorOptions()
    R_end = opts.R_contact if R_end is None else R_end

    def fun(t, y):
        core = chart_i_field(ChartIState(y[0], y[1], y[2]), c, perturbation)
        return np.array([*core, y[0] ** 2 / r0])

    y0 = np.array([start.R, start.sbar, start.zetabar, 0.0])
    ts, ys, _, hit = march(fun, y0, [Event("contact", lambda t, y: y[0] - R_end, -1)], opts,
                           t_end=t3_max or opts.max_frame_time)
    arc = Arc(BLOWN_UP, "t3", ts, ys, CONTACT if hit else None, {"chart": "i", "c": c})
    events = []
    if hit:
        sbar0 = m0_closed_form(c)[0]
        Rc = float(ys[-1, 0])
        tail = 3.0 * Rc**2 / (2.0 * abs(sbar0) * r0)
        events.append((float(ys[-1, 3]) + tail, {"kind": CONTACT, "t_event": float(ys[-1, 3]),
                                                 "tail": tail, "R": Rc, "rho": Rc**3, "r": r0,
                                                 "sbar0": sbar0, "c": c}))
    return Extremal([arc], events, ControlHistory(ys[:, 3], np.zeros(len(ys))), None, opts)


# --- post-processing ---------------------------------------------------------------

def contact_time(extremal: Extremal) -> ContactTimes:
    contacts = extremal.find(CONTACT)
    switches = extremal.find(SWITCH_PI)
    if not contacts and not switches:
        raise NoContact("the extremal neither switches nor reaches Sigma_0")
    t_sigma = switches[0]["t"] if switches else None
    if contacts:
        c = contacts[0]
        return ContactTimes(t_sigma, c["t"], c["tail"])
    return ContactTimes(t_sigma, None, 0.0)


def control_history(extremal: Extremal) -> ControlHistory:
    return extremal.controls
