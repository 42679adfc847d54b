"""Exact sparse polynomials and polynomial vector fields on R^4.

Coefficients are kept as :class:`fractions.Fraction` whenever the input is
rational, so brackets of rational fields are exact.  Float coefficients are
accepted and simply propagate as floats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from numbers import Rational
from typing import Iterable, Mapping, Sequence

import numpy as np

NVARS = 4
MAX_DEGREE = 16
TAU_A = 1e-9


class PolynomialDegreeError(ValueError):
    pass


class PolynomialSpecError(ValueError):
    """Malformed polynomial description; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def _coerce(c):
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (bool, np.bool_)):
        raise TypeError("boolean coefficient")
    if isinstance(c, (int, np.integer, Rational)):
        return Fraction(int(c)) if isinstance(c, (int, np.integer)) else Fraction(c)
    if isinstance(c, str):
        return Fraction(c.strip())
    return float(c)


class MultiPoly:
    """Sparse polynomial in x1..x4, ``terms`` maps exponent 4-tuples to coefficients."""

    __slots__ = ("_terms", "__dict__")

    def __init__(self, terms: Mapping[Sequence[int], object] | None = None):
        clean = {}
        for exps, coeff in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != NVARS or min(exps) < 0:
                raise ValueError(f"bad exponent {exps}")
            if sum(exps) > MAX_DEGREE:
                raise PolynomialDegreeError(f"degree {sum(exps)} exceeds cap {MAX_DEGREE}")
            coeff = _coerce(coeff)
            if coeff != 0:
                clean[exps] = clean.get(exps, 0) + coeff
                if clean[exps] == 0:
                    del clean[exps]
        self._terms = clean

    # construction helpers
    @classmethod
    def const(cls, c):
        return cls({(0,) * NVARS: c})

    @classmethod
    def var(cls, i, coeff=1):
        e = [0] * NVARS
        e[i] = 1
        return cls({tuple(e): coeff})

    @classmethod
    def from_terms(cls, terms: Iterable, where="terms"):
        """Build from ``[{coeff: c, exps: [e1..e4]}, ...]`` or ``[[c, [e1..e4]], ...]``."""
        out = {}
        for k, item in enumerate(terms):
            loc = f"{where}[{k}]"
            if isinstance(item, Mapping):
                unknown = set(item) - {"coeff", "exps"}
                if unknown:
                    raise PolynomialSpecError(f"unknown keys {sorted(unknown)}", loc)
                if "coeff" not in item or "exps" not in item:
                    raise PolynomialSpecError("monomial needs 'coeff' and 'exps'", loc)
                coeff, exps = item["coeff"], item["exps"]
            elif isinstance(item, (list, tuple)) and len(item) == 2:
                coeff, exps = item
            else:
                raise PolynomialSpecError("monomial must be {coeff, exps} or [coeff, exps]", loc)
            if (not isinstance(exps, (list, tuple)) or len(exps) != NVARS
                    or not all(isinstance(e, int) and not isinstance(e, bool) and e >= 0 for e in exps)):
                raise PolynomialSpecError("exps must be 4 nonnegative integers", loc + ".exps")
            try:
                coeff = _coerce(coeff)
            except (TypeError, ValueError, ZeroDivisionError):
                raise PolynomialSpecError(f"bad coefficient {coeff!r}", loc + ".coeff") from None
            key = tuple(exps)
            out[key] = out.get(key, 0) + coeff
        try:
            return cls(out)
        except PolynomialDegreeError as err:
            raise PolynomialSpecError(str(err), where) from None

    def to_terms(self):
        def enc(c):
            if isinstance(c, Fraction):
                return str(c)
            return repr(float(c))
        return [{"coeff": enc(c), "exps": list(e)} for e, c in sorted(self._terms.items())]

    @property
    def terms(self):
        return dict(self._terms)

    def __len__(self):
        return len(self._terms)

    def is_zero(self):
        return not self._terms

    @property
    def degree(self):
        return max((sum(e) for e in self._terms), default=-1)

    @property
    def is_exact(self):
        return all(isinstance(c, Fraction) for c in self._terms.values())

    # arithmetic
    def __add__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0) + c
        return MultiPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly({e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return other
        out = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return MultiPoly(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        other = _as_poly(other)
        if other is NotImplemented:
            return False
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def diff(self, i):
        out = {}
        for e, c in self._terms.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = c * e[i]
        return MultiPoly(out)

    # evaluation
    @cached_property
    def _compiled(self):
        if not self._terms:
            return np.zeros((0, NVARS), dtype=int), np.zeros(0)
        exps = np.array(list(self._terms.keys()), dtype=int)
        coeffs = np.array([float(c) for c in self._terms.values()])
        return exps, coeffs

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        exps, coeffs = self._compiled
        if not len(coeffs):
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        mon = np.prod(x[..., None, :] ** exps, axis=-1)
        return mon @ coeffs

    def __repr__(self):
        if not self._terms:
            return "MultiPoly(0)"
        parts = []
        for e, c in sorted(self._terms.items()):
            mon = "*".join(f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k)
            parts.append(f"{c}" + (f"*{mon}" if mon else ""))
        return "MultiPoly(" + " + ".join(parts) + ")"


def _as_poly(v):
    if isinstance(v, MultiPoly):
        return v
    if isinstance(v, (int, float, Fraction, np.integer, np.floating)):
        return MultiPoly.const(v)
    return NotImplemented


ZERO = MultiPoly()


@dataclass(frozen=True, eq=False)
class PolyVectorField:
    """Vector field sum_i comps[i] d/dx_i with polynomial components."""

    comps: tuple

    def __post_init__(self):
        comps = tuple(c if isinstance(c, MultiPoly) else MultiPoly.const(c) for c in self.comps)
        if len(comps) != NVARS:
            raise ValueError("vector fields live on R^4")
        object.__setattr__(self, "comps", comps)

    @classmethod
    def zero(cls):
        return cls((ZERO,) * NVARS)

    @classmethod
    def from_spec(cls, spec, where="field"):
        if not isinstance(spec, (list, tuple)) or len(spec) != NVARS:
            raise PolynomialSpecError("a field is a list of 4 components", where)
        return cls(tuple(MultiPoly.from_terms(c or [], f"{where}[{i}]") for i, c in enumerate(spec)))

    def to_spec(self):
        return [c.to_terms() for c in self.comps]

    @cached_property
    def jacobian_polys(self):
        return tuple(tuple(c.diff(j) for j in range(NVARS)) for c in self.comps)

    def __call__(self, x):
        return np.array([c(x) for c in self.comps])

    def jacobian(self, x):
        """Matrix J[i, j] = d F_i / d x_j at ``x``."""
        return np.array([[d(x) for d in row] for row in self.jacobian_polys])

    def __add__(self, other):
        return PolyVectorField(tuple(a + b for a, b in zip(self.comps, other.comps)))

    def __sub__(self, other):
        return PolyVectorField(tuple(a - b for a, b in zip(self.comps, other.comps)))

    def __neg__(self):
        return PolyVectorField(tuple(-a for a in self.comps))

    def scale(self, k):
        return PolyVectorField(tuple(a * k for a in self.comps))

    def __eq__(self, other):
        return isinstance(other, PolyVectorField) and self.comps == other.comps

    def __hash__(self):
        return hash(self.comps)

    def is_zero(self):
        return all(c.is_zero() for c in self.comps)

    @property
    def degree(self):
        return max(c.degree for c in self.comps)


def lie_bracket(F: PolyVectorField, G: PolyVectorField) -> PolyVectorField:
    """[F, G]_i = sum_j (F_j dG_i/dx_j - G_j dF_i/dx_j)."""
    comps = []
    for i in range(NVARS):
        acc = ZERO
        for j in range(NVARS):
            dG = G.jacobian_polys[i][j]
            dF = F.jacobian_polys[i][j]
            if not dG.is_zero() and not F.comps[j].is_zero():
                acc = acc + F.comps[j] * dG
            if not dF.is_zero() and not G.comps[j].is_zero():
                acc = acc - G.comps[j] * dF
        comps.append(acc)
    return PolyVectorField(tuple(comps))


def field_from_dict(d: Mapping[int, MultiPoly]) -> PolyVectorField:
    """Shorthand: ``{0: x2, 2: 1}`` is x2 d/dx1 + d/dx3 (0-based keys)."""
    comps = [ZERO] * NVARS
    for i, c in d.items():
        comps[i] = c if isinstance(c, MultiPoly) else MultiPoly.const(c)
    return PolyVectorField(tuple(comps))


@dataclass(frozen=True, eq=False)
class AffineSystem:
    """x' = F0(x) + u1 F1(x) + u2 F2(x) on R^4.

    Iterated brackets are addressed by index strings read left to right as
    nested brackets: ``"01"`` is [F0, F1] and ``"101"`` is [[F1, F0], F1].
    """

    drift: PolyVectorField
    controls: tuple
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.controls) != 2:
            raise ValueError("exactly two control fields are required")
        object.__setattr__(self, "controls", tuple(self.controls))

    @property
    def F0(self):
        return self.drift

    @property
    def F1(self):
        return self.controls[0]

    @property
    def F2(self):
        return self.controls[1]

    def field(self, key: str) -> PolyVectorField:
        if key in self._cache:
            return self._cache[key]
        base = (self.drift,) + self.controls
        if len(key) == 1:
            out = base[int(key)]
        else:
            out = lie_bracket(self.field(key[:-1]), base[int(key[-1])])
        self._cache[key] = out
        return out

    def bundle(self, keys=None):
        """Compiled evaluator for the fields named by ``keys`` (default STD_KEYS)."""
        keys = tuple(keys or STD_KEYS)
        ck = ("bundle",) + keys
        if ck not in self._cache:
            self._cache[ck] = FieldBundle([self.field(k) for k in keys])
        return self._cache[ck]

    def to_spec(self):
        return {"drift": self.drift.to_spec(),
                "controls": [c.to_spec() for c in self.controls]}

    @classmethod
    def from_spec(cls, spec, name="custom"):
        if not isinstance(spec, Mapping):
            raise PolynomialSpecError("system must be a mapping", "system")
        unknown = set(spec) - {"drift", "controls"}
        if unknown:
            raise PolynomialSpecError(f"unknown keys {sorted(unknown)}", "system")
        if "drift" not in spec or "controls" not in spec:
            raise PolynomialSpecError("needs 'drift' and 'controls'", "system")
        ctrl = spec["controls"]
        if not isinstance(ctrl, (list, tuple)) or len(ctrl) != 2:
            raise PolynomialSpecError("exactly two control fields", "system.controls")
        return cls(PolyVectorField.from_spec(spec["drift"], "system.drift"),
                   tuple(PolyVectorField.from_spec(c, f"system.controls[{i}]")
                         for i, c in enumerate(ctrl)), name=name)


STD_KEYS = ("0", "1", "2", "01", "02", "12")


class FieldBundle:
    """Evaluate several fields and their Jacobians with one monomial pass.

    ``bundle(x)`` returns ``(vals, jacs)`` of shapes (k, 4) and (k, 4, 4).
    """

    def __init__(self, fields):
        polys = []
        for F in fields:
            polys.extend(F.comps)
            polys.extend(d for row in F.jacobian_polys for d in row)
        monos = sorted({e for q in polys for e in q.terms}) or [(0,) * NVARS]
        index = {e: i for i, e in enumerate(monos)}
        C = np.zeros((len(polys), len(monos)))
        for row, q in enumerate(polys):
            for e, c in q.terms.items():
                C[row, index[e]] = float(c)
        self.k = len(fields)
        self.exps = np.array(monos, dtype=float)
        self.C = C

    def __call__(self, x):
        m = np.prod(np.asarray(x, dtype=float) ** self.exps, axis=1)
        v = (self.C @ m).reshape(self.k, 20)
        return v[:, :4], v[:, 4:].reshape(self.k, 4, 4)


@dataclass(frozen=True)
class AssumptionCheck:
    holds: bool
    det: float


def frame_matrix(sys: AffineSystem, x) -> np.ndarray:
    """Rows F1, F2, F01, F02 at x, so that ``frame_matrix @ p`` gives (H1, H2, H01, H02)."""
    vals, _ = sys.bundle()(x)
    return vals[1:5].copy()


def check_assumption_A(sys: AffineSystem, x, tol: float = TAU_A) -> AssumptionCheck:
    det = float(np.linalg.det(frame_matrix(sys, x).T))
    return AssumptionCheck(abs(det) > tol, det)
