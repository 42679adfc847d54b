from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from nilswitch.polyfield import (MAX_DEGREE, AffineSystem, MultiPoly, PolynomialDegreeError,
                                 PolynomialSpecError, PolyVectorField, check_assumption_A,
                                 field_from_dict, frame_matrix, lie_bracket)

small = st.fractions(min_value=-5, max_value=5, max_denominator=7)
exps = st.tuples(*[st.integers(0, 2)] * 4)
polys = st.dictionaries(exps, small, max_size=3).map(MultiPoly)
fields = st.tuples(polys, polys, polys, polys).map(PolyVectorField)
# multilinear components keep nested brackets well below the degree cap
lin_polys = st.dictionaries(st.tuples(*[st.integers(0, 1)] * 4), small, max_size=3).map(MultiPoly)
lin_fields = st.tuples(lin_polys, lin_polys, lin_polys, lin_polys).map(PolyVectorField)


@settings(max_examples=40, deadline=None)
@given(fields, fields)
def test_bracket_antisymmetric(F, G):
    assert (lie_bracket(F, G) + lie_bracket(G, F)).is_zero()


@settings(max_examples=25, deadline=None)
@given(lin_fields, lin_fields, lin_fields)
def test_jacobi_identity_is_exactly_zero(F, G, H):
    total = (lie_bracket(F, lie_bracket(G, H)) + lie_bracket(G, lie_bracket(H, F))
             + lie_bracket(H, lie_bracket(F, G)))
    assert total.is_zero()


@settings(max_examples=30, deadline=None)
@given(fields, fields, fields, small)
def test_bracket_bilinear(F, G, H, k):
    assert lie_bracket(F + G.scale(k), H) == lie_bracket(F, H) + lie_bracket(G, H).scale(k)


def test_bracket_convention():
    # [x1 d2, d1] = DG.F - DF.G = -d2
    x1 = MultiPoly.var(0)
    F = field_from_dict({1: x1})
    G = field_from_dict({0: 1})
    assert lie_bracket(F, G) == field_from_dict({1: -1})


def test_rational_coefficients_stay_exact():
    p = MultiPoly({(1, 0, 0, 0): Fraction(1, 3)}) * MultiPoly({(0, 1, 0, 0): Fraction(3, 7)})
    assert p.is_exact
    assert p.terms[(1, 1, 0, 0)] == Fraction(1, 7)


def test_evaluation_and_derivative():
    p = MultiPoly({(2, 1, 0, 0): 3, (0, 0, 0, 1): -1})
    x = np.array([2.0, -1.0, 0.5, 4.0])
    assert p(x) == pytest.approx(3 * 4 * -1 - 4)
    assert p.diff(0)(x) == pytest.approx(6 * 2 * -1)


def test_degree_cap():
    with pytest.raises(PolynomialDegreeError):
        MultiPoly({(MAX_DEGREE + 1, 0, 0, 0): 1})


def test_spec_round_trip(example):
    spec = example.to_spec()
    back = AffineSystem.from_spec(spec)
    assert back.to_spec() == spec
    assert back.F0 == example.F0 and back.F2 == example.F2


def test_malformed_spec_names_the_field():
    bad = {"drift": [[{"coeff": 1, "exps": [1, 0]}], [], [], []], "controls": [[[]] * 4, [[]] * 4]}
    with pytest.raises(PolynomialSpecError) as info:
        AffineSystem.from_spec(bad)
    assert info.value.field.startswith("system.drift[0]")


def test_example_brackets(example):
    # F01 = -d3 ... checked against hand computation: [F0, F1] = DF1.F0 - DF0.F1
    x = np.array([0.3, 0.7, -0.2, 1.1])
    F01 = example.field("01")(x)
    F0, F1 = example.F0, example.F1
    by_hand = F1.jacobian(x) @ F0(x) - F0.jacobian(x) @ F1(x)
    assert np.allclose(F01, by_hand)
    assert np.allclose(example.field("12")(x), [-1.0, 0, 0, 0])


@pytest.mark.parametrize("x2, holds", [(1.0, True), (0.0, False)])
def test_assumption_A_on_example(example, x2, holds):
    assert check_assumption_A(example, [0.3, x2, -0.1, 0.4]).holds is holds


def test_assumption_A_fails_for_repeated_control():
    F = field_from_dict({0: 1})
    sys = AffineSystem(field_from_dict({1: MultiPoly.var(0)}), (F, F))
    chk = check_assumption_A(sys, [0.1, 0.2, 0.3, 0.4])
    assert not chk.holds and chk.det == 0.0


def test_determinant_matches_lu(example, rng):
    for x in rng.uniform(-2, 2, size=(100, 4)):
        M = frame_matrix(example, x).T
        P, L, U = scipy.linalg.lu(M)
        det_lu = np.linalg.det(P) * np.prod(np.diag(U))
        det = check_assumption_A(example, x).det
        assert abs(det - det_lu) <= 1e-12 * max(1.0, abs(det_lu))


def test_bundle_matches_individual_fields(example, rng):
    x = rng.uniform(-1, 1, 4)
    vals, jacs = example.bundle()(x)
    for k, key in enumerate(("0", "1", "2", "01", "02", "12")):
        assert np.allclose(vals[k], example.field(key)(x))
        assert np.allclose(jacs[k], example.field(key).jacobian(x))
