import math

import numpy as np
import pytest

from conftest import random_off_sigma_points, sigma0_point, sigma_minus_point
from nilswitch.chart import (AssumptionAViolated, SigmaClass, classify, extended_field_t2,
                             extended_from_point, from_chart, model_field_hot, normal_form_params,
                             point_from_extended, rescaled_field, to_chart, wrap)
from nilswitch.pmp import CotangentPoint, LiftValues, hmax_flow_field, lift_values


def test_wrap_range():
    a = wrap(np.linspace(-20, 20, 1001))
    assert np.all(a > -math.pi) and np.all(a <= math.pi)
    assert wrap(-math.pi) == math.pi


def test_chart_round_trip(example, rng):
    for z in random_off_sigma_points(example, rng, 30):
        back = from_chart(example, to_chart(example, z))
        assert np.allclose(back.as_array(), z.as_array(), atol=1e-10)


def test_chart_rejects_points_where_rank_fails(example):
    with pytest.raises(AssumptionAViolated):
        to_chart(example, CotangentPoint([0.1, 0.0, 0.2, 0.3], [1, 1, 1, 1]))


@pytest.mark.parametrize("lv, expected", [
    (LiftValues(0, 0, 0, 1.0, 0.0, 0.5), SigmaClass.SigmaMinus),
    (LiftValues(0, 0, 0, 1.0, 0.0, 2.0), SigmaClass.SigmaPlus),
    (LiftValues(0, 0, 0, 0.6, 0.8, -1.0), SigmaClass.SigmaZero),
    (LiftValues(0, 0.1, 0, 1.0, 0.0, 0.5), SigmaClass.NotOnSigma),
])
def test_classify(lv, expected):
    assert classify(lv) is expected


def test_example_points_have_expected_classes(example):
    assert classify(lift_values(example, sigma_minus_point(example))) is SigmaClass.SigmaMinus
    for o in (1, -1):
        lv = lift_values(example, sigma0_point(o))
        assert classify(lv, tol_sigma=1e-12) is SigmaClass.SigmaZero
        assert math.copysign(1, lv.H12) == o


def test_extended_field_is_time_changed_hmax_flow(example, rng):
    for z in random_off_sigma_points(example, rng, 10):
        y = extended_from_point(example, z)
        dy = extended_field_t2(example, y)
        lv = lift_values(example, z)
        k = lv.rho / lv.r
        assert np.allclose(dy[:4], k * hmax_flow_field(example, z)[:4], atol=1e-12)
        assert dy[8] == pytest.approx(k)
        assert np.allclose(point_from_extended(example, y).as_array(), z.as_array(), atol=1e-12)


def test_rescaled_rho_rate_is_cos_psi(example, rng):
    # d rho / d t1 = cos(psi) holds on Sigma; off it the identity holds up to O(rho)
    z = sigma_minus_point(example)
    st = to_chart(example, CotangentPoint(z.x, z.p + 1e-7 * rng.normal(size=4)))
    tan = rescaled_field(example, st)
    assert tan.rho == pytest.approx(math.cos(st.psi), abs=1e-5)


@pytest.mark.parametrize("o", [1, -1])
def test_normal_form_params_of_example_contact(example, o):
    nf = normal_form_params(example, sigma0_point(o))
    assert nf.orientation == o
    assert abs(nf.alpha) < 1e-12
    assert abs(nf.c) > 1e-3


def test_model_field_truncation():
    assert np.allclose(model_field_hot((0.1, 0.2, -0.3), 2.0), [-0.02, -0.28, 0.2])
