import logging
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from pbsmc import potentials
from pbsmc.errors import AssumptionViolatedError, ParameterRangeError
from pbsmc.potentials import Potential, assumption2_constants, huber, saturated_sign

coords = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)
vectors = st.lists(coords, min_size=2, max_size=2).map(np.array)
scales = st.floats(min_value=1e-3, max_value=1e3)

FAMILIES = [
    Potential.norm_power(k=2.0, r=1.3, s=2.0),
    Potential.norm_power(k=2.0, r=1.0, s=1.0),
    Potential.norm_power(k=1.5, r=1.5, s=3.0),
    Potential.l1_quadratic(alpha=1.0, beta=0.5),
    Potential.quadratic(beta=2.0),
]


def test_norm_power_value():
    pot = Potential.norm_power(k=2.0, r=1.3, s=2.0)
    assert potentials.value(pot, [3.0, 4.0]) == pytest.approx(2.0 * 5.0**1.3)


def test_l1_value():
    pot = Potential.norm_power(k=2.0, r=1.0, s=1.0)
    assert potentials.value(pot, [1.5, -0.5]) == pytest.approx(4.0)


def test_l1_quadratic_value_and_gradient():
    pot = Potential.l1_quadratic(alpha=1.0, beta=2.0)
    assert potentials.value(pot, [1.0, -2.0]) == pytest.approx(3.0 + 5.0)
    assert_allclose(potentials.gradient(pot, [1.0, -2.0]), [3.0, -5.0])


@pytest.mark.parametrize("pot", FAMILIES, ids=lambda p: p.describe())
def test_gradient_vanishes_at_origin(pot):
    assert_allclose(potentials.gradient(pot, np.zeros(2)), np.zeros(2))
    assert potentials.value(pot, np.zeros(2)) == 0.0


def test_sign_gradient_selects_zero_on_axes():
    pot = Potential.norm_power(k=2.0, r=1.0, s=1.0)
    assert_allclose(potentials.gradient(pot, [0.3, 0.0]), [2.0, 0.0])
    assert_allclose(potentials.gradient(pot, [-1e-9, 4.0]), [-2.0, 2.0])


@pytest.mark.parametrize(
    "pot",
    [
        Potential.norm_power(k=2.0, r=1.3, s=2.0),
        Potential.norm_power(k=1.5, r=1.5, s=3.0),
        Potential.norm_power(k=1.0, r=1.2, s=1.5),
    ],
    ids=lambda p: p.describe(),
)
@pytest.mark.parametrize("sigma", [[0.7, -1.3], [2.0, 0.5], [-0.2, -0.9]])
def test_gradient_matches_finite_differences(pot, sigma):
    sigma = np.array(sigma)
    h = 1e-6
    fd = np.array(
        [
            (potentials.value(pot, sigma + h * e) - potentials.value(pot, sigma - h * e)) / (2 * h)
            for e in np.eye(2)
        ]
    )
    assert_allclose(potentials.gradient(pot, sigma), fd, rtol=1e-6, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(vectors, scales)
def test_norm_power_is_homogeneous(sigma, lam):
    pot = Potential.norm_power(k=2.0, r=1.3, s=2.0)
    expected = lam**1.3 * potentials.value(pot, sigma)
    assert potentials.value(pot, lam * sigma) == pytest.approx(expected, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(vectors, vectors)
def test_families_are_convex(a, b):
    for pot in FAMILIES:
        mid = potentials.value(pot, 0.5 * (a + b))
        bound = 0.5 * (potentials.value(pot, a) + potentials.value(pot, b))
        assert mid <= bound + 1e-9 * max(1.0, bound)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_sampled_constants_hold(sigma):
    assume(np.linalg.norm(sigma) > 1e-3)
    pot = Potential.norm_power(k=1.5, r=1.5, s=3.0)
    c, rho, exact = assumption2_constants(pot, 2)
    assert not exact
    lhs = float(np.linalg.norm(potentials.gradient(pot, sigma)))
    assert lhs >= c * potentials.value(pot, sigma) ** rho * (1.0 - 1e-12)


@pytest.mark.parametrize(
    "pot, c, rho",
    [
        (Potential.norm_power(k=2.0, r=1.3, s=2.0), 1.3 * 2.0 ** (1 / 1.3), 0.3 / 1.3),
        (Potential.norm_power(k=2.0, r=1.0, s=2.0), 2.0, 0.0),
        (Potential.norm_power(k=2.0, r=1.0, s=1.0), 2.0, 0.0),
        (Potential.l1_quadratic(alpha=0.7, beta=3.0), 0.7, 0.0),
    ],
    ids=lambda v: v.describe() if isinstance(v, Potential) else None,
)
def test_exact_constants(pot, c, rho):
    constants = assumption2_constants(pot, 2)
    assert constants.exact
    assert constants.c == pytest.approx(c, rel=1e-12)
    assert constants.rho == pytest.approx(rho, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_exact_constants_hold(sigma):
    assume(np.linalg.norm(sigma) > 1e-6)
    for pot in (Potential.norm_power(k=2.0, r=1.3, s=2.0), Potential.norm_power(k=2.0, r=1.0, s=1.0)):
        c, rho, _ = assumption2_constants(pot, 2)
        lhs = float(np.linalg.norm(potentials.gradient(pot, sigma)))
        assert lhs >= c * potentials.value(pot, sigma) ** rho - 1e-12


def test_quadratic_potential_is_only_asymptotic():
    with pytest.raises(AssumptionViolatedError) as excinfo:
        assumption2_constants(Potential.quadratic(beta=1.0), 2)
    assert excinfo.value.value == 0.5


def test_smoothed_potential_reports_unsmoothed_constants():
    smooth = Potential.norm_power(k=2.0, r=1.0, s=1.0, smoothing_eps=0.05)
    assert assumption2_constants(smooth, 2) == assumption2_constants(
        Potential.norm_power(k=2.0, r=1.0, s=1.0), 2
    )


def test_custom_potential_defaults_to_rho_zero():
    pot = Potential.custom(lambda s: float(np.abs(s).sum() + s @ s))
    c, rho, exact = assumption2_constants(pot, 2, n_samples=256)
    assert rho == 0.0
    assert not exact
    assert c > 0


def test_custom_gradient_falls_back_to_finite_differences():
    pot = Potential.custom(lambda s: float(s @ s))
    assert_allclose(potentials.gradient(pot, [1.0, -2.0]), [2.0, -4.0], rtol=1e-6)


def test_boundary_layer_saturates_gradient():
    pot = Potential.norm_power(k=2.0, r=1.0, s=1.0, smoothing_eps=0.1)
    assert_allclose(potentials.gradient(pot, [0.05, -0.5]), [1.0, -2.0])
    assert potentials.value(pot, [0.05, 0.0]) == pytest.approx(2.0 * 0.05**2 / 0.2)
    assert pot.is_smooth


def test_huber_and_saturation():
    assert_allclose(huber(np.array([0.05, 1.0]), 0.1), [0.0125, 0.95])
    assert_allclose(saturated_sign(np.array([0.05, -3.0, 0.0]), 0.1), [0.5, -1.0, 0.0])
    assert_allclose(saturated_sign(np.array([0.05, -3.0, 0.0]), 0.0), [1.0, -1.0, 0.0])


def test_smoothing_a_continuous_gradient_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="Potentials"):
        pot = Potential.norm_power(k=2.0, r=1.3, s=2.0, smoothing_eps=0.1)
    assert pot.layer == 0.0
    assert "ignored" in caplog.text


@pytest.mark.parametrize(
    "kwargs",
    [
        {"k": 2.0, "r": 2.0},
        {"k": 2.0, "r": 0.9},
        {"k": 0.0, "r": 1.3},
        {"k": 2.0, "r": 1.3, "s": 0.5},
        {"k": 2.0, "r": 1.3, "s": math.inf},
        {"k": 2.0, "r": 1.3, "smoothing_eps": -0.1},
    ],
)
def test_invalid_norm_power(kwargs):
    with pytest.raises(ParameterRangeError):
        Potential.norm_power(**kwargs)


def test_invalid_kinds():
    with pytest.raises(ParameterRangeError):
        Potential(kind="cubic")
    with pytest.raises(ParameterRangeError):
        Potential.l1_quadratic(alpha=0.0, beta=1.0)
    with pytest.raises(ParameterRangeError):
        Potential.custom(None)


def test_non_finite_sigma_is_rejected():
    with pytest.raises(ParameterRangeError):
        potentials.value(Potential.quadratic(beta=1.0), [math.nan, 0.0])


def test_describe_and_to_dict():
    pot = Potential.norm_power(k=2.0, r=1.0, s=1.0, smoothing_eps=0.05)
    assert "boundary layer" in pot.describe()
    assert pot.to_dict() == {"kind": "norm_power", "k": 2.0, "r": 1.0, "s": 1.0, "smoothing_eps": 0.05}
