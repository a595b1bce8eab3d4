import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pbsmc.bench.arm import arm_model
from pbsmc.bench.scenarios import builtin_entry, scenario_from_entry
from pbsmc.bench.toys import scalar_model
from pbsmc.engine import SLIDING_TOL, simulate
from pbsmc.errors import AssumptionViolatedError, MapInvalidError, ParameterRangeError
from pbsmc.mech_ph import plant_dynamics
from pbsmc.potentials import Potential
from pbsmc.robustness import (
    DisturbanceProfile,
    b1_residual,
    b1_state_radius,
    b2_residual,
    condition36_margin,
    disturbed_plant_dynamics,
    effective_matched,
    gamma1,
    gamma2,
)
from pbsmc.sliding import SlidingMap

PHI_Q = [[2.0, 0.0], [2.0, 2.0]]


@pytest.fixture(scope="module")
def scalar():
    return scalar_model()


@pytest.fixture(scope="module")
def scalar_map():
    return SlidingMap.affine_linear([[1.0]])


def test_constant_profile():
    profile = DisturbanceProfile.constant([3.0, 4.0], [0.0, 0.0])
    assert profile.bound_m == pytest.approx(5.0)
    assert not profile.has_unmatched
    d_um, d_m = profile.evaluate(12.0)
    assert_allclose(d_m, [3.0, 4.0])
    assert_allclose(d_um, [0.0, 0.0])


def test_sinusoid_profile():
    profile = DisturbanceProfile.sinusoid([0.5, 0.5], [0.05, 0.05], omega=2.0)
    d_um, d_m = profile.evaluate(math.pi / 4)
    assert_allclose(d_m, [0.5, 0.5])
    assert_allclose(d_um, [0.05, 0.05])
    assert profile.has_unmatched
    assert profile.to_dict()["omega"] == 2.0


def test_profile_outside_declared_bound():
    profile = DisturbanceProfile(
        d_um=lambda t: np.zeros(1), d_m=lambda t: np.array([t]), bound_um=0.0, bound_m=1.0
    )
    profile.evaluate(0.5)
    with pytest.raises(ParameterRangeError, match="matched"):
        profile.evaluate(2.0)


def test_zero_profile(scalar):
    d_um, d_m = DisturbanceProfile.zero(2).evaluate(1.0)
    assert not np.any(d_um) and not np.any(d_m)


def test_disturbances_enter_their_rows(scalar):
    q, p, u = [0.3], [0.2], [1.0]
    qdot, pdot = plant_dynamics(scalar, q, p, u)
    dq, dp = disturbed_plant_dynamics(scalar, q, p, u, [0.5], [-1.0])
    assert_allclose(dq, qdot + 0.5)
    assert_allclose(dp, pdot - 1.0)


def test_effective_matched():
    T = np.diag([2.0, 1.0])
    jac = np.array([[1.0, 0.0], [0.0, 2.0]])
    d_m_eff = effective_matched(T, jac, np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    assert_allclose(d_m_eff, [1.0 - 0.5, 1.0 - 2.0])
    assert_allclose(effective_matched(T, np.zeros((2, 2)), np.ones(2), np.ones(2)), np.ones(2))


def test_gammas_on_arm():
    arm = arm_model()
    smap = SlidingMap.affine_linear(PHI_Q)
    q = [0.0, math.pi / 2]
    expected = (6.0 + 2.0 * math.sqrt(5.0)) / 3.0
    assert gamma2(arm, smap, q) == pytest.approx(expected, rel=1e-12)
    assert gamma1(arm, smap, q) == pytest.approx(expected, rel=1e-12)


def test_scalar_gammas(scalar, scalar_map):
    assert gamma1(scalar, scalar_map, [0.3]) == pytest.approx(1.0)
    assert gamma2(scalar, scalar_map, [0.3]) == pytest.approx(1.0)


def test_b1_residual(scalar, scalar_map):
    pot = Potential.quadratic(beta=1.0)
    assert b1_residual(scalar, scalar_map, pot, [1.0], [0.0], [1.0]) == pytest.approx(1.0)
    assert b1_residual(scalar, scalar_map, pot, [0.0], [0.0], [1.0]) == pytest.approx(-1.0)


def test_b2_residual(scalar, scalar_map):
    assert b2_residual(scalar, scalar_map, [0.5], [0.0], [0.0], tol_sigma=1e-3) == math.inf
    assert b2_residual(scalar, scalar_map, [0.5], [-0.5], [0.0], tol_sigma=1e-3) == pytest.approx(0.25)
    assert b2_residual(scalar, scalar_map, [0.5], [-0.5], [1.0], tol_sigma=1e-3) == pytest.approx(-0.75)
    with pytest.raises(ParameterRangeError):
        b2_residual(scalar, scalar_map, [0.5], [-0.5], [0.0], tol_sigma=0.0)


def test_reaching_margin(scalar, scalar_map):
    pot = Potential.norm_power(k=2.0, r=1.0, s=1.0)
    assert condition36_margin(scalar, scalar_map, pot, [1.0], [0.0], [0.5], [1.0]) == pytest.approx(2.5)
    assert condition36_margin(scalar, scalar_map, pot, [1.0], [0.0], [3.0], [2.0]) < 0


def test_state_radius_scalar_factor(scalar, scalar_map):
    radius = b1_state_radius(scalar, scalar_map, Potential.quadratic(beta=1.0), [0.0], [1.0])
    assert radius == pytest.approx((7.0 + math.sqrt(45.0)) / 2.0, rel=1e-12)


def test_state_radius_needs_quadratic_and_linear_psi(scalar, scalar_map):
    with pytest.raises(ParameterRangeError):
        b1_state_radius(scalar, scalar_map, Potential.norm_power(k=1.0, r=1.0), [0.0], [1.0])
    nonlinear = SlidingMap.affine(lambda q: np.sinh(q), dof=1)
    with pytest.raises(MapInvalidError):
        b1_state_radius(scalar, nonlinear, Potential.quadratic(beta=1.0), [0.0], [1.0])


def test_analysis_requires_affine_map(scalar):
    with pytest.raises(MapInvalidError, match="psi"):
        gamma1(scalar, SlidingMap.linear([[1.0]]), [0.0])


def test_indefinite_lambda_is_reported(scalar):
    smap = SlidingMap.affine_linear([[-1.0]])
    with pytest.raises(AssumptionViolatedError) as excinfo:
        gamma2(scalar, smap, [0.2])
    assert excinfo.value.witness == [0.2]


def test_tracking_gammas_use_plant_configuration():
    arm = arm_model()
    smap = SlidingMap.affine_linear(PHI_Q)
    at_plant = gamma1(arm, smap, [0.1, -0.3], q_plant=[0.0, math.pi / 2])
    assert at_plant == pytest.approx(gamma1(arm, smap, [0.0, math.pi / 2]), rel=1e-12)


def _robust_run(name):
    scn = scenario_from_entry(builtin_entry(name))
    return scn, simulate(scn)


@pytest.mark.slow
def test_matched_disturbance_keeps_sliding():
    scn, trace = _robust_run("paper_robust_matched")
    spec = scn.controller
    margins = [
        condition36_margin(
            scn.model, spec.sliding_map, spec.potential, trace.q_err[k], trace.eta_err[k],
            trace.d_um[k], trace.d_m_eff[k], q_plant=trace.q[k],
        )
        for k in range(len(trace))
    ]
    assert min(margins) > 0
    entry = trace.events["sliding_entry"]
    assert entry is not None and entry <= 1.3
    residuals = [
        b2_residual(
            scn.model, spec.sliding_map, trace.q_err[k], trace.eta_err[k],
            trace.d_um[k], tol_sigma=SLIDING_TOL, q_plant=trace.q[k],
        )
        for k in np.nonzero(trace.t >= entry)[0]
    ]
    assert all(np.isfinite(residuals))
    assert residuals[-1] < 1e-3


@pytest.mark.slow
def test_mixed_disturbance_energy_decreases_outside_b1():
    scn, trace = _robust_run("paper_robust_mixed")
    spec = scn.controller
    residual = np.array(
        [
            b1_residual(
                scn.model, spec.sliding_map, spec.potential, trace.q_err[k], trace.eta_err[k],
                np.concatenate([trace.d_um[k], trace.d_m_eff[k]]), q_plant=trace.q[k],
            )
            for k in range(len(trace))
        ]
    )
    assert np.all(np.isfinite(residual))
    margin = 0.1 * residual[0]
    assert margin > 0
    # both ends of the sample interval outside B1 plus margin
    outside = (residual[:-1] > margin) & (residual[1:] > margin)
    assert outside.sum() >= 10
    dH = np.diff(trace.H)
    tol = 1e-7 * np.maximum(1.0, trace.H[:-1])
    assert np.all(dH[outside] <= tol[outside])
    late = residual[trace.t >= trace.t[-1] - 2.0]
    assert late.mean() < residual[0]
