import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pbsmc.bench.scenarios import builtin_entry, merge_entry, scenario_from_entry
from pbsmc.engine import (
    Scenario,
    Trace,
    certify_scenario,
    chattering_index,
    detect_sliding,
    detect_sliding_components,
    entry_gap_ratio,
    lyapunov_violations,
    lyapunov_window_violations,
    metrics,
    rk4_step,
    simulate,
)
from pbsmc.errors import AssumptionViolatedError, DivergenceError, ParameterRangeError

ARM_EPSILON = (2 * math.sqrt(3) / math.sqrt(7)) * (2 + math.sqrt(7) - math.sqrt(20 - 4 * math.sqrt(7)))


def scenario(name, **overrides):
    return scenario_from_entry(merge_entry(builtin_entry(name), overrides))


def synthetic_trace(t, sigma, H=None):
    t = np.asarray(t, dtype=float)
    sigma = np.asarray(sigma, dtype=float).reshape(len(t), -1)
    zeros = np.zeros_like(sigma)
    H = np.zeros(len(t)) if H is None else np.asarray(H, dtype=float)
    return Trace(
        name="synthetic",
        mode="pbsmc_stabilize",
        t=t,
        q=zeros,
        p=zeros,
        eta=zeros,
        sigma=sigma,
        u=zeros,
        H=H,
        U=H,
        q_err=zeros,
        eta_err=zeros,
        d_um=zeros,
        d_m=zeros,
        d_m_eff=zeros,
    )


@pytest.fixture(scope="module")
def scalar_run():
    return simulate(scenario("scalar_toy"))


def test_rk4_is_fourth_order():
    def f(t, x):
        return -x

    def error(h):
        x = np.array([1.0])
        for n in range(int(round(1.0 / h))):
            x = rk4_step(f, n * h, x, h)
        return abs(x[0] - math.exp(-1.0))

    assert error(0.1) / error(0.05) > 8.0


def test_rk4_step_halving_on_smooth_arm_loop():
    def final_state(step):
        trace = simulate(
            scenario(
                "arm_regulate",
                potential={"kind": "quadratic", "beta": 2.0},
                waive_assumptions=True,
                simulation={"t_final": 0.8, "step": step, "record_stride": 1},
            )
        )
        return np.concatenate([trace.q[-1], trace.p[-1]])

    coarse, mid, fine = (final_state(h) for h in (4e-3, 2e-3, 1e-3))
    ratio = np.linalg.norm(coarse - mid) / np.linalg.norm(mid - fine)
    assert 12.0 < ratio < 20.0


def test_scalar_run_records_every_step(scalar_run):
    assert len(scalar_run) == 3001
    assert scalar_run.t[-1] == pytest.approx(3.0)
    assert scalar_run.t[1] == pytest.approx(1e-3)
    assert scalar_run.dof == 1


def test_scalar_run_reaches_surface_within_bound(scalar_run):
    report = scalar_run.certification
    assert report.epsilon == pytest.approx(2.0, abs=1e-12)
    assert report.c == 2.0 and report.rho == 0.0
    assert report.U0 == pytest.approx(2.0)
    assert report.reaching_time_bound == pytest.approx(0.25)
    entry = scalar_run.events["sliding_entry"]
    assert entry is not None
    assert entry <= report.reaching_time_bound + 1e-3


def test_scalar_energy_decreases_while_reaching(scalar_run):
    entry = scalar_run.events["sliding_entry"]
    assert lyapunov_violations(scalar_run, until=entry) == []
    assert scalar_run.H[-1] < 0.05 * scalar_run.H[0]


def test_scalar_state_converges(scalar_run):
    summary = metrics(scalar_run)
    assert summary.terminal_error_norm < 0.1
    assert summary.terminal_sigma_norm < 0.05
    assert summary.samples == 3001


def test_boundary_layer_removes_chattering():
    sharp = simulate(scenario("scalar_toy", simulation={"integrator": "semi_implicit_euler"}))
    smooth = simulate(
        scenario(
            "scalar_toy",
            simulation={"integrator": "semi_implicit_euler"},
            potential={"smoothing_eps": 0.05},
        )
    )
    assert metrics(sharp).input_total_variation > 3.0 * metrics(smooth).input_total_variation
    assert smooth.events["sliding_entry"] is not None


def test_chattering_index_counts_only_the_sliding_phase():
    t = np.arange(0, 301) * 0.01
    trace = synthetic_trace(t, np.zeros(301))
    u = np.where(t < 1.0, 10.0 * t, np.where(np.arange(301) % 2 == 0, 0.5, -0.5))
    trace.u = u.reshape(-1, 1)
    # samples 148..300 alternate between +-0.5
    assert chattering_index(trace, 0.975, settle=0.5) == pytest.approx(152.0)
    assert chattering_index(trace, None) is None
    assert chattering_index(trace, 2.99, settle=0.5) == 0.0
    assert metrics(trace).input_total_variation > chattering_index(trace, 0.975, settle=0.0)


def test_record_stride():
    trace = simulate(scenario("scalar_toy", simulation={"t_final": 0.1, "record_stride": 10}))
    assert len(trace) == 11
    assert_allclose(trace.t, np.linspace(0.0, 0.1, 11), atol=1e-12)


def test_simulation_is_deterministic():
    a = simulate(scenario("scalar_toy", simulation={"t_final": 0.5}))
    b = simulate(scenario("scalar_toy", simulation={"t_final": 0.5}))
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.u, b.u)


def test_indefinite_scenario_fails_certification():
    with pytest.raises(AssumptionViolatedError):
        simulate(scenario("scalar_indefinite"))


def test_waived_scenario_runs_without_report():
    trace = simulate(scenario("scalar_indefinite", waive_assumptions=True, simulation={"t_final": 0.2}))
    assert trace.certification is None
    assert len(trace) == 201


def test_divergence_is_detected():
    scn = scenario(
        "scalar_toy",
        disturbance={"kind": "constant", "matched": [0.0], "unmatched": [1.0e10]},
    )
    with pytest.raises(DivergenceError) as excinfo:
        simulate(scn)
    assert 0.0 <= excinfo.value.last_valid_time < 0.1


def test_scenario_validation():
    controller = scenario("scalar_toy").controller
    with pytest.raises(ParameterRangeError, match="step"):
        Scenario(name="bad", controller=controller, q0=[0.0], p0=[0.0], t_final=1.0, step=-1.0)
    with pytest.raises(ParameterRangeError, match="integrator"):
        Scenario(name="bad", controller=controller, q0=[0.0], p0=[0.0], t_final=1.0, integrator="euler")
    with pytest.raises(ParameterRangeError, match="record_stride"):
        Scenario(name="bad", controller=controller, q0=[0.0], p0=[0.0], t_final=1.0, record_stride=0)
    assert Scenario(name="ok", controller=controller, q0=[0.0], p0=[0.0], t_final=1.0, step=0.1).n_steps == 10


def test_detect_sliding_on_synthetic_trace():
    t = np.arange(0, 201) * 0.01
    sigma = np.where(t < 0.7, 1.0, 0.01)
    trace = synthetic_trace(t, sigma)
    assert detect_sliding(trace) == pytest.approx(0.7)
    assert detect_sliding(trace, dwell=1.5) is None
    with pytest.raises(ParameterRangeError):
        detect_sliding(trace, tol=0.0)


def test_brief_visits_do_not_count():
    t = np.arange(0, 201) * 0.01
    sigma = np.where((t > 0.2) & (t < 0.4), 0.0, 1.0)
    sigma[t >= 1.0] = 0.0
    assert detect_sliding(synthetic_trace(t, sigma)) == pytest.approx(1.0)


def test_component_entry_times_and_gap():
    t = np.arange(0, 301) * 0.01
    sigma = np.column_stack([np.where(t < 0.5, 1.0, 0.0), np.where(t < 1.0, 1.0, 0.0)])
    entries = detect_sliding_components(synthetic_trace(t, sigma))
    assert entries == [pytest.approx(0.5), pytest.approx(1.0)]
    assert entry_gap_ratio(entries) == pytest.approx(0.5)
    assert entry_gap_ratio([1.0, None]) is None
    assert entry_gap_ratio([0.0, 0.0]) == 0.0


def test_lyapunov_checks():
    t = np.arange(0, 5) * 1.0
    H = np.array([4.0, 3.0, 3.5, 2.0, 2.0])
    trace = synthetic_trace(t, np.zeros(5), H)
    assert lyapunov_violations(trace) == [1.0]
    assert lyapunov_violations(trace, until=1.0) == []
    t = np.arange(0, 400) * 0.01
    H = np.exp(-t) + 0.005 * np.sin(50 * t)
    assert lyapunov_window_violations(synthetic_trace(t, np.zeros(400), H)) == []
    H[250] = 5.0
    assert lyapunov_window_violations(synthetic_trace(t, np.zeros(400), H)) == [2.0]


def test_certify_arm_regulation():
    report = certify_scenario(scenario("arm_regulate"))
    assert report.epsilon == pytest.approx(ARM_EPSILON, rel=1e-2)
    assert report.constants_exact
    assert report.a >= 1.0
    assert report.U0 == pytest.approx(2.0)
    assert report.reaching_time_bound > 0
    assert report.gamma1_range is None


def test_certify_robust_scenario_reports_gamma_ranges():
    report = certify_scenario(scenario("paper_robust_matched"), n_samples=256)
    lo, hi = report.gamma1_range
    assert 0 < lo <= hi
    assert report.gamma2_range[0] <= report.gamma1_range[0] + 1e-12


def test_arm_regulation_slides_and_dissipates():
    trace = simulate(scenario("arm_regulate", simulation={"t_final": 2.0, "step": 1.0e-3}))
    entry = trace.events["sliding_entry"]
    assert entry is not None
    assert entry <= 1.3
    assert lyapunov_violations(trace, until=entry) == []
    assert trace.H[-1] < trace.H[0]


def test_tracking_run_reaches_surface():
    trace = simulate(
        scenario("paper_l1", simulation={"t_final": 2.0, "step": 5.0e-4, "record_stride": 2})
    )
    entry = trace.events["sliding_entry"]
    assert entry is not None
    assert entry <= min(1.3, trace.certification.reaching_time_bound)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["paper_l2_r13", "paper_l1"])
def test_paper_tracking_scenarios(name):
    trace = simulate(scenario(name))
    summary = metrics(trace)
    entry = summary.sliding_entry_time
    # measured: 0.117 s for paper_l1, 0.114 s for paper_l2_r13
    assert entry is not None and entry <= 0.2
    if name == "paper_l1":
        assert entry <= trace.certification.reaching_time_bound
    assert summary.terminal_error_norm < 1e-2
    assert lyapunov_violations(trace, until=entry) == []
    assert lyapunov_window_violations(trace) == []


@pytest.mark.slow
def test_paper_entry_simultaneity():
    smooth = metrics(simulate(scenario("paper_l2_r13")))
    sharp = metrics(simulate(scenario("paper_l1")))
    assert smooth.entry_gap_ratio < 0.1
    assert sharp.entry_gap_ratio > 0.1


@pytest.mark.slow
def test_paper_chattering_ordering():
    every_step = {"record_stride": 1}
    sharp = simulate(scenario("paper_l1", simulation=every_step))
    smooth = simulate(scenario("paper_l2_r13", simulation=every_step))
    layered = simulate(scenario("paper_l1", simulation=every_step, potential={"smoothing_eps": 0.05}))
    sharp_index = metrics(sharp).chattering_index
    assert sharp_index >= 3.0 * metrics(smooth).chattering_index
    assert sharp_index >= 3.0 * metrics(layered).chattering_index
    assert lyapunov_violations(layered) == []
