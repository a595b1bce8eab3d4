"""
Fixed-step simulation of closed loops with possibly discontinuous inputs.

The plant is integrated in its original (q, p) coordinates; the feedback law is
re-evaluated at every integrator stage. Sample n of a trace sits at t = n*h*stride.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from pbsmc import potentials
from pbsmc.controllers import (
    KPES,
    ControllerSpec,
    FeedbackLaw,
    damping_d_matrix,
    error_state,
    reaching_time_bound,
)
from pbsmc.errors import DivergenceError, ModelInvalidError, ParameterRangeError
from pbsmc.mech_ph import (
    as_vector,
    factor_data,
    inertia_matrix,
    momentum_to_eta,
    plant_dynamics,
)
from pbsmc.potentials import assumption2_constants
from pbsmc.robustness import DisturbanceProfile, effective_matched, gamma1, gamma2
from pbsmc.sliding import (
    BoxSpec,
    certify_uniform_pd,
    estimate_schur_constant,
    sample_box,
    sigma,
)

logger = logging.getLogger("SimEngine")

INTEGRATORS = ("rk4", "semi_implicit_euler")
DIVERGENCE_LIMIT = 1e8
SLIDING_TOL = 0.05
SLIDING_DWELL = 0.5
LYAPUNOV_REL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    controller: ControllerSpec
    q0: np.ndarray
    p0: np.ndarray
    t_final: float
    step: float = 1e-4
    integrator: str = "rk4"
    record_stride: int = 1
    disturbance: Optional[DisturbanceProfile] = None
    waive_assumptions: bool = False
    cert_box: Optional[BoxSpec] = None
    cert_samples: int = 1024
    description: str = ""

    def __post_init__(self):
        m = self.controller.model.dof
        object.__setattr__(self, "q0", as_vector(self.q0, m, "q0"))
        object.__setattr__(self, "p0", as_vector(self.p0, m, "p0"))
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ParameterRangeError(f"step must be positive, got {self.step}")
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise ParameterRangeError(f"t_final must be positive, got {self.t_final}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ParameterRangeError(f"record_stride must be an integer >= 1, got {self.record_stride}")
        if self.integrator not in INTEGRATORS:
            raise ParameterRangeError(
                f"unknown integrator '{self.integrator}', expected one of {INTEGRATORS}"
            )

    @property
    def model(self):
        return self.controller.model

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_final / self.step + 1e-9))

    @property
    def default_box(self) -> BoxSpec:
        if self.cert_box is not None:
            return self.cert_box
        return {f"q{i + 1}": [-math.pi, math.pi] for i in range(self.model.dof)}


@dataclass
class Trace:
    """
    Recorded channels, one row per sample. For tracking runs ``q_err`` and
    ``eta_err`` hold the error coordinates; otherwise they repeat q and eta.
    """

    name: str
    mode: str
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    H: np.ndarray
    U: np.ndarray
    q_err: np.ndarray
    eta_err: np.ndarray
    d_um: np.ndarray
    d_m: np.ndarray
    d_m_eff: np.ndarray
    events: Dict[str, Optional[float]] = field(default_factory=dict)
    certification: Optional["CertificationReport"] = None

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def dof(self) -> int:
        return int(self.q.shape[1])


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, h: float):
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _ClosedLoop:
    """Right-hand side of plant plus feedback (plus disturbance) in (q, p)."""

    def __init__(self, scn: Scenario):
        self.scn = scn
        self.model = scn.model
        self.law = FeedbackLaw(scn.controller)
        self.disturbance = scn.disturbance

    def disturbance_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        if self.disturbance is None:
            z = np.zeros(self.model.dof)
            return z, z
        d_um, d_m = self.disturbance.evaluate(t)
        m = self.model.dof
        return as_vector(d_um, m, "d_um"), as_vector(d_m, m, "d_m")

    def input_at(self, t: float, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.law(t, q, momentum_to_eta(self.model, q, p))

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m = self.model.dof
        return x[:m], x[m:]

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        q, p = self.split(x)
        u = self.input_at(t, q, p)
        qdot, pdot = plant_dynamics(self.model, q, p, u)
        d_um, d_m = self.disturbance_at(t)
        return np.concatenate([qdot + d_um, pdot + d_m])

    def semi_implicit_euler(self, t: float, x: np.ndarray, h: float) -> np.ndarray:
        q, p = self.split(x)
        u = self.input_at(t, q, p)
        _, pdot = plant_dynamics(self.model, q, p, u)
        d_um, d_m = self.disturbance_at(t)
        p_next = p + h * (pdot + d_m)
        qdot = np.linalg.solve(inertia_matrix(self.model, q), p_next) + d_um
        return np.concatenate([q + h * qdot, p_next])


def _observe(loop: _ClosedLoop, t: float, q: np.ndarray, p: np.ndarray) -> dict:
    spec = loop.scn.controller
    model = loop.model
    factors = factor_data(model, q)
    eta = factors.T.T @ p
    d_um, d_m = loop.disturbance_at(t)
    if spec.tracking:
        err = error_state(spec, q, eta, t, factors)
        q_err, eta_err = err.q_err, err.eta_err
        d_m_eff = effective_matched(factors.T, err.desired.jacobian, d_um, d_m)
    else:
        q_err, eta_err, d_m_eff = q, eta, d_m
    s = sigma(spec.sliding_map, q_err, eta_err)
    U = potentials.value(spec.potential, s)
    return {
        "q": q,
        "p": p,
        "eta": eta,
        "sigma": s,
        "u": loop.law(t, q, eta),
        "H": 0.5 * float(eta_err @ eta_err) + U,
        "U": U,
        "q_err": q_err,
        "eta_err": eta_err,
        "d_um": d_um,
        "d_m": d_m,
        "d_m_eff": d_m_eff,
    }


VECTOR_CHANNELS = ("q", "p", "eta", "sigma", "u", "q_err", "eta_err", "d_um", "d_m", "d_m_eff")


def simulate(scn: Scenario) -> Trace:
    """
    Integrate the closed loop of ``scn`` from t = 0 to t_final.

    Unless the scenario waives them, the sliding-mode assumptions are certified
    first and a failure aborts the run.

    Raises:
        AssumptionViolatedError: certification failed and was not waived.
        DivergenceError: the state left the finite range.
    """
    report = None
    if scn.waive_assumptions:
        logger.warning(f"[{scn.name}] assumption certification waived")
    else:
        report = certify_scenario(scn)

    loop = _ClosedLoop(scn)
    h = scn.step
    n_steps = scn.n_steps
    stride = int(scn.record_stride)
    n_samples = n_steps // stride + 1
    m = scn.model.dof

    rows: Dict[str, np.ndarray] = {name: np.empty((n_samples, m)) for name in VECTOR_CHANNELS}
    t_rec = np.empty(n_samples)
    H = np.empty(n_samples)
    U = np.empty(n_samples)

    def record(k: int, t: float, x: np.ndarray):
        obs = _observe(loop, t, *loop.split(x))
        t_rec[k] = t
        H[k] = obs["H"]
        U[k] = obs["U"]
        for name in VECTOR_CHANNELS:
            rows[name][k] = obs[name]

    logger.info(
        f"[{scn.name}] simulating {scn.controller.mode} for {scn.t_final}s, h={h}, "
        f"{scn.integrator}, {n_samples} samples"
    )
    x = np.concatenate([scn.q0, scn.p0])
    record(0, 0.0, x)
    k = 1
    for n in range(n_steps):
        t = n * h
        try:
            if scn.integrator == "rk4":
                x_next = rk4_step(loop, t, x, h)
            else:
                x_next = loop.semi_implicit_euler(t, x, h)
        except (ModelInvalidError, FloatingPointError, np.linalg.LinAlgError) as e:
            raise DivergenceError(
                f"[{scn.name}] integration failed after t={t:.6g}: {e}", last_valid_time=t
            ) from e
        if not np.all(np.isfinite(x_next)) or np.abs(x_next).max() > DIVERGENCE_LIMIT:
            logger.error(f"[{scn.name}] state diverged after t={t:.6g}")
            raise DivergenceError(f"[{scn.name}] state diverged after t={t:.6g}", last_valid_time=t)
        x = x_next
        if (n + 1) % stride == 0:
            record(k, (n + 1) * h, x)
            k += 1

    trace = Trace(name=scn.name, mode=scn.controller.mode, t=t_rec, H=H, U=U, **rows)
    trace.certification = report
    trace.events["sliding_entry"] = detect_sliding(trace, SLIDING_TOL, SLIDING_DWELL)
    logger.info(f"[{scn.name}] done, sliding entry at {trace.events['sliding_entry']}")
    return trace


def _first_window(t: np.ndarray, ok: np.ndarray, dwell: float) -> Optional[float]:
    """Earliest t[i] such that every sample in [t[i], t[i] + dwell] is ok."""
    if dwell <= 0:
        raise ParameterRangeError(f"dwell must be positive, got {dwell}")
    n = t.shape[0]
    next_bad = np.empty(n, dtype=int)
    nb = n
    for i in range(n - 1, -1, -1):
        if not ok[i]:
            nb = i
        next_bad[i] = nb
    slack = 1e-9 * max(1.0, abs(float(t[-1])))
    for i in range(n):
        if t[i] + dwell > t[-1] + slack:
            return None
        if not ok[i]:
            continue
        j = next_bad[i]
        if j == n or t[j] > t[i] + dwell + slack:
            return float(t[i])
    return None


def detect_sliding(trace: Trace, tol: float = SLIDING_TOL, dwell: float = SLIDING_DWELL):
    """Earliest time after which ||sigma||_inf <= tol for at least ``dwell`` seconds."""
    if tol <= 0:
        raise ParameterRangeError(f"tol must be positive, got {tol}")
    ok = np.abs(trace.sigma).max(axis=1) <= tol
    return _first_window(trace.t, ok, dwell)


def detect_sliding_components(
    trace: Trace, tol: float = SLIDING_TOL, dwell: float = SLIDING_DWELL
) -> List[Optional[float]]:
    if tol <= 0:
        raise ParameterRangeError(f"tol must be positive, got {tol}")
    return [_first_window(trace.t, np.abs(trace.sigma[:, i]) <= tol, dwell) for i in range(trace.dof)]


@dataclass
class TraceMetrics:
    sliding_entry_time: Optional[float]
    component_entry_times: List[Optional[float]]
    entry_gap_ratio: Optional[float]
    max_h_increase: float
    terminal_error_norm: float
    terminal_sigma_norm: float
    input_total_variation: float
    chattering_index: Optional[float]
    peak_input_norm: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "sliding_entry_time": self.sliding_entry_time,
            "component_entry_times": list(self.component_entry_times),
            "entry_gap_ratio": self.entry_gap_ratio,
            "max_h_increase": self.max_h_increase,
            "terminal_error_norm": self.terminal_error_norm,
            "terminal_sigma_norm": self.terminal_sigma_norm,
            "input_total_variation": self.input_total_variation,
            "chattering_index": self.chattering_index,
            "peak_input_norm": self.peak_input_norm,
            "samples": self.samples,
        }


def entry_gap_ratio(entries: List[Optional[float]]) -> Optional[float]:
    """(max - min) / max of component entry times; None if some component never slides."""
    if not entries or any(e is None for e in entries):
        return None
    top = max(entries)
    if top == 0:
        return 0.0
    return (top - min(entries)) / top


def chattering_index(trace: Trace, entry: Optional[float], settle: float = SLIDING_DWELL) -> Optional[float]:
    """
    Total variation of u over the confirmed sliding phase, t >= entry + settle.

    None when the trace never slides.
    """
    if entry is None:
        return None
    u = trace.u[trace.t >= entry + settle]
    if len(u) < 2:
        return 0.0
    return float(np.abs(np.diff(u, axis=0)).sum())


def metrics(trace: Trace, tol: float = SLIDING_TOL, dwell: float = SLIDING_DWELL) -> TraceMetrics:
    components = detect_sliding_components(trace, tol, dwell)
    entry = detect_sliding(trace, tol, dwell)
    dH = np.diff(trace.H)
    du = np.diff(trace.u, axis=0)
    return TraceMetrics(
        sliding_entry_time=entry,
        component_entry_times=components,
        entry_gap_ratio=entry_gap_ratio(components),
        max_h_increase=float(max(0.0, dH.max())) if dH.size else 0.0,
        terminal_error_norm=float(np.linalg.norm(trace.q_err[-1])),
        terminal_sigma_norm=float(np.linalg.norm(trace.sigma[-1])),
        input_total_variation=float(np.abs(du).sum()),
        chattering_index=chattering_index(trace, entry, dwell),
        peak_input_norm=float(np.linalg.norm(trace.u, axis=1).max()),
        samples=len(trace),
    )


def lyapunov_violations(
    trace: Trace, rel_tol: float = LYAPUNOV_REL_TOL, until: Optional[float] = None
) -> List[float]:
    """Sample times where H grows by more than rel_tol * max(1, H) over one sample."""
    H = trace.H
    increase = H[1:] - H[:-1]
    limit = rel_tol * np.maximum(1.0, H[:-1])
    bad = increase > limit
    if until is not None:
        bad &= trace.t[:-1] < until
    return trace.t[:-1][bad].tolist()


def lyapunov_window_violations(trace: Trace, window: float = 1.0, band: float = 1e-2) -> List[float]:
    """Window start times where max H over a window exceeds the previous window's max by > band."""
    edges = np.arange(trace.t[0], trace.t[-1] + 1e-12, window)
    previous = None
    bad = []
    for start in edges:
        mask = (trace.t >= start) & (trace.t < start + window)
        if not mask.any():
            continue
        peak = float(trace.H[mask].max())
        if previous is not None and peak > previous + band:
            bad.append(float(start))
        previous = peak
    return bad


@dataclass
class CertificationReport:
    """Sampled certification of a scenario; every constant is an estimate over the box."""

    scenario: str
    mode: str
    epsilon: Optional[float] = None
    epsilon_argmin: Optional[Tuple[float, ...]] = None
    n_points: int = 0
    c: Optional[float] = None
    rho: Optional[float] = None
    constants_exact: Optional[bool] = None
    a: Optional[float] = None
    U0: Optional[float] = None
    reaching_time_bound: Optional[float] = None
    gamma1_range: Optional[Tuple[float, float]] = None
    gamma2_range: Optional[Tuple[float, float]] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "epsilon_argmin": None if self.epsilon_argmin is None else list(self.epsilon_argmin),
            "n_points": self.n_points,
            "c": self.c,
            "rho": self.rho,
            "constants_exact": self.constants_exact,
            "a": self.a,
            "U0": self.U0,
            "reaching_time_bound": self.reaching_time_bound,
            "gamma1_range": None if self.gamma1_range is None else list(self.gamma1_range),
            "gamma2_range": None if self.gamma2_range is None else list(self.gamma2_range),
            "notes": list(self.notes),
        }


def _initial_energy(scn: Scenario) -> float:
    spec = scn.controller
    eta0 = momentum_to_eta(scn.model, scn.q0, scn.p0)
    if spec.tracking:
        err = error_state(spec, scn.q0, eta0, 0.0)
        return potentials.value(spec.potential, sigma(spec.sliding_map, err.q_err, err.eta_err))
    return potentials.value(spec.potential, sigma(spec.sliding_map, scn.q0, eta0))


def certify_scenario(
    scn: Scenario, box: Optional[BoxSpec] = None, n_samples: Optional[int] = None
) -> CertificationReport:
    """
    Check the assumptions behind the scenario's controller on a sampled box.

    Raises:
        AssumptionViolatedError: Lambda not positive definite somewhere, or the
            potential does not satisfy the gradient bound.
    """
    spec = scn.controller
    model = scn.model
    box = scn.default_box if box is None else box
    n_samples = scn.cert_samples if n_samples is None else n_samples
    report = CertificationReport(scenario=scn.name, mode=spec.mode)

    if spec.mode == KPES:
        damping_d_matrix(spec, scn.q0, momentum_to_eta(model, scn.q0, scn.p0))
        report.notes.append("energy shaping: D_d + D_d^T positive definite at the initial state")
        logger.info(f"[{scn.name}] KPES scenario, no sliding assumptions to certify")
        return report

    cert = certify_uniform_pd(spec.sliding_map, model, box, n_samples)
    report.epsilon = cert.epsilon
    report.epsilon_argmin = cert.argmin
    report.n_points = cert.n_points

    constants = assumption2_constants(spec.potential, model.dof)
    report.c, report.rho, report.constants_exact = constants.c, constants.rho, constants.exact
    report.a = estimate_schur_constant(spec.sliding_map, model, box, max(16, n_samples // 4))
    report.U0 = _initial_energy(scn)
    report.reaching_time_bound = reaching_time_bound(
        report.U0, report.epsilon, report.c, report.rho, report.a
    )
    if spec.potential.layer > 0:
        report.notes.append("constants refer to the unsmoothed potential")

    if spec.sliding_map.kind == "affine_in_eta":
        g1, g2 = [], []
        m = model.dof
        for point in sample_box(box, m, max(16, n_samples // 16)):
            g1.append(gamma1(model, spec.sliding_map, point[:m]))
            g2.append(gamma2(model, spec.sliding_map, point[:m]))
        report.gamma1_range = (float(min(g1)), float(max(g1)))
        report.gamma2_range = (float(min(g2)), float(max(g2)))

    logger.info(
        f"[{scn.name}] certified: eps~{report.epsilon:.6g}, c={report.c:.6g}, rho={report.rho:.6g}, "
        f"a~{report.a:.6g}, reaching bound {report.reaching_time_bound:.6g}s"
    )
    return report

