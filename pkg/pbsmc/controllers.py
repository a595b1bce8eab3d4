"""
Feedback laws for the transformed plant q' = T eta, eta' = -D eta + G u.

    kpes             generalized kinetic-potential energy shaping
    pbsmc_stabilize  passivity-based sliding-mode stabilization of the origin
    pbsmc_track      the same law on the tracking error system

Every law needs only the product D(q, eta) eta or the matrix D itself, both
taken from mech_ph.transformed_damping.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from pbsmc import potentials
from pbsmc.errors import ModelInvalidError, ParameterRangeError, TrajectoryError
from pbsmc.mech_ph import (
    FactorData,
    MechanicalModel,
    as_vector,
    factor_data,
    transformed_damping,
    transformed_input_map,
)
from pbsmc.potentials import Potential
from pbsmc.sliding import SlidingMap, jacobians, lambda_from, sigma

logger = logging.getLogger("Controllers")

KPES = "kpes"
PBSMC_STABILIZE = "pbsmc_stabilize"
PBSMC_TRACK = "pbsmc_track"
MODES = (KPES, PBSMC_STABILIZE, PBSMC_TRACK)

DAMPING_PD_TOL = 0.0


@dataclass(frozen=True, eq=False)
class DesiredTrajectory:
    """q_d(t) with its first two time derivatives."""

    q_d: Callable[[float], np.ndarray]
    qdot_d: Callable[[float], np.ndarray]
    qddot_d: Callable[[float], np.ndarray]
    name: str = "custom"

    @classmethod
    def stationary(cls, q_ref, name: str = "stationary") -> "DesiredTrajectory":
        q_ref = np.atleast_1d(np.asarray(q_ref, dtype=float))
        zero = np.zeros_like(q_ref)
        return cls(q_d=lambda t: q_ref, qdot_d=lambda t: zero, qddot_d=lambda t: zero, name=name)

    def evaluate(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        try:
            values = tuple(
                np.atleast_1d(np.asarray(f(t), dtype=float))
                for f in (self.q_d, self.qdot_d, self.qddot_d)
            )
        except TrajectoryError:
            raise
        except (ValueError, ArithmeticError) as e:
            raise TrajectoryError(f"trajectory '{self.name}' failed at t={t}: {e}") from e
        for v in values:
            if not np.all(np.isfinite(v)):
                raise TrajectoryError(f"trajectory '{self.name}' is not finite at t={t}")
        return values


def constant_damping(gain: float, dof: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """D_d = gain * I."""
    if not gain > 0:
        raise ParameterRangeError(f"damping_d gain must be positive, got {gain}")
    Dd = gain * np.eye(dof)
    return lambda q, eta: Dd


@dataclass(frozen=True, eq=False)
class ControllerSpec:
    mode: str
    model: MechanicalModel
    sliding_map: SlidingMap
    potential: Potential
    damping_d: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    trajectory: Optional[DesiredTrajectory] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterRangeError(f"unknown controller mode '{self.mode}', expected one of {MODES}")
        if self.sliding_map.dof != self.model.dof:
            raise ModelInvalidError(
                f"sliding map has {self.sliding_map.dof} components but the model has "
                f"{self.model.dof} degrees of freedom"
            )
        if self.mode == PBSMC_TRACK and self.trajectory is None:
            raise ParameterRangeError("pbsmc_track mode requires a desired trajectory")
        if self.mode == KPES:
            if self.damping_d is None:
                object.__setattr__(self, "damping_d", constant_damping(1.0, self.model.dof))
            if not self.potential.is_smooth:
                logger.warning(
                    f"KPES shaping expects a smooth potential, got {self.potential.describe()}; "
                    f"continuing"
                )

    @property
    def tracking(self) -> bool:
        return self.mode == PBSMC_TRACK


class PlantTerms(NamedTuple):
    """Per-state quantities shared by every law."""

    factors: FactorData
    D: np.ndarray
    G: np.ndarray


def plant_terms(spec: ControllerSpec, q: np.ndarray, eta: np.ndarray) -> PlantTerms:
    factors = factor_data(spec.model, q)
    D = transformed_damping(spec.model, q, eta, factors)
    G = transformed_input_map(spec.model, q, factors.T)
    return PlantTerms(factors=factors, D=D, G=G)


def damping_d_matrix(spec: ControllerSpec, q: np.ndarray, eta: np.ndarray) -> np.ndarray:
    m = spec.model.dof
    Dd = np.atleast_2d(np.asarray(spec.damping_d(q, eta), dtype=float))
    if Dd.shape != (m, m):
        raise ModelInvalidError(f"D_d has shape {Dd.shape}, expected ({m}, {m})")
    lam = float(np.linalg.eigvalsh(Dd + Dd.T)[0])
    if lam <= DAMPING_PD_TOL:
        raise ParameterRangeError(
            f"D_d + D_d^T must be positive definite, min eigenvalue {lam:.3e} at q={q.tolist()}"
        )
    return Dd


def _state(spec: ControllerSpec, q, eta) -> Tuple[np.ndarray, np.ndarray]:
    m = spec.model.dof
    return as_vector(q, m, "q"), as_vector(eta, m, "eta")


def kpes_feedback(spec: ControllerSpec, q, eta) -> np.ndarray:
    """u = -G^-1 {(D_d - D) eta + (T^T (dphi/dq)^T + D_d (dphi/deta)^T) grad U}."""
    q, eta = _state(spec, q, eta)
    terms = plant_terms(spec, q, eta)
    T = terms.factors.T
    Jq, Je = jacobians(spec.sliding_map, q, eta)
    grad_u = potentials.gradient(spec.potential, sigma(spec.sliding_map, q, eta))
    Dd = damping_d_matrix(spec, q, eta)
    rhs = (Dd - terms.D) @ eta + (T.T @ Jq.T + Dd @ Je.T) @ grad_u
    return -np.linalg.solve(terms.G, rhs)


def _reaching_input(
    Jq: np.ndarray, Je: np.ndarray, T: np.ndarray, D: np.ndarray, eta: np.ndarray, grad_u
) -> np.ndarray:
    # -Je^-1 Lambda grad U + D eta - Je^-1 Jq T eta
    lam = lambda_from(Jq, Je, T)
    return -np.linalg.solve(Je, lam @ grad_u + Jq @ (T @ eta)) + D @ eta


def pbsmc_feedback(spec: ControllerSpec, q, eta) -> np.ndarray:
    """Closed loop gives sigma' = -Lambda grad U."""
    q, eta = _state(spec, q, eta)
    terms = plant_terms(spec, q, eta)
    Jq, Je = jacobians(spec.sliding_map, q, eta)
    grad_u = potentials.gradient(spec.potential, sigma(spec.sliding_map, q, eta))
    return np.linalg.solve(terms.G, _reaching_input(Jq, Je, terms.factors.T, terms.D, eta, grad_u))


class DesiredMomentum(NamedTuple):
    eta_d: np.ndarray
    jacobian: np.ndarray  # column k is d eta_d / d q_k


def desired_momentum(
    spec: ControllerSpec, q, t: float, factors: Optional[FactorData] = None
) -> DesiredMomentum:
    """eta_d = T(q)^-1 qdot_d(t) and its configuration Jacobian."""
    if spec.trajectory is None:
        raise ParameterRangeError("desired momentum needs a trajectory")
    q = as_vector(q, spec.model.dof, "q")
    if factors is None:
        factors = factor_data(spec.model, q)
    _, qdot_d, _ = spec.trajectory.evaluate(t)
    return _desired_momentum(factors, as_vector(qdot_d, spec.model.dof, "qdot_d"))


def _desired_momentum(factors: FactorData, qdot_d: np.ndarray) -> DesiredMomentum:
    T = factors.T
    eta_d = solve_triangular(T, qdot_d, lower=True)
    # d(T^-1)/dq_k = -T^-1 (dT/dq_k) T^-1
    cols = np.einsum("kij,j->ik", factors.dT, eta_d)
    jac = -solve_triangular(T, cols, lower=True)
    return DesiredMomentum(eta_d=eta_d, jacobian=jac)


class ErrorState(NamedTuple):
    q_err: np.ndarray
    eta_err: np.ndarray
    desired: DesiredMomentum
    qddot_d: np.ndarray


def error_state(
    spec: ControllerSpec, q, eta, t: float, factors: Optional[FactorData] = None
) -> ErrorState:
    """(q - q_d(t), eta - eta_d(q, t)) with the desired momentum it was built from."""
    q, eta = _state(spec, q, eta)
    if factors is None:
        factors = factor_data(spec.model, q)
    q_d, qdot_d, qddot_d = spec.trajectory.evaluate(t)
    m = spec.model.dof
    desired = _desired_momentum(factors, as_vector(qdot_d, m, "qdot_d"))
    return ErrorState(
        q_err=q - as_vector(q_d, m, "q_d"),
        eta_err=eta - desired.eta_d,
        desired=desired,
        qddot_d=as_vector(qddot_d, m, "qddot_d"),
    )


def _feedforward(terms: PlantTerms, eta: np.ndarray, err: ErrorState) -> np.ndarray:
    T = terms.factors.T
    return (
        terms.D @ err.desired.eta_d
        + err.desired.jacobian @ (T @ eta)
        + solve_triangular(T, err.qddot_d, lower=True)
    )


def tracking_prefeedback(spec: ControllerSpec, q, eta, t: float, v) -> np.ndarray:
    """
    u = G^-1 (D eta_d + (d eta_d/dq) T eta + T^-1 qddot_d + v).

    Leaves the error system q_err' = T eta_err, eta_err' = -D eta_err + v.
    """
    q, eta = _state(spec, q, eta)
    v = as_vector(v, spec.model.dof, "v")
    terms = plant_terms(spec, q, eta)
    err = error_state(spec, q, eta, t, terms.factors)
    return np.linalg.solve(terms.G, _feedforward(terms, eta, err) + v)


def tracking_pbsmc(spec: ControllerSpec, q, eta, t: float) -> np.ndarray:
    q, eta = _state(spec, q, eta)
    terms = plant_terms(spec, q, eta)
    err = error_state(spec, q, eta, t, terms.factors)
    Jq, Je = jacobians(spec.sliding_map, err.q_err, err.eta_err)
    grad_u = potentials.gradient(spec.potential, sigma(spec.sliding_map, err.q_err, err.eta_err))
    v = _reaching_input(Jq, Je, terms.factors.T, terms.D, err.eta_err, grad_u)
    return np.linalg.solve(terms.G, _feedforward(terms, eta, err) + v)


def reaching_time_bound(U0: float, eps: float, c: float, rho: float, a: float = 1.0) -> float:
    """
    Upper bound a^2 U0^(1-2 rho) / (eps c^2) on the time to reach sigma = 0.

    Raises:
        ParameterRangeError: eps or c not positive, rho outside [0, 1/2), a < 1 or U0 < 0.
    """
    if not eps > 0:
        raise ParameterRangeError(f"eps must be positive, got {eps}")
    if not c > 0:
        raise ParameterRangeError(f"c must be positive, got {c}")
    if not 0.0 <= rho < 0.5:
        raise ParameterRangeError(f"rho must lie in [0, 1/2), got {rho}")
    if not a >= 1.0:
        raise ParameterRangeError(f"a must be >= 1, got {a}")
    if not U0 >= 0:
        raise ParameterRangeError(f"U0 must be >= 0, got {U0}")
    return a * a * U0 ** (1.0 - 2.0 * rho) / (eps * c * c)


def sliding_coordinates(
    spec: ControllerSpec, q, eta, t: float = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """(q, eta) for stabilizing laws, (q_err, eta_err) when tracking."""
    q, eta = _state(spec, q, eta)
    if spec.tracking:
        err = error_state(spec, q, eta, t)
        return err.q_err, err.eta_err
    return q, eta


def closed_loop_energy(spec: ControllerSpec, q, eta, t: float = 0.0) -> float:
    """H = 1/2 ||eta||^2 + U(phi(q, eta)), in error coordinates when tracking."""
    qs, es = sliding_coordinates(spec, q, eta, t)
    return 0.5 * float(es @ es) + potentials.value(spec.potential, sigma(spec.sliding_map, qs, es))


def closed_loop_field(spec: ControllerSpec, q, eta, t: float = 0.0):
    """
    Closed loop evaluated in its structured form x' = J(x) grad H.

    The structure matrix is [[-T Je^T Jq^-T, T], [-T^T, R]] with R = -D_d for
    KPES and R = -Je^-1 Jq T for the sliding laws. Returns (q', eta') or, when
    tracking, (q_err', eta_err') at plant configuration q.
    """
    q, eta = _state(spec, q, eta)
    factors = factor_data(spec.model, q)
    T = factors.T
    qs, es = sliding_coordinates(spec, q, eta, t)
    Jq, Je = jacobians(spec.sliding_map, qs, es)
    grad_u = potentials.gradient(spec.potential, sigma(spec.sliding_map, qs, es))
    grad_q = Jq.T @ grad_u
    grad_eta = es + Je.T @ grad_u
    upper_left = -T @ Je.T @ np.linalg.inv(Jq.T)
    if spec.mode == KPES:
        R = -damping_d_matrix(spec, q, eta)
    else:
        R = -np.linalg.solve(Je, Jq @ T)
    return upper_left @ grad_q + T @ grad_eta, -T.T @ grad_q + R @ grad_eta


class FeedbackLaw:
    """Callable u(t, q, eta) for one controller spec."""

    def __init__(self, spec: ControllerSpec):
        self.spec = spec
        self._law = {
            KPES: lambda t, q, eta: kpes_feedback(spec, q, eta),
            PBSMC_STABILIZE: lambda t, q, eta: pbsmc_feedback(spec, q, eta),
            PBSMC_TRACK: lambda t, q, eta: tracking_pbsmc(spec, q, eta, t),
        }[spec.mode]
        logger.debug(f"Feedback law ready: {spec.mode} with {spec.potential.describe()}")

    def __call__(self, t: float, q, eta) -> np.ndarray:
        return self._law(t, q, eta)

    def energy(self, t: float, q, eta) -> float:
        return closed_loop_energy(self.spec, q, eta, t)

    def sliding_variable(self, t: float, q, eta) -> np.ndarray:
        qs, es = sliding_coordinates(self.spec, q, eta, t)
        return sigma(self.spec.sliding_map, qs, es)
