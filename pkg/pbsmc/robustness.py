"""
Disturbance injection and the convergence sets of the sliding-mode closed loop
under unmatched (kinematic row) and matched (momentum row) disturbances.

All set memberships are reported as signed residuals: <= 0 means inside.
Every operation accepts ``q_plant`` so the error system of a tracking run can
evaluate T at the plant configuration while psi is evaluated at q_err.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from pbsmc import potentials
from pbsmc.errors import AssumptionViolatedError, MapInvalidError, ParameterRangeError
from pbsmc.mech_ph import MechanicalModel, as_vector, cholesky_factor, plant_dynamics
from pbsmc.potentials import Potential
from pbsmc.sliding import SlidingMap, jacobians, lambda_from, psi_value

logger = logging.getLogger("Robustness")

BOUND_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class DisturbanceProfile:
    d_um: Callable[[float], np.ndarray]
    d_m: Callable[[float], np.ndarray]
    bound_um: float
    bound_m: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, dof: int) -> "DisturbanceProfile":
        z = np.zeros(dof)
        return cls(d_um=lambda t: z, d_m=lambda t: z, bound_um=0.0, bound_m=0.0, kind="zero")

    @classmethod
    def constant(cls, matched, unmatched) -> "DisturbanceProfile":
        dm = np.atleast_1d(np.asarray(matched, dtype=float))
        dum = np.atleast_1d(np.asarray(unmatched, dtype=float))
        return cls(
            d_um=lambda t: dum,
            d_m=lambda t: dm,
            bound_um=float(np.linalg.norm(dum)),
            bound_m=float(np.linalg.norm(dm)),
            kind="constant",
            params={"matched": dm.tolist(), "unmatched": dum.tolist()},
        )

    @classmethod
    def sinusoid(cls, matched, unmatched, omega: float = 1.0, phase: float = 0.0):
        """d(t) = amplitude * sin(omega t + phase), per channel."""
        dm = np.atleast_1d(np.asarray(matched, dtype=float))
        dum = np.atleast_1d(np.asarray(unmatched, dtype=float))
        return cls(
            d_um=lambda t: dum * np.sin(omega * t + phase),
            d_m=lambda t: dm * np.sin(omega * t + phase),
            bound_um=float(np.linalg.norm(dum)),
            bound_m=float(np.linalg.norm(dm)),
            kind="sinusoid",
            params={
                "matched": dm.tolist(),
                "unmatched": dum.tolist(),
                "omega": omega,
                "phase": phase,
            },
        )

    @property
    def has_unmatched(self) -> bool:
        return self.bound_um > 0

    def evaluate(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """(d_um(t), d_m(t)), checked against the declared bounds."""
        d_um = np.atleast_1d(np.asarray(self.d_um(t), dtype=float))
        d_m = np.atleast_1d(np.asarray(self.d_m(t), dtype=float))
        for value, bound, label in ((d_um, self.bound_um, "unmatched"), (d_m, self.bound_m, "matched")):
            norm = float(np.linalg.norm(value))
            if norm > bound * (1.0 + BOUND_SLACK) + BOUND_SLACK:
                logger.error(f"{label} disturbance leaves its declared bound at t={t}")
                raise ParameterRangeError(
                    f"{label} disturbance norm {norm:.6g} exceeds declared bound {bound:.6g} at t={t}"
                )
        return d_um, d_m

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def disturbed_plant_dynamics(model: MechanicalModel, q, p, u, d_um, d_m):
    """Plant dynamics with d_um added to q' and d_m added to p'."""
    qdot, pdot = plant_dynamics(model, q, p, u)
    return qdot + as_vector(d_um, model.dof, "d_um"), pdot + as_vector(d_m, model.dof, "d_m")


def effective_matched(
    T: np.ndarray, eta_d_jacobian: np.ndarray, d_um: np.ndarray, d_m: np.ndarray
) -> np.ndarray:
    """
    Matched disturbance equivalent to (d_um, d_m) in the tracking error system.

    Unmatched d_um also moves eta_d through q', adding -(d eta_d/dq) d_um to
    eta_err'; the result is d_m - T^-T (d eta_d/dq) d_um.
    """
    return d_m - solve_triangular(T, eta_d_jacobian @ d_um, lower=True, trans="T")


def _require_affine(psi_map: SlidingMap):
    if psi_map.kind != "affine_in_eta":
        raise MapInvalidError(
            f"disturbance analysis needs sigma = psi(q) + eta, got a '{psi_map.kind}' map"
        )


def _psi_terms(model, psi_map, q, q_plant):
    _require_affine(psi_map)
    q = as_vector(q, model.dof, "q")
    T = cholesky_factor(model, q if q_plant is None else q_plant)
    J_psi, J_eta = jacobians(psi_map, q, np.zeros(model.dof))
    lam = lambda_from(J_psi, J_eta, T)
    lam_min = float(np.linalg.eigvalsh(lam)[0])
    return q, T, J_psi, lam_min


def _require_positive(lam_min: float, q: np.ndarray):
    if lam_min <= 0:
        raise AssumptionViolatedError(
            f"Lambda is not positive definite at q={q.tolist()} (lambda_min {lam_min:.6g})",
            witness=q.tolist(),
            value=lam_min,
        )


def gamma1(model: MechanicalModel, psi_map: SlidingMap, q, q_plant=None) -> float:
    """4 max(lambda_max(Jpsi Jpsi^T), lambda_max(T^T T)) / lambda_min(Lambda)^2."""
    q, T, J_psi, lam_min = _psi_terms(model, psi_map, q, q_plant)
    _require_positive(lam_min, q)
    top = max(
        float(np.linalg.eigvalsh(J_psi @ J_psi.T)[-1]),
        float(np.linalg.eigvalsh(T.T @ T)[-1]),
    )
    return 4.0 * top / lam_min**2


def gamma2(model: MechanicalModel, psi_map: SlidingMap, q, q_plant=None) -> float:
    """4 lambda_max(Jpsi Jpsi^T) / lambda_min(Lambda)^2."""
    q, T, J_psi, lam_min = _psi_terms(model, psi_map, q, q_plant)
    _require_positive(lam_min, q)
    return 4.0 * float(np.linalg.eigvalsh(J_psi @ J_psi.T)[-1]) / lam_min**2


def b1_residual(
    model: MechanicalModel,
    psi_map: SlidingMap,
    potential: Potential,
    q,
    eta,
    d,
    q_plant=None,
) -> float:
    """||(grad U, grad U + eta)||^2 - gamma1 ||d||^2 with grad U taken at sigma = psi(q) + eta."""
    q = as_vector(q, model.dof, "q")
    eta = as_vector(eta, model.dof, "eta")
    g = potentials.gradient(potential, psi_value(psi_map, q) + eta)
    d = np.atleast_1d(np.asarray(d, dtype=float))
    lhs = float(g @ g) + float((g + eta) @ (g + eta))
    return lhs - gamma1(model, psi_map, q, q_plant) * float(d @ d)


def b2_residual(
    model: MechanicalModel,
    psi_map: SlidingMap,
    q,
    eta,
    d_um,
    tol_sigma: float,
    q_plant=None,
) -> float:
    """||eta||^2 - gamma2 ||d_um||^2 on the surface, +inf off it."""
    if not tol_sigma > 0:
        raise ParameterRangeError(f"tol_sigma must be positive, got {tol_sigma}")
    q = as_vector(q, model.dof, "q")
    eta = as_vector(eta, model.dof, "eta")
    if float(np.linalg.norm(psi_value(psi_map, q) + eta)) > tol_sigma:
        return float("inf")
    d_um = np.atleast_1d(np.asarray(d_um, dtype=float))
    return float(eta @ eta) - gamma2(model, psi_map, q, q_plant) * float(d_um @ d_um)


def condition36_margin(
    model: MechanicalModel,
    psi_map: SlidingMap,
    potential: Potential,
    q,
    eta,
    d_um,
    d_m,
    q_plant=None,
) -> float:
    """lambda_min(Lambda) ||grad U|| - ||Jpsi d_um + T^T d_m||; positive keeps finite-time reaching."""
    q, T, J_psi, lam_min = _psi_terms(model, psi_map, q, q_plant)
    eta = as_vector(eta, model.dof, "eta")
    g = potentials.gradient(potential, psi_value(psi_map, q) + eta)
    push = J_psi @ as_vector(d_um, model.dof, "d_um") + T.T @ as_vector(d_m, model.dof, "d_m")
    return lam_min * float(np.linalg.norm(g)) - float(np.linalg.norm(push))


def b1_state_radius(
    model: MechanicalModel,
    psi_map: SlidingMap,
    potential: Potential,
    q,
    d,
    q_plant=None,
) -> float:
    """
    Squared radius of a state ball containing B1, for U = beta/2 ||sigma||^2 and linear psi.

    With A = [[beta Phi, beta I], [beta Phi, (beta + 1) I]] the ball is
    ||(q, eta)||^2 <= gamma1 ||d||^2 / lambda_min(A^T A).
    """
    if potential.kind != "quadratic":
        raise ParameterRangeError(f"state-ball bound needs a quadratic potential, got '{potential.kind}'")
    _require_affine(psi_map)
    if not psi_map.linear_psi:
        raise MapInvalidError("state-ball bound needs a linear psi")
    m = model.dof
    beta = potential.beta
    Phi = psi_map.phi_q
    eye = np.eye(m)
    A = np.block([[beta * Phi, beta * eye], [beta * Phi, (beta + 1.0) * eye]])
    smallest = float(np.linalg.eigvalsh(A.T @ A)[0])
    if smallest <= 0:
        raise MapInvalidError("state-ball matrix is singular")
    d = np.atleast_1d(np.asarray(d, dtype=float))
    return gamma1(model, psi_map, q, q_plant) * float(d @ d) / smallest
