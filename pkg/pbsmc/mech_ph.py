"""
Fully-actuated mechanical port-Hamiltonian plants.

The plant is

    q' = dH0/dp,   p' = -dH0/dq - D0(q, p) dH0/dp + G0(q) u,   H0 = 1/2 p^T M(q)^-1 p

and the momentum transformation eta = T(q)^T p with T T^T = M^-1 turns it into

    q' = T(q) eta,   eta' = -D(q, eta) eta + G(q) u,   G = T^T G0

where D = T^T D0 T + (A^T - A) and A = sum_k (dT/dq_k)^T T^-T eta e_k^T T.
Only the symmetric part of D dissipates; A^T - A is the workless gyroscopic term.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from pbsmc.errors import FactorizationError, ModelInvalidError, ParameterRangeError

logger = logging.getLogger("MechPH")

SYMMETRY_TOL = 1e-12
DAMPING_PSD_TOL = 1e-10
INPUT_COND_LIMIT = 1e12
DEFAULT_FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class MechanicalModel:
    """
    Callable description of a plant.

    ``d_inertia`` returns the stack of partial derivatives dM/dq_k with shape
    (dof, dof, dof), index 0 being k. When it is absent every derivative falls
    back to central finite differences with step ``fd_step * max(1, |q_k|)``.
    ``analytic_factor`` is an optional closed-form T(q) kept for cross-checks only.
    """

    dof: int
    inertia: Callable[[np.ndarray], np.ndarray]
    damping0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    input_map0: Callable[[np.ndarray], np.ndarray]
    d_inertia: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = "custom"
    analytic_factor: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if int(self.dof) != self.dof or self.dof < 1:
            raise ModelInvalidError(f"dof must be a positive integer, got {self.dof}")
        if not (0.0 < self.fd_step < 0.1):
            raise ParameterRangeError(f"fd_step must lie in (0, 0.1), got {self.fd_step}")

    @classmethod
    def constant(
        cls,
        inertia,
        damping=None,
        input_map=None,
        name: str = "constant",
    ) -> "MechanicalModel":
        """Model with configuration-independent M, D0 and G0."""
        M = np.atleast_2d(np.asarray(inertia, dtype=float))
        dof = M.shape[0]
        D0 = np.zeros((dof, dof)) if damping is None else np.atleast_2d(np.asarray(damping, float))
        G0 = np.eye(dof) if input_map is None else np.atleast_2d(np.asarray(input_map, float))
        zeros = np.zeros((dof, dof, dof))
        return cls(
            dof=dof,
            inertia=lambda q: M,
            damping0=lambda q, p: D0,
            input_map0=lambda q: G0,
            d_inertia=lambda q: zeros,
            name=name,
        )


class FactorData(NamedTuple):
    """T(q) and its partial derivatives, evaluated once per configuration."""

    T: np.ndarray
    dT: np.ndarray


@dataclass(frozen=True, eq=False)
class TransformedState:
    q: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_momentum(cls, model: MechanicalModel, q, p) -> "TransformedState":
        q = as_vector(q, model.dof, "q")
        return cls(q=q, eta=momentum_to_eta(model, q, p))

    def momentum(self, model: MechanicalModel) -> np.ndarray:
        return eta_to_momentum(model, self.q, self.eta)


def as_vector(x, dof: int, label: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (dof,):
        raise ModelInvalidError(f"{label} has shape {arr.shape}, expected ({dof},)")
    return arr


def _square(value, dof: int, label: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.shape != (dof, dof):
        raise ModelInvalidError(f"{label} has shape {arr.shape}, expected ({dof}, {dof})")
    return arr


def _symmetric_inertia(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    M = _square(model.inertia(q), model.dof, "M(q)")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > SYMMETRY_TOL * scale:
        raise ModelInvalidError(f"inertia matrix is not symmetric at q={q.tolist()}")
    return M


def inertia_matrix(model: MechanicalModel, q) -> np.ndarray:
    """M(q), checked for symmetry and positive definiteness."""
    q = as_vector(q, model.dof, "q")
    M = _symmetric_inertia(model, q)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as e:
        lam = float(np.linalg.eigvalsh(M)[0])
        raise ModelInvalidError(
            f"inertia matrix is not positive definite at q={q.tolist()} "
            f"(min eigenvalue {lam:.3e})"
        ) from e
    return M


def damping_matrix(model: MechanicalModel, q, p) -> np.ndarray:
    D0 = _square(model.damping0(q, p), model.dof, "D0(q,p)")
    lam = float(np.linalg.eigvalsh(D0 + D0.T)[0])
    if lam < -DAMPING_PSD_TOL:
        raise ModelInvalidError(
            f"D0 + D0^T is not positive semi-definite at q={np.asarray(q).tolist()} "
            f"(min eigenvalue {lam:.3e})"
        )
    return D0


def input_matrix(model: MechanicalModel, q) -> np.ndarray:
    G0 = _square(model.input_map0(q), model.dof, "G0(q)")
    cond = np.linalg.cond(G0)
    if not np.isfinite(cond) or cond > INPUT_COND_LIMIT:
        raise ModelInvalidError(
            f"input map G0 is singular at q={np.asarray(q).tolist()} (condition number {cond:.3e})"
        )
    return G0


def hamiltonian0(model: MechanicalModel, q, p) -> float:
    q = as_vector(q, model.dof, "q")
    p = as_vector(p, model.dof, "p")
    M = _symmetric_inertia(model, q)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as e:
        lam = float(np.linalg.eigvalsh(M)[0])
        raise ModelInvalidError(
            f"inertia matrix is not positive definite at q={q.tolist()} "
            f"(min eigenvalue {lam:.3e})"
        ) from e
    y = solve_triangular(L, p, lower=True)
    return 0.5 * float(y @ y)


def cholesky_factor(model: MechanicalModel, q) -> np.ndarray:
    """
    Lower-triangular T(q) with positive diagonal and T T^T = M(q)^-1.

    M^-1 is formed from the Cholesky factor of M and then factored itself, which
    reproduces the closed-form factor published for the two-link arm.
    """
    q = as_vector(q, model.dof, "q")
    M = _symmetric_inertia(model, q)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as e:
        lam = float(np.linalg.eigvalsh(M)[0])
        raise FactorizationError(
            f"cannot factor M(q)^-1 at q={q.tolist()}: M has eigenvalue {lam:.3e}",
            eigenvalue=lam,
        ) from e
    L_inv = solve_triangular(L, np.eye(model.dof), lower=True)
    M_inv = L_inv.T @ L_inv
    M_inv = 0.5 * (M_inv + M_inv.T)
    try:
        return np.linalg.cholesky(M_inv)
    except np.linalg.LinAlgError as e:
        lam = float(np.linalg.eigvalsh(M_inv)[0])
        raise FactorizationError(
            f"cannot factor M(q)^-1 at q={q.tolist()}: eigenvalue {lam:.3e}", eigenvalue=lam
        ) from e


def fd_steps(model: MechanicalModel, q: np.ndarray) -> np.ndarray:
    """Per-coordinate central-difference half steps, after rounding to representable values."""
    h = model.fd_step * np.maximum(1.0, np.abs(q))
    actual = ((q + h) - (q - h)) / 2.0
    if np.any(actual <= 0.0) or not np.all(np.isfinite(actual)):
        raise ParameterRangeError(f"finite-difference step underflow at q={q.tolist()}")
    return actual


def _d_cholesky_from(model: MechanicalModel, q: np.ndarray, T: np.ndarray) -> np.ndarray:
    m = model.dof
    dT = np.empty((m, m, m))
    if model.d_inertia is None:
        steps = fd_steps(model, q)
        for k in range(m):
            e = np.zeros(m)
            e[k] = steps[k]
            dT[k] = (cholesky_factor(model, q + e) - cholesky_factor(model, q - e)) / (2.0 * steps[k])
        return dT

    # T T^T = P = M^-1, dP = T (Phi + Phi^T) T^T with Phi lower triangular:
    # Phi = tril(Y) - diag(Y)/2 where Y = T^-1 dP T^-T (two forward substitutions).
    dM = np.asarray(model.d_inertia(q), dtype=float)
    if dM.shape != (m, m, m):
        raise ModelInvalidError(f"d_inertia has shape {dM.shape}, expected ({m}, {m}, {m})")
    P = T @ T.T
    for k in range(m):
        dP = -P @ dM[k] @ P
        X = solve_triangular(T, dP, lower=True)
        Y = solve_triangular(T, X.T, lower=True)
        Phi = np.tril(Y) - 0.5 * np.diag(np.diag(Y))
        dT[k] = T @ Phi
    return dT


def d_cholesky(model: MechanicalModel, q) -> np.ndarray:
    """Stack of dT/dq_k, shape (dof, dof, dof) with k on axis 0."""
    q = as_vector(q, model.dof, "q")
    return _d_cholesky_from(model, q, cholesky_factor(model, q))


def factor_data(model: MechanicalModel, q) -> FactorData:
    q = as_vector(q, model.dof, "q")
    T = cholesky_factor(model, q)
    return FactorData(T=T, dT=_d_cholesky_from(model, q, T))


def momentum_to_eta(model: MechanicalModel, q, p) -> np.ndarray:
    p = as_vector(p, model.dof, "p")
    return cholesky_factor(model, q).T @ p


def eta_to_momentum(model: MechanicalModel, q, eta) -> np.ndarray:
    eta = as_vector(eta, model.dof, "eta")
    T = cholesky_factor(model, q)
    return solve_triangular(T, eta, lower=True, trans="T")


def gyroscopic_matrix(factors: FactorData, p: np.ndarray) -> np.ndarray:
    """A = sum_k (dT/dq_k)^T p e_k^T T; the gyroscopic term of D is A^T - A."""
    v = np.einsum("kij,i->kj", factors.dT, p)
    return v.T @ factors.T


def transformed_damping(
    model: MechanicalModel, q, eta, factors: Optional[FactorData] = None
) -> np.ndarray:
    q = as_vector(q, model.dof, "q")
    eta = as_vector(eta, model.dof, "eta")
    if factors is None:
        factors = factor_data(model, q)
    T = factors.T
    p = solve_triangular(T, eta, lower=True, trans="T")
    D0 = damping_matrix(model, q, p)
    A = gyroscopic_matrix(factors, p)
    return T.T @ D0 @ T + (A.T - A)


def transformed_input_map(model: MechanicalModel, q, T: Optional[np.ndarray] = None) -> np.ndarray:
    """G(q) = T(q)^T G0(q)."""
    if T is None:
        T = cholesky_factor(model, q)
    return T.T @ input_matrix(model, q)


def _hamiltonian0_gradient_q(
    model: MechanicalModel, q: np.ndarray, p: np.ndarray, qdot: np.ndarray
) -> np.ndarray:
    if model.d_inertia is not None:
        # d/dq_k (1/2 p^T M^-1 p) = -1/2 (M^-1 p)^T dM_k (M^-1 p)
        dM = np.asarray(model.d_inertia(q), dtype=float)
        return -0.5 * np.einsum("i,kij,j->k", qdot, dM, qdot)
    steps = fd_steps(model, q)
    grad = np.empty(model.dof)
    for k in range(model.dof):
        e = np.zeros(model.dof)
        e[k] = steps[k]
        grad[k] = (hamiltonian0(model, q + e, p) - hamiltonian0(model, q - e, p)) / (2.0 * steps[k])
    return grad


def plant_dynamics(model: MechanicalModel, q, p, u) -> Tuple[np.ndarray, np.ndarray]:
    """(q', p') of the plant in its original coordinates."""
    q = as_vector(q, model.dof, "q")
    p = as_vector(p, model.dof, "p")
    u = as_vector(u, model.dof, "u")
    M = inertia_matrix(model, q)
    qdot = np.linalg.solve(M, p)
    grad_q = _hamiltonian0_gradient_q(model, q, p, qdot)
    D0 = damping_matrix(model, q, p)
    G0 = input_matrix(model, q)
    pdot = -grad_q - D0 @ qdot + G0 @ u
    return qdot, pdot


def transformed_dynamics(model: MechanicalModel, q, eta, u) -> Tuple[np.ndarray, np.ndarray]:
    """(q', eta') in transformed coordinates."""
    q = as_vector(q, model.dof, "q")
    eta = as_vector(eta, model.dof, "eta")
    u = as_vector(u, model.dof, "u")
    factors = factor_data(model, q)
    D = transformed_damping(model, q, eta, factors)
    G = transformed_input_map(model, q, factors.T)
    return factors.T @ eta, -D @ eta + G @ u
