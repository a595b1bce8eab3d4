"""
Sliding variables sigma = phi(q, eta), their Jacobians and the Lambda matrix

    Lambda = (dphi/dq) T (dphi/deta)^T + (dphi/deta) T^T (dphi/dq)^T

whose uniform positive definiteness drives sigma to zero in finite time.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import qmc

from pbsmc.errors import AssumptionViolatedError, MapInvalidError, ParameterRangeError
from pbsmc.mech_ph import MechanicalModel, as_vector, cholesky_factor

logger = logging.getLogger("Sliding")

KINDS = ("linear", "affine_in_eta", "custom")
JACOBIAN_COND_LIMIT = 1e12
ORIGIN_TOL = 1e-12
FD_STEP = 1e-6

BoxSpec = Union[Mapping[str, Sequence[float]], Sequence[Sequence[float]]]


@dataclass(frozen=True, eq=False)
class SlidingMap:
    """
    linear         sigma = Phi_q q + Phi_eta eta
    affine_in_eta  sigma = psi(q) + eta
    custom         sigma = func(q, eta) with user Jacobians
    """

    kind: str
    dof: int
    phi_q: Optional[np.ndarray] = None
    phi_eta: Optional[np.ndarray] = None
    psi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    psi_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    func: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    jac_q: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    jac_eta: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MapInvalidError(f"unknown sliding map kind '{self.kind}', expected one of {KINDS}")
        zero = np.zeros(self.dof)
        if self.kind == "linear":
            _check_jacobian(self.phi_q, self.dof, "Phi_q")
            _check_jacobian(self.phi_eta, self.dof, "Phi_eta")
        elif self.kind == "affine_in_eta":
            if self.psi is None:
                raise MapInvalidError("affine_in_eta map needs psi")
            if np.abs(np.asarray(self.psi(zero), dtype=float)).max() > ORIGIN_TOL:
                raise MapInvalidError("psi(0) must be 0")
        else:
            if self.func is None or self.jac_q is None or self.jac_eta is None:
                raise MapInvalidError("custom sliding map needs func, jac_q and jac_eta")
            if np.abs(np.asarray(self.func(zero, zero), dtype=float)).max() > ORIGIN_TOL:
                raise MapInvalidError("phi(0, 0) must be 0")

    @classmethod
    def linear(cls, phi_q, phi_eta=None) -> "SlidingMap":
        phi_q = np.atleast_2d(np.asarray(phi_q, dtype=float))
        dof = phi_q.shape[0]
        phi_eta = np.eye(dof) if phi_eta is None else np.atleast_2d(np.asarray(phi_eta, float))
        return cls(kind="linear", dof=dof, phi_q=phi_q, phi_eta=phi_eta)

    @classmethod
    def affine(cls, psi, dof: int, psi_jacobian=None) -> "SlidingMap":
        return cls(kind="affine_in_eta", dof=dof, psi=psi, psi_jacobian=psi_jacobian)

    @classmethod
    def affine_linear(cls, phi_q) -> "SlidingMap":
        """sigma = Phi_q q + eta, in the affine form used by the disturbance analysis."""
        phi_q = np.atleast_2d(np.asarray(phi_q, dtype=float))
        return cls(
            kind="affine_in_eta",
            dof=phi_q.shape[0],
            phi_q=phi_q,
            psi=lambda q: phi_q @ q,
            psi_jacobian=lambda q: phi_q,
        )

    @classmethod
    def custom(cls, func, jac_q, jac_eta, dof: int) -> "SlidingMap":
        return cls(kind="custom", dof=dof, func=func, jac_q=jac_q, jac_eta=jac_eta)

    @property
    def linear_psi(self) -> bool:
        return self.kind == "affine_in_eta" and self.phi_q is not None

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {
                "kind": "linear",
                "phi_q": self.phi_q.tolist(),
                "phi_eta": self.phi_eta.tolist(),
            }
        if self.linear_psi:
            return {"kind": "affine_in_eta", "phi_q": self.phi_q.tolist()}
        return {"kind": self.kind}


def _check_jacobian(J, dof: int, label: str) -> np.ndarray:
    if J is None:
        raise MapInvalidError(f"{label} is missing")
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if J.shape != (dof, dof):
        raise MapInvalidError(f"{label} has shape {J.shape}, expected ({dof}, {dof})")
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond >= JACOBIAN_COND_LIMIT:
        raise MapInvalidError(f"{label} is singular (condition number {cond:.3e})")
    return J


def psi_value(smap: SlidingMap, q) -> np.ndarray:
    if smap.kind != "affine_in_eta":
        raise MapInvalidError(f"psi is only defined for affine_in_eta maps, not '{smap.kind}'")
    q = as_vector(q, smap.dof, "q")
    return np.asarray(smap.psi(q), dtype=float)


def psi_jacobian(smap: SlidingMap, q) -> np.ndarray:
    """d psi / dq, without the nonsingularity check."""
    q = as_vector(q, smap.dof, "q")
    if smap.kind != "affine_in_eta":
        raise MapInvalidError(f"psi is only defined for affine_in_eta maps, not '{smap.kind}'")
    if smap.psi_jacobian is not None:
        return np.atleast_2d(np.asarray(smap.psi_jacobian(q), dtype=float))
    J = np.empty((smap.dof, smap.dof))
    for k in range(smap.dof):
        h = FD_STEP * max(1.0, abs(q[k]))
        e = np.zeros(smap.dof)
        e[k] = h
        J[:, k] = (psi_value(smap, q + e) - psi_value(smap, q - e)) / (2.0 * h)
    return J


def sigma(smap: SlidingMap, q, eta) -> np.ndarray:
    q = as_vector(q, smap.dof, "q")
    eta = as_vector(eta, smap.dof, "eta")
    if smap.kind == "linear":
        return smap.phi_q @ q + smap.phi_eta @ eta
    if smap.kind == "affine_in_eta":
        return np.asarray(smap.psi(q), dtype=float) + eta
    return np.asarray(smap.func(q, eta), dtype=float)


def jacobians(smap: SlidingMap, q, eta) -> Tuple[np.ndarray, np.ndarray]:
    """(dphi/dq, dphi/deta), both checked for nonsingularity."""
    if smap.kind == "linear":
        return smap.phi_q, smap.phi_eta
    if smap.kind == "affine_in_eta":
        return _check_jacobian(psi_jacobian(smap, q), smap.dof, "dpsi/dq"), np.eye(smap.dof)
    q = as_vector(q, smap.dof, "q")
    eta = as_vector(eta, smap.dof, "eta")
    Jq = _check_jacobian(smap.jac_q(q, eta), smap.dof, "dphi/dq")
    Je = _check_jacobian(smap.jac_eta(q, eta), smap.dof, "dphi/deta")
    return Jq, Je


def lambda_from(Jq: np.ndarray, Je: np.ndarray, T: np.ndarray) -> np.ndarray:
    L = Jq @ T @ Je.T
    L = L + L.T
    return 0.5 * (L + L.T)


def lambda_matrix(
    smap: SlidingMap, model: MechanicalModel, q, eta, T: Optional[np.ndarray] = None
) -> np.ndarray:
    if T is None:
        T = cholesky_factor(model, q)
    Jq, Je = jacobians(smap, q, eta)
    return lambda_from(Jq, Je, T)


def lambda_matrix_tracking(
    smap: SlidingMap,
    model: MechanicalModel,
    q,
    q_err,
    eta_err,
    T: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Lambda for the error system: T at the plant configuration, Jacobians at (q_err, eta_err)."""
    if T is None:
        T = cholesky_factor(model, q)
    Jq, Je = jacobians(smap, q_err, eta_err)
    return lambda_from(Jq, Je, T)


def normalize_box(box: BoxSpec, dof: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lower and upper bounds over (q, eta), length 2*dof.

    Accepts a mapping keyed q1..qm / eta1..etam or a list of [lo, hi] pairs
    (m pairs for q only, 2m for q and eta). Missing eta ranges collapse to 0.
    """
    lo = np.zeros(2 * dof)
    hi = np.zeros(2 * dof)
    if isinstance(box, Mapping):
        names = [f"q{i + 1}" for i in range(dof)] + [f"eta{i + 1}" for i in range(dof)]
        unknown = set(box) - set(names)
        if unknown:
            raise ParameterRangeError(f"unknown box coordinates {sorted(unknown)}")
        pairs = [box.get(name, (0.0, 0.0)) for name in names]
    else:
        pairs = [tuple(p) for p in box]
        if len(pairs) == dof:
            pairs += [(0.0, 0.0)] * dof
        elif len(pairs) != 2 * dof:
            raise ParameterRangeError(f"box needs {dof} or {2 * dof} intervals, got {len(pairs)}")
    for i, pair in enumerate(pairs):
        if len(pair) != 2:
            raise ParameterRangeError(f"box interval {i} must be [lo, hi], got {pair}")
        lo[i], hi[i] = float(pair[0]), float(pair[1])
    if np.any(hi < lo):
        raise ParameterRangeError("box is empty: some interval has hi < lo")
    return lo, hi


def sample_box(box: BoxSpec, dof: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points over the box, plus its corners and center."""
    if n_samples < 1:
        raise ParameterRangeError(f"n_samples must be positive, got {n_samples}")
    lo, hi = normalize_box(box, dof)
    free = np.flatnonzero(hi > lo)
    center = 0.5 * (lo + hi)
    points = [center[None, :]]
    if free.size:
        sampler = qmc.Sobol(d=free.size, scramble=True, seed=seed)
        unit = sampler.random_base2(m=int(np.ceil(np.log2(n_samples))))[:n_samples]
        block = np.repeat(center[None, :], unit.shape[0], axis=0)
        block[:, free] = qmc.scale(unit, lo[free], hi[free])
        points.append(block)
        if free.size <= 10:
            for corner in itertools.product(*[(lo[i], hi[i]) for i in free]):
                row = center.copy()
                row[free] = corner
                points.append(row[None, :])
    return np.vstack(points)


class PDCertificate(NamedTuple):
    """Sampled estimate of the uniform positive-definiteness constant."""

    epsilon: float
    argmin: Tuple[float, ...]
    n_points: int


def certify_uniform_pd(
    smap: SlidingMap,
    model: MechanicalModel,
    box: BoxSpec,
    n_samples: int = 4096,
    seed: int = 0,
) -> PDCertificate:
    """
    Infimum of lambda_min(Lambda) over sampled points of the box.

    The result is an estimate, not a global bound. Jacobians of linear maps are
    constant, so the same certificate holds for the tracking error system.

    Raises:
        AssumptionViolatedError: some sampled point has lambda_min <= 0.
    """
    m = model.dof
    points = sample_box(box, m, n_samples, seed)
    best = np.inf
    argmin = points[0]
    for point in points:
        q, eta = point[:m], point[m:]
        lam = float(np.linalg.eigvalsh(lambda_matrix(smap, model, q, eta))[0])
        if lam < best:
            best, argmin = lam, point
    witness = tuple(float(x) for x in argmin)
    if best <= 0:
        logger.error(f"Lambda is not positive definite at (q, eta) = {witness}: {best:.6g}")
        raise AssumptionViolatedError(
            f"Lambda is not uniformly positive definite: lambda_min = {best:.6g} at "
            f"(q, eta) = {witness}",
            witness=witness,
            value=best,
        )
    if best < 1e-6:
        logger.warning(f"sampled epsilon {best:.3e} is close to zero")
    logger.info(f"Certified epsilon ~ {best:.6g} over {points.shape[0]} points")
    return PDCertificate(epsilon=best, argmin=witness, n_points=points.shape[0])


def schur_bound(lam: np.ndarray) -> float:
    """max over proper index splits K|J of ||[-Lambda_KK^-1 Lambda_KJ; I]||_2, floored at 1."""
    m = lam.shape[0]
    a = 1.0
    idx = range(m)
    for size in range(1, m):
        for K in itertools.combinations(idx, size):
            J = [j for j in idx if j not in K]
            K = list(K)
            L = -np.linalg.solve(lam[np.ix_(K, K)], lam[np.ix_(K, J)])
            stacked = np.vstack([L, np.eye(len(J))])
            a = max(a, float(np.linalg.norm(stacked, 2)))
    return a


def estimate_schur_constant(
    smap: SlidingMap,
    model: MechanicalModel,
    box: BoxSpec,
    n_samples: int = 1024,
    seed: int = 0,
) -> float:
    """Sampled constant a >= 1 of the reaching-time bound (reporting only)."""
    m = model.dof
    a = 1.0
    for point in sample_box(box, m, n_samples, seed):
        a = max(a, schur_bound(lambda_matrix(smap, model, point[:m], point[m:])))
    return a
