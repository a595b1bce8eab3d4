"""
Potential functions U(sigma) shaping the closed-loop energy.

Families:
    norm_power     U = k ||sigma||_s^r            1 <= r < 2, s >= 1, k > 0
    l1_quadratic   U = alpha ||sigma||_1 + beta/2 ||sigma||^2
    quadratic      U = beta/2 ||sigma||^2          (smooth, asymptotic only)
    custom         user callables

At sigma_i = 0 the signum selection is 0, so gradient(0) = 0 for every family.
A positive ``smoothing_eps`` turns the non-smooth families into their
Huber-type counterparts whose gradient is the saturated signum.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from pbsmc.errors import AssumptionViolatedError, ParameterRangeError

logger = logging.getLogger("Potentials")

KINDS = ("norm_power", "l1_quadratic", "quadratic", "custom")
SAMPLED_MARGIN = 0.95
SCALE_DECADES = np.logspace(-3, 3, 7)


@dataclass(frozen=True, eq=False)
class Potential:
    kind: str = "norm_power"
    k: float = 1.0
    r: float = 1.0
    s: float = 2.0
    alpha: float = 0.0
    beta: float = 0.0
    smoothing_eps: float = 0.0
    func: Optional[Callable[[np.ndarray], float]] = None
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterRangeError(f"unknown potential kind '{self.kind}', expected one of {KINDS}")
        if not np.isfinite(self.smoothing_eps) or self.smoothing_eps < 0:
            raise ParameterRangeError(f"smoothing_eps must be >= 0, got {self.smoothing_eps}")
        if self.kind == "norm_power":
            if not self.k > 0:
                raise ParameterRangeError(f"norm_power gain k must be positive, got {self.k}")
            if not 1.0 <= self.r < 2.0:
                raise ParameterRangeError(f"norm_power exponent r must lie in [1, 2), got {self.r}")
            if not (np.isfinite(self.s) and self.s >= 1.0):
                raise ParameterRangeError(f"norm index s must be finite and >= 1, got {self.s}")
        elif self.kind == "l1_quadratic":
            if not (self.alpha > 0 and self.beta > 0):
                raise ParameterRangeError(
                    f"l1_quadratic gains must be positive, got alpha={self.alpha}, beta={self.beta}"
                )
        elif self.kind == "quadratic":
            if not self.beta > 0:
                raise ParameterRangeError(f"quadratic gain beta must be positive, got {self.beta}")
        elif self.func is None:
            raise ParameterRangeError("custom potential needs a value function")

        if self.smoothing_eps > 0 and not self.discontinuous_gradient:
            logger.warning(
                f"smoothing_eps={self.smoothing_eps} ignored: {self.describe()} already has a "
                f"continuous gradient"
            )

    @classmethod
    def norm_power(cls, k: float, r: float, s: float = 2.0, smoothing_eps: float = 0.0):
        return cls(kind="norm_power", k=k, r=r, s=s, smoothing_eps=smoothing_eps)

    @classmethod
    def l1_quadratic(cls, alpha: float, beta: float, smoothing_eps: float = 0.0):
        return cls(kind="l1_quadratic", alpha=alpha, beta=beta, smoothing_eps=smoothing_eps)

    @classmethod
    def quadratic(cls, beta: float):
        return cls(kind="quadratic", beta=beta)

    @classmethod
    def custom(cls, func, grad=None):
        return cls(kind="custom", func=func, grad=grad)

    @property
    def discontinuous_gradient(self) -> bool:
        if self.kind == "norm_power":
            return self.r == 1.0
        return self.kind == "l1_quadratic"

    @property
    def layer(self) -> float:
        """Boundary-layer width actually applied (0 when smoothing does not apply)."""
        return self.smoothing_eps if self.discontinuous_gradient else 0.0

    @property
    def is_smooth(self) -> bool:
        return self.kind in ("quadratic", "custom") or self.layer > 0

    def describe(self) -> str:
        if self.kind == "norm_power":
            text = f"U = {self.k:g}*||sigma||_{self.s:g}^{self.r:g}"
        elif self.kind == "l1_quadratic":
            text = f"U = {self.alpha:g}*||sigma||_1 + {self.beta:g}/2*||sigma||^2"
        elif self.kind == "quadratic":
            text = f"U = {self.beta:g}/2*||sigma||^2"
        else:
            text = "custom U"
        if self.layer > 0:
            text += f" (boundary layer {self.layer:g})"
        return text

    def to_dict(self) -> dict:
        if self.kind == "norm_power":
            data = {"kind": self.kind, "k": self.k, "r": self.r, "s": self.s}
        elif self.kind == "l1_quadratic":
            data = {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}
        elif self.kind == "quadratic":
            data = {"kind": self.kind, "beta": self.beta}
        else:
            data = {"kind": self.kind}
        data["smoothing_eps"] = self.smoothing_eps
        return data


def _finite(sigma) -> np.ndarray:
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if not np.all(np.isfinite(sigma)):
        raise ParameterRangeError(f"sigma is not finite: {sigma.tolist()}")
    return sigma


def _s_norm(sigma: np.ndarray, s: float) -> float:
    if s == 2.0:
        return float(np.sqrt(sigma @ sigma))
    if s == 1.0:
        return float(np.abs(sigma).sum())
    return float(np.sum(np.abs(sigma) ** s) ** (1.0 / s))


def huber(z, eps: float):
    """z^2/(2 eps) inside the layer, |z| - eps/2 outside."""
    a = np.abs(z)
    return np.where(a <= eps, a * a / (2.0 * eps), a - 0.5 * eps)


def saturated_sign(z: np.ndarray, eps: float) -> np.ndarray:
    if eps > 0:
        return np.clip(z / eps, -1.0, 1.0)
    return np.sign(z)


def value(pot: Potential, sigma) -> float:
    sigma = _finite(sigma)
    eps = pot.layer
    if pot.kind == "norm_power":
        if eps == 0:
            return pot.k * _s_norm(sigma, pot.s) ** pot.r
        if pot.s == 1.0:
            return pot.k * float(np.sum(huber(sigma, eps)))
        return pot.k * float(huber(_s_norm(sigma, pot.s), eps))
    if pot.kind == "l1_quadratic":
        l1 = float(np.sum(huber(sigma, eps))) if eps > 0 else float(np.abs(sigma).sum())
        return pot.alpha * l1 + 0.5 * pot.beta * float(sigma @ sigma)
    if pot.kind == "quadratic":
        return 0.5 * pot.beta * float(sigma @ sigma)
    return float(pot.func(sigma))


def _s_norm_gradient(sigma: np.ndarray, s: float, n: float) -> np.ndarray:
    # d||sigma||_s / d sigma_i = (|sigma_i| / n)^(s-1) sgn(sigma_i)
    if s == 1.0:
        return np.sign(sigma)
    return (np.abs(sigma) / n) ** (s - 1.0) * np.sign(sigma)


def gradient(pot: Potential, sigma) -> np.ndarray:
    sigma = _finite(sigma)
    eps = pot.layer
    if pot.kind == "norm_power":
        if pot.s == 1.0 and pot.r == 1.0:
            return pot.k * saturated_sign(sigma, eps)
        n = _s_norm(sigma, pot.s)
        if n == 0.0:
            return np.zeros_like(sigma)
        if eps > 0:
            return pot.k * min(n / eps, 1.0) * _s_norm_gradient(sigma, pot.s, n)
        if pot.s == 2.0:
            return pot.k * pot.r * n ** (pot.r - 2.0) * sigma
        return pot.k * pot.r * n ** (pot.r - 1.0) * _s_norm_gradient(sigma, pot.s, n)
    if pot.kind == "l1_quadratic":
        return pot.alpha * saturated_sign(sigma, eps) + pot.beta * sigma
    if pot.kind == "quadratic":
        return pot.beta * sigma
    if pot.grad is not None:
        return np.asarray(pot.grad(sigma), dtype=float)
    return _fd_gradient(pot, sigma)


def _fd_gradient(pot: Potential, sigma: np.ndarray, step: float = 1e-6) -> np.ndarray:
    g = np.empty_like(sigma)
    for i in range(sigma.size):
        h = step * max(1.0, abs(sigma[i]))
        e = np.zeros_like(sigma)
        e[i] = h
        g[i] = (value(pot, sigma + e) - value(pot, sigma - e)) / (2.0 * h)
    return g


class Assumption2Constants(NamedTuple):
    """||grad U|| >= c U^rho with 0 <= rho < 1/2; ``exact`` is False for sampled constants."""

    c: float
    rho: float
    exact: bool


def _sample_directions(dim: int, n_samples: int, s: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs: List[np.ndarray] = [np.eye(dim), -np.eye(dim)]
    if dim <= 10:
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * dim))).reshape(dim, -1).T
        dirs.append(signs)
    else:
        dirs.append(np.ones((1, dim)))
    dirs.append(rng.standard_normal((n_samples, dim)))
    raw = np.vstack(dirs)
    norms = np.array([_s_norm(row, s) for row in raw])
    return raw / norms[:, None]


def assumption2_constants(
    pot: Potential,
    dim: int,
    n_samples: int = 2048,
    seed: int = 0,
    rho: Optional[float] = None,
) -> Assumption2Constants:
    """
    Certified constants (c, rho) of the gradient-domination inequality.

    Exact for s = 2, for s = 1 with r = 1 and for l1_quadratic. Other norm
    indices combine the norm-equivalence bound with a sampled infimum over
    the unit s-sphere scaled across six decades, keeping 95% of the sampled
    value. Custom potentials are sampled only, with ``rho`` defaulting to 0.
    The constants always refer to the unsmoothed potential.

    Raises:
        AssumptionViolatedError: quadratic potential, or a sampled infimum of ~0.
    """
    if dim < 1:
        raise ParameterRangeError(f"dimension must be positive, got {dim}")
    if pot.kind == "quadratic":
        raise AssumptionViolatedError(
            f"{pot.describe()} only satisfies the gradient bound with rho = 1/2 "
            f"(asymptotic, not finite-time convergence)",
            value=0.5,
        )
    if pot.layer > 0:
        logger.info(f"Assumption-2 constants of {pot.describe()} refer to the unsmoothed potential")
        pot = replace(pot, smoothing_eps=0.0)

    if pot.kind == "l1_quadratic":
        return Assumption2Constants(c=pot.alpha, rho=0.0, exact=True)
    if pot.kind == "norm_power":
        rho_np = (pot.r - 1.0) / pot.r
        analytic = pot.r * pot.k ** (1.0 / pot.r)
        if pot.s == 2.0:
            return Assumption2Constants(c=analytic, rho=rho_np, exact=True)
        if pot.s == 1.0 and pot.r == 1.0:
            return Assumption2Constants(c=pot.k, rho=0.0, exact=True)
        analytic *= dim ** (-abs(0.5 - 1.0 / pot.s))
        sampled = _sampled_infimum(pot, dim, n_samples, seed, rho_np, pot.s)
        c = max(analytic, SAMPLED_MARGIN * sampled)
        logger.debug(f"s={pot.s:g}: analytic c={analytic:.6g}, sampled infimum {sampled:.6g}")
        return Assumption2Constants(c=c, rho=rho_np, exact=False)

    rho = 0.0 if rho is None else float(rho)
    if not 0.0 <= rho < 0.5:
        raise ParameterRangeError(f"rho must lie in [0, 1/2), got {rho}")
    sampled = _sampled_infimum(pot, dim, n_samples, seed, rho, 2.0)
    return Assumption2Constants(c=SAMPLED_MARGIN * sampled, rho=rho, exact=False)


def _sampled_infimum(
    pot: Potential, dim: int, n_samples: int, seed: int, rho: float, s: float
) -> float:
    best = np.inf
    witness = None
    for direction in _sample_directions(dim, n_samples, s, seed):
        for scale in SCALE_DECADES:
            sigma = scale * direction
            u = value(pot, sigma)
            ratio = float(np.linalg.norm(gradient(pot, sigma))) / u ** rho
            if ratio < best:
                best, witness = ratio, sigma
    if not best > 1e-12:
        raise AssumptionViolatedError(
            f"gradient bound fails for {pot.describe()}: inf ||grad U||/U^rho = {best:.3e}",
            witness=None if witness is None else witness.tolist(),
            value=best,
        )
    return best
