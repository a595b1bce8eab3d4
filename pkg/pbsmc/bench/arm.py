"""
Planar two-link manipulator moving in a horizontal plane (no gravity).

    M(q) = [[M1 + M2 + 2 M3 cos q2, M2 + M3 cos q2],
            [M2 + M3 cos q2,        M2           ]]

with M1 = m1 r1^2 + m2 l1^2 + J1, M2 = m2 r2^2 + J2, M3 = m2 l1 r2,
viscous joint friction D0 = diag(nu1, nu2) and G0 = I.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from pbsmc.errors import ParameterRangeError
from pbsmc.mech_ph import MechanicalModel

logger = logging.getLogger("ArmBench")


@dataclass(frozen=True)
class ArmParams:
    """Link lengths, masses, COM distances, link inertias and joint friction."""

    l1: float = 1.0
    l2: float = 1.0
    m1: float = 1.0
    m2: float = 1.0
    r1: float = 0.5
    r2: float = 0.5
    J1: float = 1.0 / 12.0
    J2: float = 1.0 / 12.0
    nu1: float = 0.5
    nu2: float = 0.5

    def __post_init__(self):
        for name in ("l1", "l2", "m1", "m2", "r1", "r2", "J1", "J2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ParameterRangeError(f"arm parameter {name} must be positive, got {value}")
        # zero friction is allowed for conservation checks
        for name in ("nu1", "nu2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ParameterRangeError(f"arm parameter {name} must be >= 0, got {value}")

    @classmethod
    def from_dict(cls, data: dict) -> "ArmParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterRangeError(f"unknown arm parameters {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def inertia_constants(self) -> Tuple[float, float, float]:
        M1 = self.m1 * self.r1**2 + self.m2 * self.l1**2 + self.J1
        M2 = self.m2 * self.r2**2 + self.J2
        M3 = self.m2 * self.l1 * self.r2
        return M1, M2, M3


def arm_model(params: ArmParams = ArmParams()) -> MechanicalModel:
    M1, M2, M3 = params.inertia_constants
    D0 = np.diag([params.nu1, params.nu2])
    G0 = np.eye(2)

    def inertia(q):
        c = np.cos(q[1])
        off = M2 + M3 * c
        return np.array([[M1 + M2 + 2.0 * M3 * c, off], [off, M2]])

    def d_inertia(q):
        s = np.sin(q[1])
        dM = np.zeros((2, 2, 2))
        dM[1] = np.array([[-2.0 * M3 * s, -M3 * s], [-M3 * s, 0.0]])
        return dM

    def analytic_factor(q):
        c = np.cos(q[1])
        det = M1 * M2 - (M3 * c) ** 2
        return np.array(
            [
                [np.sqrt(M2) / np.sqrt(det), 0.0],
                [-(M2 + M3 * c) / (np.sqrt(M2) * np.sqrt(det)), 1.0 / np.sqrt(M2)],
            ]
        )

    logger.debug(f"Arm model M1={M1:.6g}, M2={M2:.6g}, M3={M3:.6g}")
    return MechanicalModel(
        dof=2,
        inertia=inertia,
        damping0=lambda q, p: D0,
        input_map0=lambda q: G0,
        d_inertia=d_inertia,
        name="two_link_arm",
        analytic_factor=analytic_factor,
    )


def forward_kinematics(params: ArmParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array(
        [
            params.l1 * np.cos(q[0]) + params.l2 * np.cos(q[0] + q[1]),
            params.l1 * np.sin(q[0]) + params.l2 * np.sin(q[0] + q[1]),
        ]
    )


def kinematic_jacobian(params: ArmParams, q) -> np.ndarray:
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    s12, c12 = np.sin(q[0] + q[1]), np.cos(q[0] + q[1])
    return np.array(
        [
            [-params.l1 * s1 - params.l2 * s12, -params.l2 * s12],
            [params.l1 * c1 + params.l2 * c12, params.l2 * c12],
        ]
    )


def kinematic_jacobian_rate(params: ArmParams, q, qdot) -> np.ndarray:
    """dJ/dt along qdot."""
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    s12, c12 = np.sin(q[0] + q[1]), np.cos(q[0] + q[1])
    w1 = qdot[0]
    w12 = qdot[0] + qdot[1]
    return np.array(
        [
            [-params.l1 * c1 * w1 - params.l2 * c12 * w12, -params.l2 * c12 * w12],
            [-params.l1 * s1 * w1 - params.l2 * s12 * w12, -params.l2 * s12 * w12],
        ]
    )
