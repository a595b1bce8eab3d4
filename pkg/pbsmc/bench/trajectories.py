"""
Desired joint trajectories for the arm, obtained by inverse kinematics of an
end-effector path.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from pbsmc.bench.arm import ArmParams, kinematic_jacobian, kinematic_jacobian_rate
from pbsmc.controllers import DesiredTrajectory
from pbsmc.errors import ConfigError, TrajectoryError

logger = logging.getLogger("ArmBench")


def inverse_kinematics(params: ArmParams, x: float, y: float) -> np.ndarray:
    """
    Elbow configuration with q2 = arccos(...) in [0, pi] reaching (x, y).

    q1 uses atan2, so any quadrant of the target is handled.
    """
    l1, l2 = params.l1, params.l2
    r2 = x * x + y * y
    r = np.sqrt(r2)
    if not (abs(l1 - l2) < r < l1 + l2):
        raise TrajectoryError(
            f"target ({x:.6g}, {y:.6g}) at distance {r:.6g} is outside the reachable annulus "
            f"({abs(l1 - l2):.6g}, {l1 + l2:.6g})"
        )
    q2 = np.arccos((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2))
    q1 = np.arctan2(y, x) - np.arccos((r2 + l1 * l1 - l2 * l2) / (2.0 * l1 * r))
    return np.array([q1, q2])


@lru_cache(maxsize=1)
def _circle_state(
    params: ArmParams, center: Tuple[float, float], radius: float, omega: float, t: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # RK4 stages evaluate q_d, qdot_d and qddot_d at the same t in a row
    cx, cy = center
    ct, st = np.cos(omega * t), np.sin(omega * t)
    pos = np.array([cx + radius * ct, cy + radius * st])
    vel = np.array([-radius * omega * st, radius * omega * ct])
    acc = np.array([-radius * omega * omega * ct, -radius * omega * omega * st])

    q = inverse_kinematics(params, pos[0], pos[1])
    J = kinematic_jacobian(params, q)
    qdot = np.linalg.solve(J, vel)
    qddot = np.linalg.solve(J, acc - kinematic_jacobian_rate(params, q, qdot) @ qdot)
    for v in (q, qdot, qddot):
        v.setflags(write=False)
    return q, qdot, qddot


@dataclass(frozen=True)
class CircleTrajectory:
    """End effector on x = cx + R cos(w t), y = cy + R sin(w t), mapped to joint space."""

    params: ArmParams = ArmParams()
    center: Tuple[float, float] = (1.0, 0.0)
    radius: float = 0.5
    omega: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "omega", float(self.omega))

    def __call__(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _circle_state(self.params, self.center, self.radius, self.omega, float(t))

    def as_desired(self, name: str = "paper_circle") -> DesiredTrajectory:
        return DesiredTrajectory(
            q_d=lambda t: self(t)[0],
            qdot_d=lambda t: self(t)[1],
            qddot_d=lambda t: self(t)[2],
            name=name,
        )

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "omega": self.omega}


def circle_trajectory(t: float, params: ArmParams = ArmParams()):
    """(q_d, qdot_d, qddot_d) of the unit-speed circle of radius 0.5 around (1, 0)."""
    return CircleTrajectory(params)(t)


def _paper_circle(params: dict, arm: ArmParams) -> DesiredTrajectory:
    unknown = set(params) - {"center", "radius", "omega"}
    if unknown:
        raise ConfigError(f"unknown circle parameters {sorted(unknown)}", key="trajectory.params")
    return CircleTrajectory(arm, **params).as_desired("paper_circle")


def _stationary(params: dict, arm: ArmParams) -> DesiredTrajectory:
    if "q" not in params:
        raise ConfigError("stationary trajectory needs a target", key="trajectory.params.q")
    return DesiredTrajectory.stationary(params["q"])


TRAJECTORIES: Dict[str, Callable[[dict, ArmParams], DesiredTrajectory]] = {
    "paper_circle": _paper_circle,
    "stationary": _stationary,
}


def build_trajectory(name: str, params: Optional[dict] = None, arm: ArmParams = ArmParams()):
    if name not in TRAJECTORIES:
        raise ConfigError(
            f"unknown trajectory '{name}', expected one of {sorted(TRAJECTORIES)}",
            key="trajectory.name",
        )
    return TRAJECTORIES[name](dict(params or {}), arm)
