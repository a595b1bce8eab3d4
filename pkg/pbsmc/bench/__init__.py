from .arm import ArmParams, arm_model, forward_kinematics
from .scenarios import BUILTIN_SCENARIOS, PAPER_SCENARIOS, paper_scenarios, scenario_from_entry
from .toys import scalar_model
from .trajectories import CircleTrajectory, circle_trajectory, inverse_kinematics

__all__ = [
    "ArmParams",
    "arm_model",
    "forward_kinematics",
    "BUILTIN_SCENARIOS",
    "PAPER_SCENARIOS",
    "paper_scenarios",
    "scenario_from_entry",
    "scalar_model",
    "CircleTrajectory",
    "circle_trajectory",
    "inverse_kinematics",
]
