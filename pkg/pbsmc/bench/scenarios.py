"""
Built-in scenarios and the translation of scenario entries (plain dicts, as
found in the YAML config) into Scenario objects.
"""

import copy
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np

from pbsmc.bench.arm import ArmParams, arm_model
from pbsmc.bench.toys import scalar_model
from pbsmc.bench.trajectories import build_trajectory
from pbsmc.controllers import MODES, PBSMC_TRACK, ControllerSpec, DesiredTrajectory, constant_damping
from pbsmc.engine import Scenario
from pbsmc.errors import (
    ConfigError,
    MapInvalidError,
    ModelInvalidError,
    ParameterRangeError,
    TrajectoryError,
)
from pbsmc.potentials import Potential
from pbsmc.robustness import DisturbanceProfile
from pbsmc.sliding import SlidingMap

logger = logging.getLogger("ArmBench")

PAPER_PHI_Q = [[2.0, 0.0], [2.0, 2.0]]
IDENTITY_2 = [[1.0, 0.0], [0.0, 1.0]]
FULL_TURN_BOX = {"q1": [-math.pi, math.pi], "q2": [-math.pi, math.pi]}
PAPER_SIMULATION = {"t_final": 10.0, "step": 1.0e-4, "integrator": "rk4", "record_stride": 10}


def _paper_entry(name: str, description: str, potential: dict, sliding: dict, **extra) -> dict:
    entry = {
        "name": name,
        "description": description,
        "model": {"name": "two_link_arm", "params": {}},
        "controller": {"mode": PBSMC_TRACK},
        "sliding": sliding,
        "potential": potential,
        "trajectory": {"name": "paper_circle"},
        "initial_state": {"q": [0.0, 0.0], "p": [0.0, 0.0]},
        "simulation": dict(PAPER_SIMULATION),
        "certification": {"box": dict(FULL_TURN_BOX), "samples": 1024},
    }
    entry.update(extra)
    return entry


LINEAR_PAPER_MAP = {"kind": "linear", "phi_q": PAPER_PHI_Q, "phi_eta": IDENTITY_2}
AFFINE_PAPER_MAP = {"kind": "affine_in_eta", "phi_q": PAPER_PHI_Q}

BUILTIN_SCENARIOS: Dict[str, dict] = {
    "paper_l2_r13": _paper_entry(
        "paper_l2_r13",
        "circle tracking, U = 2||sigma||_2^1.3",
        {"kind": "norm_power", "k": 2.0, "r": 1.3, "s": 2.0, "smoothing_eps": 0.0},
        LINEAR_PAPER_MAP,
    ),
    "paper_l1": _paper_entry(
        "paper_l1",
        "circle tracking, U = 2||sigma||_1",
        {"kind": "norm_power", "k": 2.0, "r": 1.0, "s": 1.0, "smoothing_eps": 0.0},
        LINEAR_PAPER_MAP,
    ),
    "paper_robust_matched": _paper_entry(
        "paper_robust_matched",
        "circle tracking under a matched sinusoidal disturbance, U = 2||sigma||_1",
        {"kind": "norm_power", "k": 2.0, "r": 1.0, "s": 1.0, "smoothing_eps": 0.0},
        AFFINE_PAPER_MAP,
        disturbance={"kind": "sinusoid", "matched": [0.5, 0.5], "unmatched": [0.0, 0.0], "omega": 1.0},
    ),
    "paper_robust_mixed": _paper_entry(
        "paper_robust_mixed",
        "circle tracking under matched and unmatched disturbances, boundary-layer U",
        {"kind": "norm_power", "k": 2.0, "r": 1.0, "s": 1.0, "smoothing_eps": 0.05},
        AFFINE_PAPER_MAP,
        disturbance={
            "kind": "sinusoid",
            "matched": [0.2, 0.2],
            "unmatched": [0.05, 0.05],
            "omega": 1.0,
        },
    ),
    "arm_regulate": {
        "name": "arm_regulate",
        "description": "sliding-mode stabilization of the arm at the origin",
        "model": {"name": "two_link_arm", "params": {}},
        "controller": {"mode": "pbsmc_stabilize"},
        "sliding": LINEAR_PAPER_MAP,
        "potential": {"kind": "norm_power", "k": 2.0, "r": 1.3, "s": 2.0, "smoothing_eps": 0.0},
        "initial_state": {"q": [0.5, -0.5], "p": [0.0, 0.0]},
        "simulation": {"t_final": 5.0, "step": 1.0e-4, "integrator": "rk4", "record_stride": 10},
        "certification": {"box": dict(FULL_TURN_BOX), "samples": 1024},
    },
    "scalar_toy": {
        "name": "scalar_toy",
        "description": "unit mass, sigma = q + eta, U = 2|sigma|",
        "model": {"name": "scalar", "params": {"mass": 1.0, "damping": 0.0}},
        "controller": {"mode": "pbsmc_stabilize"},
        "sliding": {"kind": "linear", "phi_q": [[1.0]], "phi_eta": [[1.0]]},
        "potential": {"kind": "norm_power", "k": 2.0, "r": 1.0, "s": 1.0, "smoothing_eps": 0.0},
        "initial_state": {"q": [1.0], "p": [0.0]},
        "simulation": {"t_final": 3.0, "step": 1.0e-3, "integrator": "rk4", "record_stride": 1},
        "certification": {"box": {"q1": [-2.0, 2.0], "eta1": [-2.0, 2.0]}, "samples": 256},
    },
    "scalar_indefinite": {
        "name": "scalar_indefinite",
        "description": "sigma = -q + eta gives Lambda = -2: certification must fail",
        "model": {"name": "scalar", "params": {"mass": 1.0, "damping": 0.0}},
        "controller": {"mode": "pbsmc_stabilize"},
        "sliding": {"kind": "linear", "phi_q": [[-1.0]], "phi_eta": [[1.0]]},
        "potential": {"kind": "norm_power", "k": 2.0, "r": 1.0, "s": 1.0, "smoothing_eps": 0.0},
        "initial_state": {"q": [1.0], "p": [0.0]},
        "simulation": {"t_final": 3.0, "step": 1.0e-3, "integrator": "rk4", "record_stride": 1},
        "certification": {"box": {"q1": [-2.0, 2.0], "eta1": [-2.0, 2.0]}, "samples": 256},
    },
}

PAPER_SCENARIOS = ("paper_l2_r13", "paper_l1", "paper_robust_matched", "paper_robust_mixed")

SECTIONS = (
    "name",
    "builtin",
    "description",
    "model",
    "controller",
    "sliding",
    "potential",
    "trajectory",
    "disturbance",
    "initial_state",
    "simulation",
    "certification",
    "waive_assumptions",
)


def builtin_entry(name: str) -> dict:
    if name not in BUILTIN_SCENARIOS:
        raise ConfigError(
            f"unknown built-in scenario '{name}', expected one of {sorted(BUILTIN_SCENARIOS)}",
            key="builtin",
        )
    return copy.deepcopy(BUILTIN_SCENARIOS[name])


def merge_entry(base: dict, overrides: dict) -> dict:
    """Recursive dict merge; lists and scalars in ``overrides`` replace those of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_entry(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def expand_entry(entry: dict) -> dict:
    """Resolve ``builtin`` and return a self-contained entry."""
    if not isinstance(entry, dict):
        raise ConfigError(f"scenario entry must be a mapping, got {type(entry).__name__}")
    if "builtin" not in entry:
        return copy.deepcopy(entry)
    overrides = {k: v for k, v in entry.items() if k != "builtin"}
    return merge_entry(builtin_entry(entry["builtin"]), overrides)


def _require(section: dict, key: str, path: str) -> Any:
    if key not in section or section[key] is None:
        raise ConfigError(f"missing required key '{key}'", key=f"{path}.{key}")
    return section[key]


def _section(entry: dict, name: str, required: bool = False) -> dict:
    section = entry.get(name)
    if section is None:
        if required:
            raise ConfigError(f"missing required section '{name}'", key=name)
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"section '{name}' must be a mapping", key=name)
    return section


def _matrix(value, path: str, dof: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected a row-major numeric matrix: {e}", key=path) from e
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {arr.shape}", key=path)
    if dof is not None and arr.shape[0] != dof:
        raise ConfigError(f"expected a {dof}x{dof} matrix, got shape {arr.shape}", key=path)
    return arr


def _vector(value, path: str, dof: int) -> np.ndarray:
    try:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected a numeric list: {e}", key=path) from e
    if arr.shape != (dof,):
        raise ConfigError(f"expected {dof} values, got shape {arr.shape}", key=path)
    return arr


def _build_model(entry: dict):
    section = _section(entry, "model", required=True)
    name = _require(section, "name", "model")
    params = section.get("params") or {}
    try:
        if name == "two_link_arm":
            arm = ArmParams.from_dict(params)
            return arm_model(arm), arm
        if name == "scalar":
            unknown = set(params) - {"mass", "damping", "gain"}
            if unknown:
                raise ConfigError(f"unknown scalar parameters {sorted(unknown)}", key="model.params")
            return scalar_model(**{k: float(v) for k, v in params.items()}), ArmParams()
    except ConfigError:
        raise
    except (ParameterRangeError, TypeError, ValueError) as e:
        raise ConfigError(str(e), key="model.params") from e
    raise ConfigError(f"unknown model '{name}', expected 'two_link_arm' or 'scalar'", key="model.name")


def _check_trajectory(trajectory: DesiredTrajectory, dof: int):
    try:
        q_d = trajectory.evaluate(0.0)[0]
    except TrajectoryError as e:
        raise ConfigError(str(e), key="trajectory.params") from e
    if q_d.shape != (dof,):
        raise ConfigError(
            f"trajectory '{trajectory.name}' has {q_d.shape[0]} components but the model has "
            f"{dof} degrees of freedom",
            key="trajectory.name",
        )


def _build_sliding(entry: dict, dof: int) -> SlidingMap:
    section = _section(entry, "sliding", required=True)
    kind = section.get("kind", "linear")
    phi_q = _matrix(_require(section, "phi_q", "sliding"), "sliding.phi_q", dof)
    try:
        if kind == "linear":
            phi_eta = section.get("phi_eta")
            phi_eta = np.eye(dof) if phi_eta is None else _matrix(phi_eta, "sliding.phi_eta", dof)
            return SlidingMap.linear(phi_q, phi_eta)
        if kind == "affine_in_eta":
            return SlidingMap.affine_linear(phi_q)
    except MapInvalidError as e:
        raise ConfigError(str(e), key="sliding") from e
    raise ConfigError(
        f"unknown sliding kind '{kind}', expected 'linear' or 'affine_in_eta'", key="sliding.kind"
    )


def _build_potential(entry: dict) -> Potential:
    section = _section(entry, "potential", required=True)
    kind = section.get("kind", "norm_power")
    eps = float(section.get("smoothing_eps", 0.0))
    try:
        if kind == "norm_power":
            return Potential.norm_power(
                k=float(_require(section, "k", "potential")),
                r=float(_require(section, "r", "potential")),
                s=float(section.get("s", 2.0)),
                smoothing_eps=eps,
            )
        if kind == "l1_quadratic":
            return Potential.l1_quadratic(
                alpha=float(_require(section, "alpha", "potential")),
                beta=float(_require(section, "beta", "potential")),
                smoothing_eps=eps,
            )
        if kind == "quadratic":
            return Potential.quadratic(beta=float(_require(section, "beta", "potential")))
    except ConfigError:
        raise
    except (ParameterRangeError, TypeError, ValueError) as e:
        raise ConfigError(str(e), key="potential") from e
    raise ConfigError(
        f"unknown potential kind '{kind}', expected norm_power, l1_quadratic or quadratic",
        key="potential.kind",
    )


def _build_disturbance(entry: dict, dof: int) -> Optional[DisturbanceProfile]:
    section = _section(entry, "disturbance")
    if not section:
        return None
    kind = section.get("kind", "zero")
    if kind == "zero":
        return None
    matched = _vector(section.get("matched", [0.0] * dof), "disturbance.matched", dof)
    unmatched = _vector(section.get("unmatched", [0.0] * dof), "disturbance.unmatched", dof)
    if kind == "constant":
        return DisturbanceProfile.constant(matched, unmatched)
    if kind == "sinusoid":
        return DisturbanceProfile.sinusoid(
            matched,
            unmatched,
            omega=float(section.get("omega", 1.0)),
            phase=float(section.get("phase", 0.0)),
        )
    raise ConfigError(
        f"unknown disturbance kind '{kind}', expected zero, constant or sinusoid",
        key="disturbance.kind",
    )


def scenario_from_entry(entry: dict, defaults: Optional[dict] = None) -> Scenario:
    """
    Build a Scenario from an expanded entry.

    ``defaults`` carries run-wide settings (``waive_assumptions`` and a
    ``certification`` section) applied when the entry does not set them.

    Raises:
        ConfigError: missing or malformed keys, unknown names.
    """
    defaults = defaults or {}
    entry = expand_entry(entry)
    unknown = set(entry) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown scenario keys {sorted(unknown)}", key=sorted(unknown)[0])
    name = str(_require(entry, "name", "scenario"))

    model, arm = _build_model(entry)
    dof = model.dof
    controller = _section(entry, "controller", required=True)
    mode = _require(controller, "mode", "controller")
    if mode not in MODES:
        raise ConfigError(f"unknown controller mode '{mode}', expected one of {MODES}", key="controller.mode")

    trajectory = None
    traj_section = _section(entry, "trajectory")
    if mode == PBSMC_TRACK:
        traj_name = _require(traj_section, "name", "trajectory")
        trajectory = build_trajectory(traj_name, traj_section.get("params"), arm)
        _check_trajectory(trajectory, dof)

    damping_d = None
    if mode == "kpes":
        try:
            damping_d = constant_damping(float(controller.get("damping_d_gain", 1.0)), dof)
        except ParameterRangeError as e:
            raise ConfigError(str(e), key="controller.damping_d_gain") from e

    try:
        spec = ControllerSpec(
            mode=mode,
            model=model,
            sliding_map=_build_sliding(entry, dof),
            potential=_build_potential(entry),
            damping_d=damping_d,
            trajectory=trajectory,
        )
    except (ParameterRangeError, MapInvalidError, ModelInvalidError) as e:
        raise ConfigError(str(e), key="controller") from e

    initial = _section(entry, "initial_state")
    sim = _section(entry, "simulation")
    cert = _section(entry, "certification") or defaults.get("certification", {}) or {}
    try:
        return Scenario(
            name=name,
            controller=spec,
            q0=_vector(initial.get("q", [0.0] * dof), "initial_state.q", dof),
            p0=_vector(initial.get("p", [0.0] * dof), "initial_state.p", dof),
            t_final=float(sim.get("t_final", 10.0)),
            step=float(sim.get("step", 1.0e-4)),
            integrator=str(sim.get("integrator", "rk4")),
            record_stride=int(sim.get("record_stride", 1)),
            disturbance=_build_disturbance(entry, dof),
            waive_assumptions=bool(entry.get("waive_assumptions", defaults.get("waive_assumptions", False))),
            cert_box=cert.get("box"),
            cert_samples=int(cert.get("samples", 1024)),
            description=str(entry.get("description", "")),
        )
    except ParameterRangeError as e:
        raise ConfigError(str(e), key="simulation") from e


def paper_scenarios(**simulation_overrides) -> List[Scenario]:
    """
    The four tracking scenarios on the arm: both potentials, then the matched
    and the matched-plus-unmatched disturbance variants.
    """
    scenarios = []
    for name in PAPER_SCENARIOS:
        entry = builtin_entry(name)
        if simulation_overrides:
            entry["simulation"].update(simulation_overrides)
        scenarios.append(scenario_from_entry(entry))
    return scenarios


def list_builtins() -> List[str]:
    return [f"{name}: {entry['description']}" for name, entry in BUILTIN_SCENARIOS.items()]
