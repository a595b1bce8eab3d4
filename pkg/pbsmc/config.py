import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil
import yaml

from pbsmc.bench.scenarios import PAPER_SCENARIOS, expand_entry, scenario_from_entry
from pbsmc.engine import Scenario
from pbsmc.errors import ConfigError

logger = logging.getLogger("Config")

TOP_LEVEL_KEYS = (
    "logging",
    "output",
    "runner",
    "certification",
    "waive_assumptions",
    "scenarios",
)

# Optional sections; null means "use the defaults"
MAPPING_SECTIONS = ("logging", "output", "runner", "certification")


def _line_index(node, prefix: str, index: Dict[str, int]):
    """Map dotted paths (scenarios[0].potential.k) to 1-based YAML line numbers."""
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            index[path] = item.start_mark.line + 1
            _line_index(item, path, index)


def _locate(lines: Dict[str, int], prefix: str, key: Optional[str]) -> Optional[int]:
    """Line of the deepest existing mapping along ``prefix.key``."""
    parts = key.split(".") if key else []
    while parts:
        path = ".".join([prefix] + parts)
        if path in lines:
            return lines[path]
        parts.pop()
    return lines.get(prefix)


def paper_config() -> Dict[str, Any]:
    """Config tree running the four built-in arm tracking scenarios."""
    return {"scenarios": [{"builtin": name} for name in PAPER_SCENARIOS]}


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load and validate a scenario config.

    Args:
        config_path: YAML file; defaults to $PBSMC_CONFIG.

    Returns:
        The config tree, every scenario entry checked.

    Raises:
        ConfigError: unreadable file, YAML syntax error or invalid scenario entry.
    """
    if config_path is None:
        config_path = os.getenv("PBSMC_CONFIG")
    if not config_path:
        raise ConfigError("No configuration given: pass a config path or set PBSMC_CONFIG")
    if not Path(config_path).exists():
        raise ConfigError(
            f"Configuration file not found: {config_path}\n"
            f"Example: cp scenarios.yaml.example {config_path}"
        )

    try:
        with open(config_path) as f:
            text = f.read()
        config = yaml.safe_load(text) or {}
        lines: Dict[str, int] = {}
        _line_index(yaml.compose(text), "", lines)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = None if mark is None else mark.line + 1
        raise ConfigError(f"Invalid YAML in {config_path}: {e}", line=line) from e
    except OSError as e:
        raise ConfigError(f"Failed to read configuration from {config_path}: {e}") from e
    logger.info(f"Loaded config from {config_path}")

    if not isinstance(config, dict):
        raise ConfigError(f"Configuration root must be a mapping, got {type(config).__name__}")

    validate_config(config, lines)
    return apply_environment(config)


def apply_environment(config: Dict[str, Any]) -> Dict[str, Any]:
    """PBSMC_LOG_LEVEL overrides logging.level."""
    if os.getenv("PBSMC_LOG_LEVEL"):
        config["logging"] = dict(section(config, "logging"))
        config["logging"]["level"] = os.getenv("PBSMC_LOG_LEVEL")
    return config


def section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    """Optional top-level section, {} when absent or null."""
    return config.get(name) or {}


def validate_config(config: Dict[str, Any], lines: Optional[Dict[str, int]] = None):
    lines = lines or {}
    unknown = set(config) - set(TOP_LEVEL_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}", key=key, line=lines.get(key))

    for name in MAPPING_SECTIONS:
        value = config.get(name)
        if value is not None and not isinstance(value, dict):
            raise ConfigError(
                f"'{name}' must be a mapping, got {type(value).__name__}",
                key=name,
                line=lines.get(name),
            )

    workers = section(config, "runner").get("workers")
    if workers is not None and (not isinstance(workers, int) or workers < 1):
        raise ConfigError(
            f"workers must be a positive integer, got {workers}",
            key="runner.workers",
            line=lines.get("runner.workers"),
        )
    samples = section(config, "certification").get("samples")
    if samples is not None and (not isinstance(samples, int) or samples < 1):
        raise ConfigError(
            f"samples must be a positive integer, got {samples}",
            key="certification.samples",
            line=lines.get("certification.samples"),
        )

    entries = config.get("scenarios")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("config needs a non-empty 'scenarios' list", key="scenarios", line=lines.get("scenarios"))

    seen = set()
    for i, entry in enumerate(entries):
        prefix = f"scenarios[{i}]"
        try:
            name = expand_entry(entry).get("name")
            if name in seen:
                raise ConfigError(f"duplicate scenario name '{name}'", key="name")
            seen.add(name)
            scenario_from_entry(entry, run_defaults(config))
        except ConfigError as e:
            line = _locate(lines, prefix, e.key)
            raise ConfigError(
                e.message, key=f"{prefix}.{e.key}" if e.key else prefix, line=line
            ) from e


def run_defaults(config: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "waive_assumptions": bool(config.get("waive_assumptions", False)),
        "certification": section(config, "certification"),
    }


def effective_config(
    config: Dict[str, Any],
    step: Optional[float] = None,
    t_final: Optional[float] = None,
    waive_assumptions: Optional[bool] = None,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> Dict[str, Any]:
    """Copy of ``config`` with built-ins expanded and command-line overrides applied."""
    result = copy.deepcopy(config)
    entries: List[dict] = []
    for entry in result.get("scenarios", []):
        entry = expand_entry(entry)
        sim = entry.setdefault("simulation", {})
        if step is not None:
            sim["step"] = float(step)
        if t_final is not None:
            sim["t_final"] = float(t_final)
        entries.append(entry)
    result["scenarios"] = entries
    if waive_assumptions:
        result["waive_assumptions"] = True
    if workers is not None:
        result["runner"] = {**section(result, "runner"), "workers": int(workers)}
    if output_dir is not None:
        result["output"] = {**section(result, "output"), "directory": str(output_dir)}
    return result


def build_scenarios(config: Dict[str, Any]) -> List[Scenario]:
    defaults = run_defaults(config)
    return [scenario_from_entry(entry, defaults) for entry in config.get("scenarios", [])]


def default_worker_count(n_scenarios: int) -> int:
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, min(n_scenarios, cores))


def save_config(config_data: Dict[str, Any], config_path: str) -> bool:
    """
    Save configuration to YAML file, backing up an existing one.

    Args:
        config_data: Configuration dictionary to save
        config_path: Destination path

    Returns:
        True if successful, False otherwise
    """
    try:
        config_file = Path(config_path)
        if config_file.exists():
            backup_path = config_file.with_suffix(".yaml.backup")
            config_file.replace(backup_path)
            logger.info(f"Created backup at {backup_path}")

        with open(config_file, "w") as f:
            yaml.safe_dump(config_data, f, default_flow_style=False, sort_keys=False)

        logger.info(f"Saved configuration to {config_path}")
        return True

    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Failed to save configuration: {e}")
        return False
