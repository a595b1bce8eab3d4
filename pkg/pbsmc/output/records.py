"""Record formats for per-scenario metrics and certification reports."""

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from pbsmc.engine import CertificationReport, Scenario, Trace, TraceMetrics


@dataclass
class MetricsRecord:
    """
    Flat summary of one simulated scenario.
    Serialized as a JSON document next to the trace CSV.
    """

    scenario: str
    mode: str
    description: str
    t_final: float
    step: float
    integrator: str
    samples: int
    sliding_entry_time: Optional[float]
    component_entry_times: List[Optional[float]]
    entry_gap_ratio: Optional[float]
    max_h_increase: float
    lyapunov_violations: int
    terminal_error_norm: float
    terminal_sigma_norm: float
    input_total_variation: float
    chattering_index: Optional[float]
    peak_input_norm: float
    reaching_time_bound: Optional[float] = None
    status: str = "ok"
    error: Optional[str] = None

    @classmethod
    def from_trace(
        cls, scn: Scenario, trace: Trace, metrics: TraceMetrics, lyapunov_violations: int
    ) -> "MetricsRecord":
        bound = None
        if trace.certification is not None:
            bound = trace.certification.reaching_time_bound
        return cls(
            scenario=scn.name,
            mode=scn.controller.mode,
            description=scn.description,
            t_final=scn.t_final,
            step=scn.step,
            integrator=scn.integrator,
            samples=metrics.samples,
            sliding_entry_time=metrics.sliding_entry_time,
            component_entry_times=list(metrics.component_entry_times),
            entry_gap_ratio=metrics.entry_gap_ratio,
            max_h_increase=metrics.max_h_increase,
            lyapunov_violations=lyapunov_violations,
            terminal_error_norm=metrics.terminal_error_norm,
            terminal_sigma_norm=metrics.terminal_sigma_norm,
            input_total_variation=metrics.input_total_variation,
            chattering_index=metrics.chattering_index,
            peak_input_norm=metrics.peak_input_norm,
            reaching_time_bound=bound,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass
class CertificationRecord:
    scenario: str
    mode: str
    status: str
    values: dict = field(default_factory=dict)
    error: Optional[str] = None
    witness: Optional[list] = None

    @classmethod
    def from_report(cls, report: CertificationReport) -> "CertificationRecord":
        values = report.to_dict()
        values.pop("scenario")
        values.pop("mode")
        return cls(scenario=report.scenario, mode=report.mode, status="certified", values=values)

    @classmethod
    def failed(cls, scenario: str, mode: str, error: Exception) -> "CertificationRecord":
        witness = getattr(error, "witness", None)
        return cls(
            scenario=scenario,
            mode=mode,
            status="violated",
            error=str(error),
            witness=None if witness is None else list(witness),
        )

    @classmethod
    def waived(cls, scenario: str, mode: str) -> "CertificationRecord":
        return cls(scenario=scenario, mode=mode, status="waived")

    def to_text(self) -> str:
        lines = [f"scenario: {self.scenario}", f"mode: {self.mode}", f"status: {self.status}"]
        for key, value in self.values.items():
            if value is None:
                continue
            if isinstance(value, float):
                value = format(value, ".17g")
            lines.append(f"{key}: {value}")
        if self.error:
            lines.append(f"error: {self.error}")
        if self.witness is not None:
            lines.append(f"witness: {self.witness}")
        lines.append("note: sampled constants are estimates over the certification box")
        return "\n".join(lines) + "\n"
