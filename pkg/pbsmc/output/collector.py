import json
import logging
import os
from pathlib import Path
from typing import Optional

from pbsmc.config import section
from pbsmc.engine import CertificationReport, Scenario, Trace, lyapunov_violations, metrics
from pbsmc.output.csv_handler import CSVTraceHandler, atomic_write
from pbsmc.output.records import CertificationRecord, MetricsRecord

logger = logging.getLogger("OutputCollector")

DEFAULT_OUTPUT_DIR = "./out"


def resolve_output_dir(config: dict, override: Optional[str] = None) -> Path:
    """CLI override, then output.directory, then PBSMC_OUTPUT_DIR, then ./out."""
    if override:
        return Path(override)
    directory = section(config, "output").get("directory")
    if directory:
        return Path(directory)
    return Path(os.getenv("PBSMC_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


class OutputCollector:
    """Writes <name>.trace.csv, <name>.metrics.json and <name>.cert.txt per scenario."""

    def __init__(self, config: dict, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = resolve_output_dir(config, output_dir)
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RuntimeError(f"Cannot create output directory {self.output_dir}: {e}") from e
        if not os.access(self.output_dir, os.W_OK):
            raise RuntimeError(f"Output directory {self.output_dir} is not writable")
        self.csv_handler = CSVTraceHandler(self.output_dir)
        logger.info(f"Writing results to {self.output_dir}")

    def _write_text(self, filename: str, text: str) -> Path:
        return atomic_write(self.output_dir / filename, lambda f: f.write(text))

    def record_run(self, scn: Scenario, trace: Trace) -> MetricsRecord:
        summary = metrics(trace)
        violations = len(lyapunov_violations(trace, until=summary.sliding_entry_time))
        record = MetricsRecord.from_trace(scn, trace, summary, violations)
        self.csv_handler.write(trace)
        self._write_text(f"{scn.name}.metrics.json", record.to_json())
        if trace.certification is not None:
            self.record_certification(trace.certification)
        else:
            self._write_cert(CertificationRecord.waived(scn.name, scn.controller.mode))
        return record

    def record_certification(self, report: CertificationReport) -> Path:
        return self._write_cert(CertificationRecord.from_report(report))

    def record_failure(self, name: str, mode: str, error: Exception, certification: bool) -> Path:
        """Certification failures go to the cert report, anything else to the metrics document."""
        if certification:
            return self._write_cert(CertificationRecord.failed(name, mode, error))
        return self._write_text(f"{name}.metrics.json", _failure_json(name, mode, error))

    def _write_cert(self, record: CertificationRecord) -> Path:
        path = self._write_text(f"{record.scenario}.cert.txt", record.to_text())
        logger.info(f"Certification report for {record.scenario}: {record.status}")
        return path


def _failure_json(name: str, mode: str, error: Exception) -> str:
    doc = {
        "scenario": name,
        "mode": mode,
        "status": "failed",
        "error": str(error),
        "last_valid_time": getattr(error, "last_valid_time", None),
    }
    return json.dumps(doc, indent=2) + "\n"
