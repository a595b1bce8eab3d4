from .collector import OutputCollector, resolve_output_dir
from .csv_handler import CSVTraceHandler, trace_header
from .records import CertificationRecord, MetricsRecord

__all__ = [
    "OutputCollector",
    "resolve_output_dir",
    "CSVTraceHandler",
    "trace_header",
    "CertificationRecord",
    "MetricsRecord",
]
