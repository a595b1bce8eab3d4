import logging
import os
import tempfile
from pathlib import Path
from typing import List

import numpy as np

from pbsmc.engine import Trace

logger = logging.getLogger("OutputCollector")

FLOAT_FORMAT = "%.17g"


def trace_header(dof: int) -> List[str]:
    cols = ["t"]
    for channel in ("q", "p", "eta", "sigma", "u"):
        cols.extend(f"{channel}{i + 1}" for i in range(dof))
    return cols + ["H", "U"]


def trace_table(trace: Trace) -> np.ndarray:
    """Columns in header order; sigma and H are in error coordinates for tracking runs."""
    return np.column_stack(
        [trace.t, trace.q, trace.p, trace.eta, trace.sigma, trace.u, trace.H, trace.U]
    )


def atomic_write(path: Path, writer) -> Path:
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            writer(f)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class CSVTraceHandler:
    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)

    def path_for(self, name: str) -> Path:
        return self.output_dir / f"{name}.trace.csv"

    def write(self, trace: Trace) -> Path:
        header = ",".join(trace_header(trace.dof))
        table = trace_table(trace)
        path = atomic_write(
            self.path_for(trace.name),
            lambda f: np.savetxt(f, table, fmt=FLOAT_FORMAT, delimiter=",", header=header, comments=""),
        )
        logger.info(f"Wrote {len(trace)} samples to {path}")
        return path
