import asyncio
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

from pbsmc.bench.scenarios import expand_entry, scenario_from_entry
from pbsmc.config import default_worker_count, run_defaults, section
from pbsmc.engine import certify_scenario, simulate
from pbsmc.errors import AssumptionViolatedError, PbsmcError, exit_code_for
from pbsmc.output.collector import OutputCollector

logger = logging.getLogger("ScenarioRunner")

RUN = "run"
CERTIFY = "certify"


@dataclass
class ScenarioOutcome:
    name: str
    mode: Optional[str]
    status: str
    exit_code: int
    elapsed: float = 0.0
    error: Optional[str] = None
    certification: Optional[dict] = None
    metrics: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


def run_entry(task: str, entry: dict, defaults: dict, config: dict, output_dir: Optional[str]) -> dict:
    """
    Build, certify or simulate, and write the outputs of one scenario entry.

    Module-level and fed plain dicts so it can be shipped to a worker process;
    Scenario objects hold closures and never cross the process boundary.
    Returns a ScenarioOutcome as a dict.
    """
    started = time.monotonic()
    entry = expand_entry(entry)
    name = str(entry.get("name", "<unnamed>"))
    mode = entry.get("controller", {}).get("mode")
    collector = OutputCollector(config, output_dir)

    try:
        scn = scenario_from_entry(entry, defaults)
        if task == CERTIFY:
            report = certify_scenario(scn)
            collector.record_certification(report)
            outcome = ScenarioOutcome(name, mode, "certified", 0, certification=report.to_dict())
        else:
            trace = simulate(scn)
            record = collector.record_run(scn, trace)
            outcome = ScenarioOutcome(
                name,
                mode,
                "ok",
                0,
                certification=None if trace.certification is None else trace.certification.to_dict(),
                metrics=record.to_dict(),
            )
    except AssumptionViolatedError as e:
        logger.error(f"[{name}] assumption violated: {e}")
        collector.record_failure(name, mode, e, certification=True)
        outcome = ScenarioOutcome(name, mode, "violated", exit_code_for(e), error=str(e))
    except PbsmcError as e:
        logger.error(f"[{name}] {type(e).__name__}: {e}")
        collector.record_failure(name, mode, e, certification=task == CERTIFY)
        outcome = ScenarioOutcome(name, mode, "failed", exit_code_for(e), error=str(e))
    except Exception as e:
        logger.error(f"[{name}] unexpected failure: {e}", exc_info=True)
        collector.record_failure(name, mode, e, certification=task == CERTIFY)
        outcome = ScenarioOutcome(name, mode, "failed", 1, error=str(e))

    outcome.elapsed = time.monotonic() - started
    logger.info(f"[{name}] {outcome.status} in {outcome.elapsed:.2f}s")
    return asdict(outcome)


class ScenarioRunner:
    """
    Fans the scenarios of a config out over a process pool.

    Each worker owns its scenario end-to-end, including its output files, so
    nothing is shared between jobs but the read-only config tree.
    """

    def __init__(self, config: Dict[str, Any], output_dir: Optional[str] = None, workers: Optional[int] = None):
        self.config = config
        self.output_dir = None if output_dir is None else str(output_dir)
        self.entries: List[dict] = [expand_entry(e) for e in config.get("scenarios", [])]
        self.defaults = run_defaults(config)
        if workers is None:
            workers = section(config, "runner").get("workers")
        self.workers = workers or default_worker_count(len(self.entries))
        logger.info(f"Runner ready: {len(self.entries)} scenario(s), {self.workers} worker(s)")

    async def run(self, task: str = RUN) -> List[ScenarioOutcome]:
        """Run every scenario; outcomes come back in config order."""
        if task not in (RUN, CERTIFY):
            raise ValueError(f"unknown task '{task}'")
        if self.workers == 1 or len(self.entries) == 1:
            return [
                ScenarioOutcome(**run_entry(task, entry, self.defaults, self.config, self.output_dir))
                for entry in self.entries
            ]

        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            jobs = [
                loop.run_in_executor(
                    pool, run_entry, task, entry, self.defaults, self.config, self.output_dir
                )
                for entry in self.entries
            ]
            results = await asyncio.gather(*jobs, return_exceptions=True)

        outcomes = []
        for entry, result in zip(self.entries, results):
            if isinstance(result, BaseException):
                # worker crashed before it could report
                logger.error(f"[{entry.get('name')}] worker failed: {result}")
                outcomes.append(
                    ScenarioOutcome(
                        str(entry.get("name")),
                        entry.get("controller", {}).get("mode"),
                        "failed",
                        exit_code_for(result),
                        error=str(result),
                    )
                )
            else:
                outcomes.append(ScenarioOutcome(**result))
        return outcomes


def overall_exit_code(outcomes: List[ScenarioOutcome]) -> int:
    """0 when every scenario succeeded, else the code of the first failure in config order."""
    for outcome in outcomes:
        if not outcome.ok:
            return outcome.exit_code
    return 0
