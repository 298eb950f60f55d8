import json
import logging
import os
import platform
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Any, Optional, List

import numpy as np
import scipy

from shared.config import settings

logger = logging.getLogger(__name__)

SERVICE_VERSION = "0.1.0"


class ECSLogger:
    """
    Logger that writes events in Elastic Common Schema (ECS) format.

    One JSON line per event. Every event of a run carries the run's command,
    seed and suite under "infograd", and the numpy/scipy versions under
    "labels", so a line can be matched to the report it belongs to.
    """

    def __init__(self, log_file: Optional[str] = "infograd.json"):
        self.log_file = log_file
        self.session_id = str(uuid.uuid4())
        self._runs: Dict[str, Dict[str, Any]] = {}
        self._write_failed = False

    def _create_base_event(self, action: str, message: str, run_id: Optional[str] = None,
                           stage: Optional[str] = None) -> Dict[str, Any]:
        """ECS skeleton for one event of a run"""
        context = dict(self._runs.get(run_id, {}))
        if run_id is not None:
            context["run_id"] = run_id
        if stage is not None:
            context["stage"] = stage
        return {
            "@timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "ecs": {"version": "8.0.0"},
            "event": {
                "kind": "event",
                "category": ["process"],
                "type": ["info"],
                "action": action,
                "dataset": "infograd.runs",
                "outcome": "unknown",
                "duration": 0,
            },
            "service": {"name": "infograd", "type": "cli", "version": SERVICE_VERSION},
            "process": {"pid": os.getpid()},
            "host": {"hostname": platform.node(), "os": {"type": platform.system()}},
            "session": {"id": self.session_id},
            "message": message,
            "labels": {"numpy_version": np.__version__, "scipy_version": scipy.__version__},
            "infograd": context,
        }

    def log_run_start(self, command: str, argv: List[str], seed: Optional[int] = None,
                      suite: Optional[str] = None) -> str:
        """Open a run and return its id; command, seed and suite ride on every later event"""
        run_id = str(uuid.uuid4())
        self._runs[run_id] = {"command": command, "seed": seed}
        if suite is not None:
            self._runs[run_id]["suite"] = suite

        event = self._create_base_event("run_start", f"Run started: infograd {command}", run_id, "input")
        event["event"]["type"] = ["start"]
        event["event"]["outcome"] = "success"
        event["process"]["args"] = ["infograd", *argv]
        self._write_event(event)
        return run_id

    def log_inputs(self, run_id: str, inputs: Dict[str, Dict[str, Any]]):
        """Record the content digest of every input file"""
        if not inputs:
            return
        event = self._create_base_event("inputs_hashed", f"Hashed {len(inputs)} input file(s)", run_id, "input")
        event["event"]["outcome"] = "success"
        event["infograd"]["inputs"] = [
            {"role": role, "file": {"path": item["path"], "hash": {"sha256": item["sha256"]}}}
            for role, item in sorted(inputs.items())
        ]
        self._write_event(event)

    def log_computation(self, run_id: str, summary: Dict[str, Any], duration_ms: int):
        """Headline numbers of the finished computation (scalars only)"""
        event = self._create_base_event("computation", "Computation finished", run_id, "computation")
        event["event"]["outcome"] = "success"
        event["event"]["duration"] = duration_ms * 1000000  # nanoseconds
        event["infograd"]["summary"] = {k: v for k, v in summary.items() if isinstance(v, (int, float, str, bool))}
        self._write_event(event)

    def log_verification(self, run_id: str, check: Dict[str, Any]):
        """One verification check; informational findings never count as failures"""
        passed = check["passed"] or check.get("informational", False)
        event = self._create_base_event("verification_check",
                                        f"Check {check['name']}: {'PASSED' if check['passed'] else 'FAILED'}",
                                        run_id, "verification")
        event["event"]["outcome"] = "success" if passed else "failure"
        event["infograd"]["check"] = {
            "name": check["name"],
            "passed": check["passed"],
            "informational": check.get("informational", False),
            "metric": check.get("metric"),
            "tolerance": check.get("tolerance"),
        }
        self._write_event(event)

    def log_error(self, run_id: str, error: Exception, duration_ms: int = 0, exit_code: Optional[int] = None):
        """A failed run: the exception type doubles as the ECS error type"""
        event = self._create_base_event("error", f"{type(error).__name__}: {error}", run_id, "error")
        event["event"]["type"] = ["error"]
        event["event"]["outcome"] = "failure"
        event["event"]["duration"] = duration_ms * 1000000  # nanoseconds
        event["error"] = {"message": str(error), "type": type(error).__name__}
        if exit_code is not None:
            event["infograd"]["exit_code"] = exit_code
        self._write_event(event)

    def log_run_complete(self, run_id: str, exit_code: int, total_duration_ms: int):
        event = self._create_base_event("run_complete", f"Run finished with exit code {exit_code}",
                                        run_id, "complete")
        event["event"]["type"] = ["end"]
        event["event"]["outcome"] = "success" if exit_code == 0 else "failure"
        event["event"]["duration"] = total_duration_ms * 1000000  # nanoseconds
        event["infograd"]["exit_code"] = exit_code
        event["infograd"]["total_duration_ms"] = total_duration_ms
        self._runs.pop(run_id, None)
        self._write_event(event)

    def _write_event(self, event: Dict[str, Any]):
        """Append one JSON line; a failing log file is reported once and then ignored"""
        if not self.log_file or self._write_failed:
            return
        try:
            with Path(self.log_file).open('a', encoding='utf-8') as f:
                f.write(json.dumps(event, ensure_ascii=False, sort_keys=True, default=str) + '\n')
        except OSError as e:
            self._write_failed = True
            logger.warning(f"Event log {self.log_file} is not writable, events are dropped: {e}")


run_logger = ECSLogger(log_file=settings.log_file or None)
