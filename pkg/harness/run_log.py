"""
Harness Run Log
In-memory event log kept by every training run.

Entries are plain dicts with a ``log_type``, a sequential ``log_id``, the
event payload and a wall-clock ``timestamp``. Timestamps stay in memory;
only ``get_statistics`` (which has none) is written to result files.
"""

import logging
import time
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunEventLog:
    """
    Event log of one training run.

    Records:
    - run start and finish
    - episode summaries
    - exploration phase boundaries
    - anomalies such as numerical failures
    """

    def __init__(self, run_name: str):
        self.run_name = run_name
        self.logs: List[Dict[str, Any]] = []
        self.episode_count = 0
        self.anomaly_count = 0

    def _append(self, log_type: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        entry = {
            "log_type": log_type,
            "log_id": len(self.logs),
            "timestamp": time.time(),
        }
        entry.update(payload)
        self.logs.append(entry)
        return entry

    def log_run_started(self, config: Dict[str, Any]):
        self._append("run_started", {"config": config})
        logger.info("%s: run started", self.run_name)

    def log_episode(self, episode: int, episode_return: float, meta_decisions: int, truncated: bool):
        self._append("episode", {
            "episode": episode,
            "return": episode_return,
            "meta_decisions": meta_decisions,
            "truncated": truncated,
        })
        self.episode_count += 1
        logger.debug("%s: episode %d return %.3f (%d decisions%s)", self.run_name, episode,
                     episode_return, meta_decisions, ", truncated" if truncated else "")

    def log_phase(self, phase: str, episode: int):
        self._append("phase", {"phase": phase, "episode": episode})
        logger.info("%s: %s from episode %d", self.run_name, phase, episode)

    def log_anomaly(self, reason: str, context: Dict[str, Any]):
        self._append("anomaly", {"reason": reason, "context": context})
        self.anomaly_count += 1
        logger.warning("%s: %s", self.run_name, reason)

    def log_run_finished(self, summary: Dict[str, Any]):
        self._append("run_finished", {"summary": summary})
        logger.info("%s: run finished", self.run_name)

    def get_logs(self, log_type: Optional[str] = None) -> List[Dict[str, Any]]:
        """Retrieve logs, optionally filtered by type."""
        if log_type:
            return [log for log in self.logs if log.get("log_type") == log_type]
        return self.logs.copy()

    def get_statistics(self) -> Dict[str, Any]:
        episodes = self.get_logs("episode")
        returns = [log["return"] for log in episodes]
        return {
            "run": self.run_name,
            "total_logs": len(self.logs),
            "episodes": self.episode_count,
            "anomalies": self.anomaly_count,
            "truncated_episodes": sum(1 for log in episodes if log["truncated"]),
            "mean_return": sum(returns) / len(returns) if returns else 0.0,
        }
