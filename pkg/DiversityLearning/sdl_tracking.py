"""
Optional MLflow experiment tracking.

mlflow is imported only when a tracker is created, so training and evaluation
never depend on it. The tracking URI comes from MLFLOW_TRACKING_URI when set.
"""

import logging
import os
import re
from typing import Mapping, Optional

logger = logging.getLogger(__name__)

# MLflow accepts word characters, '.', '-', ' ', '/' and ':' in metric names
_INVALID_KEY_CHARS = re.compile(r"[^\w.\- /:]")


def metric_key(name: str) -> str:
    return _INVALID_KEY_CHARS.sub("_", name)


class RunTracker:
    """Thin wrapper over one MLflow run; every method is a no-op when disabled"""

    def __init__(self, enabled: bool = False, experiment: str = "semantic-diversity",
                 run_name: Optional[str] = None):
        self.enabled = enabled
        self._mlflow = None
        if not enabled:
            return
        try:
            import mlflow
        except ImportError as e:
            logger.warning(f"Tracking disabled, mlflow is not importable: {e}")
            self.enabled = False
            return

        tracking_uri = os.getenv('MLFLOW_TRACKING_URI')
        if tracking_uri:
            mlflow.set_tracking_uri(tracking_uri)
        mlflow.set_experiment(experiment)
        mlflow.start_run(run_name=run_name)
        self._mlflow = mlflow
        logger.info(f"✓ MLflow run started in experiment {experiment!r}")

    def log_params(self, params: Mapping[str, object]) -> None:
        if self.enabled:
            self._mlflow.log_params({k: str(v) for k, v in params.items()})

    def log_metrics(self, metrics: Mapping[str, object], step: Optional[int] = None) -> None:
        if not self.enabled:
            return
        numeric = {
            metric_key(k): float(v) for k, v in metrics.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
        }
        self._mlflow.log_metrics(numeric, step=step)

    def log_epoch(self, record: Mapping[str, object]) -> None:
        """Callback for the training loop"""
        self.log_metrics({k: v for k, v in record.items() if k != 'epoch'}, step=int(record['epoch']))

    def log_artifact(self, path: str) -> None:
        if self.enabled:
            self._mlflow.log_artifact(path)

    def close(self) -> None:
        if self.enabled:
            self._mlflow.end_run()
            self.enabled = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
