"""Task streams, the training loop, metrics, configuration and persistence."""

from clref.harness.config import RunConfig, config_from_dict, load_config
from clref.harness.data import load_base_data, load_idx_dataset
from clref.harness.metrics import AccuracyMatrix, compute_metrics
from clref.harness.persist import persist_results
from clref.harness.streams import StreamSpec, TaskStream, build_task_stream
from clref.harness.training import RunResult, run_sequence

__all__ = [
    "AccuracyMatrix", "RunConfig", "RunResult", "StreamSpec", "TaskStream", "build_task_stream",
    "compute_metrics", "config_from_dict", "load_base_data", "load_config", "load_idx_dataset",
    "persist_results", "run_sequence",
]
