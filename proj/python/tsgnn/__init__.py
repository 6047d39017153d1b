"""Two-stage metric-learning training for graph neural networks."""

import json as _json

from ._core import (
    ConfigError,
    ContractViolation,
    DomainError,
    FormatError,
    GraphDataset,
    IoError,
    __version__,
    avg_abs_correlation,
    clique_path_dataset,
    explained_variance,
    intrinsic_dimension,
    load_dataset,
    load_tudataset,
    sample_triplets,
    triplet_loss,
)
from . import _core


def run_trial(dataset, **config):
    """Train one trial; keyword arguments override TrainConfig fields.

    Nested sections go in as dicts, e.g. model={"output_dim": 64}.
    Returns the trial record as a dict.
    """
    return _json.loads(_core._run_trial(dataset, _json.dumps(config)))


def run_experiment(config_path, out_dir, jobs=1):
    return _core._run_experiment(str(config_path), str(out_dir), jobs)


def report(out_dir):
    return _json.loads(_core._report_json(str(out_dir)))
