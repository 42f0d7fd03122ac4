"""Cross-modal retrieval benchmark harness.

Thin dict-friendly wrappers over the compiled core: synthetic dataset
generation, class-disjoint fold planning, the full evaluation grid, and the
ranking metrics.
"""

import json as _json

from ._core import (
    Dataset,
    average_precision,
    cmc_from_first_ranks,
    expected_ap_with_ties,
)
from ._core import (
    config_hash_json as _config_hash_json,
)
from ._core import (
    fold_plan_json as _fold_plan_json,
)
from ._core import (
    run_benchmark_json as _run_benchmark_json,
)
from ._core import (
    score_run_json as _score_run_json,
)

__all__ = [
    "Dataset",
    "average_precision",
    "cmc_from_first_ranks",
    "config_hash",
    "expected_ap_with_ties",
    "fold_plan",
    "run",
    "score_run",
    "synthetic_dataset",
]


def synthetic_dataset(spec=None):
    """Generate the synthetic benchmark dataset; spec is a dict of overrides."""
    return Dataset.synthetic(_json.dumps(spec or {}))


def fold_plan(dataset, folds=5, seed=7, fraction_db=0.8):
    """Class-disjoint fold plan for a dataset, as a dict."""
    return _json.loads(_fold_plan_json(dataset, folds, seed, fraction_db))


def run(config, out_dir="", jobs=0):
    """Execute a benchmark config (dict or JSON text); returns the report dict.

    When out_dir is given, report.json, summary.csv, per-cell CMC curves and
    manifest.json are also written there.
    """
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _json.loads(_run_benchmark_json(config, str(out_dir), jobs))


def config_hash(config):
    """Canonical hash of a fully-defaulted run config."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _config_hash_json(config)


def score_run(run_path, qrels_path):
    """Score an existing run file against a sample_id,labels CSV."""
    return _json.loads(_score_run_json(str(run_path), str(qrels_path)))
