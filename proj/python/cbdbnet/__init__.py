"""Python access to the cbdb re-identification core."""

import json

from . import _core
from ._core import (
    ConfigError,
    DegenerateBatchError,
    DimensionError,
    NumericError,
    batch_hard_mine,
    drop_patch_mask,
    elastic_triplet_loss,
    elastic_weight,
    hard_triplet_loss,
    k_reciprocal_rerank,
    overlap_row_partition,
    pairwise_sq_dist,
    uniform_row_partition,
)


def _dump(config):
    return config if isinstance(config, str) else json.dumps(config or {})


def resolve_config(config=None):
    """Fill in defaults and validate; returns the resolved config as a dict."""
    return json.loads(_core.resolve_config(_dump(config)))


def config_hash(config=None):
    return _core.config_hash(_dump(config))


def run_experiment(config=None):
    """Generate data, train, evaluate. Returns the metrics dict."""
    return json.loads(_core.run_experiment(_dump(config)))


def evaluate_distances(dist, query_ids, query_cams, gallery_ids, gallery_cams, ks=(1, 5, 10)):
    return json.loads(
        _core.evaluate_distances(dist, list(query_ids), list(query_cams), list(gallery_ids),
                                 list(gallery_cams), list(ks)))


def gradcheck(trials=10, seed=7):
    return json.loads(_core.gradcheck(trials, seed))


__all__ = [
    "ConfigError", "DegenerateBatchError", "DimensionError", "NumericError",
    "batch_hard_mine", "config_hash", "drop_patch_mask", "elastic_triplet_loss",
    "elastic_weight", "evaluate_distances", "gradcheck", "hard_triplet_loss",
    "k_reciprocal_rerank", "overlap_row_partition", "pairwise_sq_dist",
    "resolve_config", "run_experiment", "uniform_row_partition",
]
