"""Python front end for the outlier exposure workbench."""

import json

from . import _oex
from ._oex import (
    ConfigError,
    DataError,
    NumericError,
    aupr,
    auroc,
    fpr_at_tpr,
    gradcheck,
    mmd_rbf,
    split_half_mmd,
    verify_bound,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "aupr",
    "auroc",
    "config_digest",
    "default_config",
    "extrapolate",
    "fpr_at_tpr",
    "generate_benchmark",
    "gradcheck",
    "load_config",
    "mmd_rbf",
    "run_pipeline",
    "split_half_mmd",
    "verify_bound",
]


def default_config():
    return json.loads(_oex.default_config_json())


def load_config(overrides=None):
    """Merge a (possibly partial) config dict with the defaults, strictly."""
    return json.loads(_oex.normalize_config_json(json.dumps(overrides or {})))


def config_digest(config=None):
    return _oex.config_digest_json(json.dumps(config or {}))


def generate_benchmark(config=None):
    return _oex.generate_benchmark_json(json.dumps(config or {}))


def run_pipeline(config=None):
    """Generate data, pretrain, fine-tune and evaluate. Returns reports and the model."""
    out = _oex.run_pipeline_json(json.dumps(config or {}))
    return {
        "reports": json.loads(out["reports"])["reports"],
        "model": json.loads(out["model"]),
        "history_csv": out["history_csv"],
    }


def extrapolate(model, x, epsilon=0.05, steps=5, target="uniform"):
    return _oex.extrapolate_json(json.dumps(model), x, epsilon, steps, target)
