"""Python access to the soke text-to-sign pipeline.

Configuration dictionaries mirror the JSON run configuration; see
``default_config()`` for every key.
"""

import json

from ._soke import (
    ConfigError,
    SokeError,
    StageError,
    __version__,
    dtw,
    forward_kinematics,
    pa_mpjpe,
    procrustes_align,
    quantize,
)
from . import _soke

__all__ = [
    "ConfigError",
    "SokeError",
    "StageError",
    "__version__",
    "default_config",
    "dtw",
    "forward_kinematics",
    "load_config",
    "pa_mpjpe",
    "procrustes_align",
    "quantize",
    "run_pipeline",
    "synthesize",
    "verify_manifest",
]


def default_config():
    return json.loads(_soke._default_config())


def load_config(path="", overrides=()):
    """Reads a config file (defaults when ``path`` is empty) and applies
    ``key.path=value`` overrides."""
    return json.loads(_soke._load_config(str(path), list(overrides)))


def _dump(config):
    return json.dumps(config if config is not None else {})


def synthesize(config=None, split="train"):
    """Synthetic sequences as dicts with text, lang, fps and a (T, d) float32 array."""
    return _soke._synthesize(_dump(config), split)


def run_pipeline(config, force=False):
    """Runs every stale stage into config["paths"]["run_dir"]; returns the report aggregates."""
    return json.loads(_soke._run_pipeline(_dump(config), force))


def verify_manifest(run_dir):
    """Paths whose SHA-256 no longer matches the manifest (empty when intact)."""
    return _soke._verify_manifest(str(run_dir))
