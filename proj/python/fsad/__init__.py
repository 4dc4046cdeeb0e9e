"""Few-shot anomaly detection on exported patch features.

Thin wrapper over the C++ core.  Configs and reports are plain dicts.
"""

import json as _json

from . import _core
from ._core import (
    FsadError,
    affine_warp,
    gaussian_w2,
    read_features,
    register_affine,
    roc_auc,
    synthetic_dataset,
    write_features,
)

__all__ = [
    "FsadError",
    "affine_warp",
    "bench",
    "default_config",
    "evaluate",
    "fit",
    "gaussian_w2",
    "load_manifest",
    "read_features",
    "register",
    "register_affine",
    "roc_auc",
    "score",
    "select_aug",
    "select_augmentations",
    "synthetic_dataset",
    "write_features",
]


def _cfg(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else _json.dumps(config)


def default_config():
    return _json.loads(_core.default_config())


def load_manifest(path):
    return _json.loads(_core.load_manifest(str(path)))


def fit(manifest, model_out, config=None):
    _core.fit(_cfg(config), str(manifest), str(model_out))


def score(model, manifest, out_dir, config=None):
    return _json.loads(_core.score(_cfg(config), str(model), str(manifest), str(out_dir)))


def evaluate(manifest, report_out, model=None, config=None):
    return _json.loads(
        _core.evaluate(_cfg(config), str(manifest), None if model is None else str(model), str(report_out))
    )


def select_aug(manifest, report_out, config=None):
    return _json.loads(_core.select_aug(_cfg(config), str(manifest), str(report_out)))


def select_augmentations(weighted_distances):
    return _json.loads(_core.select_augmentations(dict(weighted_distances)))


def register(manifest, manifest_out, config=None):
    return _json.loads(_core.register(_cfg(config), str(manifest), str(manifest_out)))


def bench(D=448, D_prime=100, K=2, H=56, W=56, gamma=0.1):
    return _json.loads(_core.bench(D, D_prime, K, H, W, gamma))
