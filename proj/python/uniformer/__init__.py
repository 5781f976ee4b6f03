# SPDX-License-Identifier: Apache-2.0
"""UniFormer video transformer: model, analysis, sampling and toy training.

Configurations are given as a preset name ("S", "S-dagger", "B", "L",
"tiny"), a path to a JSON file, or a dict with the configuration fields.
"""

import json
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from . import _core
from ._core import (
    UniformerError,
    dense_sample,
    inflate_2d,
    load_tensor,
    lr_at,
    preset_names,
    save_tensor,
    uniform_sample,
)

ConfigLike = Union[str, Dict[str, Any]]

__all__ = [
    "Model",
    "UniformerError",
    "config",
    "count_flops",
    "count_params",
    "dense_sample",
    "inflate_2d",
    "load_tensor",
    "lr_at",
    "multi_view_average",
    "preset_names",
    "save_tensor",
    "shape_trace",
    "train_toy",
    "uniform_sample",
]


def _config_json(cfg: ConfigLike) -> str:
    if isinstance(cfg, dict):
        return _core.normalize_config_json(json.dumps(cfg))
    return _core.config_json(cfg)


def config(cfg: ConfigLike) -> Dict[str, Any]:
    """Resolved configuration as a dict."""
    return json.loads(_config_json(cfg))


def count_params(cfg: ConfigLike) -> int:
    return _core.count_params(_config_json(cfg))


def count_flops(cfg: ConfigLike, input_shape: Sequence[int], views: int = 1) -> Dict[str, Any]:
    return _core.count_flops(_config_json(cfg), list(input_shape), views)


def shape_trace(cfg: ConfigLike, input_shape: Sequence[int]) -> List[tuple]:
    return [(name, tuple(shape)) for name, shape in _core.shape_trace(_config_json(cfg), list(input_shape))]


def multi_view_average(logits: Iterable[np.ndarray]) -> np.ndarray:
    return _core.multi_view_average([np.asarray(l, dtype=np.float64) for l in logits])


def train_toy(
    cfg: ConfigLike = "tiny",
    train_config: Optional[Dict[str, Any]] = None,
    classes: int = 4,
    clips_per_class: int = 2,
    clip_shape: Sequence[int] = (3, 8, 32, 32),
) -> Dict[str, Any]:
    """Train on the synthetic motion dataset; returns the step log and final accuracy."""
    tc = json.loads(_core.default_train_config_json())
    tc.update(train_config or {})
    return _core.train_toy(_config_json(cfg), json.dumps(tc), classes, clips_per_class, list(clip_shape))


class Model(_core.Model):
    """UniFormer in float64. Inputs are [B, 3, T, H, W] arrays."""

    def __init__(self, cfg: ConfigLike = "tiny", seed: int = 0):
        super().__init__(_config_json(cfg), seed)

    def __call__(self, x: np.ndarray, train: bool = False, seed: int = 0) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64), train, seed)
