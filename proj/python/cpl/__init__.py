"""Continual predictive learning: world model, predictive replay and task inference."""

import json
import os

import torch  # noqa: F401  loads libtorch before the extension

from . import _cpl
from ._cpl import (
    ConfigError,
    IngestionError,
    Model,
    NumericalError,
    argmin_task,
    fraction_count,
    gaussian_kl,
    load_checkpoint,
    psnr,
    split_replay_volume,
    ssim,
)

__all__ = [
    "ConfigError",
    "IngestionError",
    "Model",
    "NumericalError",
    "ablate",
    "argmin_task",
    "evaluate",
    "fraction_count",
    "gaussian_kl",
    "generate",
    "load_checkpoint",
    "parse_config",
    "psnr",
    "split_replay_volume",
    "ssim",
    "train",
]


def _text(config):
    if isinstance(config, dict):
        return json.dumps(config)
    with open(os.fspath(config)) as f:
        return f.read()


def parse_config(config):
    """Resolved config (defaults filled in) as a dict."""
    return json.loads(_cpl.parse_config(_text(config)))


def generate(config, force=False, seed=None):
    return _cpl.generate(_text(config), force, seed)


def train(config, resume=False, seed=None, mode=None, desk_scale=False):
    return _cpl.train(_text(config), resume, seed, mode, desk_scale)


def evaluate(config, checkpoint):
    return _cpl.evaluate(_text(config), os.fspath(checkpoint))


def ablate(config):
    return _cpl.ablate(_text(config))
