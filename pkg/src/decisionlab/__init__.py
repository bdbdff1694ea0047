"""Desk-scale laboratory for supervised pretraining of sequence policies
on bandit-style decision tasks."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    baselines,
    bayes,
    core,
    envs,
    evalsuite,
    model,
    pretrain,
    rng,
    spaces,
    trainer,
)
