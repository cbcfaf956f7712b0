"""Shared fixtures: tiny model/task pairings sized for fast tests."""

from __future__ import annotations

import pytest

from repadapt.config import RunConfig
from repadapt.synthetic import SyntheticTaskSpec, generate_synthetic_task, split_classes
from repadapt.trainer import ModelConfig


TINY_MODEL = dict(L=2, heads=2, d_v=8, d_t=8, d=8, d_r=4, K=2, J=2, r1=2, r2=2,
                  M=4, N=8, vocab=16, beta=0.9)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(variant="shared", **TINY_MODEL)


@pytest.fixture
def tiny_task(tiny_model_config):
    spec = SyntheticTaskSpec(classes=2, shots=2, grid=2, separation=3.0,
                             template_len=2, seed=0, eval_shots=2)
    return generate_synthetic_task(spec, d_v=tiny_model_config.d_v,
                                   vocab=tiny_model_config.vocab,
                                   max_len=tiny_model_config.N)


@pytest.fixture
def small_run_config():
    """A quick multi-seed experiment at desk widths."""
    return RunConfig(steps=30, batch=4, seeds=(1, 2), classes=4, shots=4)


def make_task(config: RunConfig):
    task = generate_synthetic_task(config.task_spec(), d_v=config.d_v,
                                   vocab=config.model_config().vocab,
                                   max_len=config.model_config().N)
    return task, split_classes(config.classes)
