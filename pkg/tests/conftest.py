"""Shared fixtures: a tiny synthesized dataset and a reduced CANet run config."""

from __future__ import annotations

from pathlib import Path

import pytest

from src.config import (
    DatasetConfig,
    EvalConfig,
    ModelConfig,
    OptimConfig,
    RunConfig,
    TrainConfig,
)
from src.storage import generate_dataset

TINY_DATASET = DatasetConfig(train=8, val=4, test=4, n_y=8, n_x=8, m_t=2, master_seed=7)


def tiny_run_config(**train_changes) -> RunConfig:
    """Width/16, one ConvNeXt block, 8x8 ports, M_t=2: a full run takes seconds."""
    return RunConfig(
        dataset=TINY_DATASET,
        model=ModelConfig(width_divisor=16, convnext_depth=1, dropout=0.0),
        optim=OptimConfig(batch_size=4, epochs=1),
        train=TrainConfig(**{"snrs_db": (10.0, 20.0), **train_changes}),
        eval=EvalConfig(observed_counts=(26, 51), snrs_db=(10.0,), batch_size=4),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("dataset")
    generate_dataset(RunConfig(dataset=TINY_DATASET), out)
    return out
