"""Pytest configuration and hooks."""

import os

import pytest

from transfergrad import datasets as ds
from transfergrad import models as md

TINY_CLASSES = 4
TINY_SIZE = 12
TINY_SEED = 3


def pytest_collection_modifyitems(config, items):
    """Skip desk-scale experiments unless TRANSFERGRAD_DESK_SCALE=1."""
    if os.environ.get("TRANSFERGRAD_DESK_SCALE", "").strip().lower() in ("1", "true", "yes"):
        return
    skip = pytest.mark.skip(reason="desk-scale experiment; set TRANSFERGRAD_DESK_SCALE=1")
    for item in items:
        if "integration" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def no_ambient_env(monkeypatch):
    """Tests never pick up a seed or output dir from the developer's shell or .env."""
    monkeypatch.delenv("TRANSFERGRAD_SEED", raising=False)
    monkeypatch.delenv("TRANSFERGRAD_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("TRANSFERGRAD_TELEMETRY", raising=False)


@pytest.fixture(scope="session")
def tiny_splits() -> ds.DatasetSplits:
    data = ds.gen_synthetic(TINY_CLASSES, 40, TINY_SIZE, TINY_SEED, contrast=1.0)
    return ds.split_dataset(data, TINY_SEED, test_fraction=0.25, attack_size=12)


@pytest.fixture(scope="session")
def tiny_specs(tiny_splits) -> dict[str, md.ArchitectureSpec]:
    shape = tiny_splits.image_shape
    return {
        "mlp": md.ArchitectureSpec("mlp", (32,), shape, TINY_CLASSES),
        "cnn": md.ArchitectureSpec("cnn", (4,), shape, TINY_CLASSES, head_width=16),
    }


@pytest.fixture(scope="session")
def tiny_models(tiny_splits, tiny_specs) -> dict[str, md.Classifier]:
    """Two small classifiers trained on the tiny split; shared by the whole session."""
    trained = {}
    for i, (name, spec) in enumerate(tiny_specs.items()):
        cfg = md.TrainConfig(epochs=8, batch_size=16, learning_rate=0.05, seed=10 + i)
        trained[name] = md.train(md.build(spec, 10 + i), tiny_splits.train, cfg).model
    return trained
