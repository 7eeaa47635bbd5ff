import os

import pytest

from meshflow import fixtures
from meshflow.dataset import DatasetSpec, build_dataset
from meshflow.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Desk-scale dataset A: one small object, 6 steps, 32-point clouds."""
    root = tmp_path_factory.mktemp("data")
    manifest = build_dataset(DatasetSpec(
        dataset_id="A",
        objects={"ico": fixtures.icosahedron()},
        out_dir=str(root),
        seed=11,
        sigma=0.02,
        n_points=32,
        n_steps=6,
    ))
    return manifest


def tiny_train_config(manifest, **overrides) -> TrainConfig:
    defaults = dict(
        manifest_path=os.path.join(manifest.root, "manifest.json"),
        stage="pretrain_ae",
        embed_dim=16,
        encoder_widths=(8, 16),
        decoder_widths=(16, 32),
        proj_dim=16,
        coupling_hidden=32,
        n_blocks=2,
        point_count=32,
        epochs=3,
        seed=5,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)
