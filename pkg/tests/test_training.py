import dataclasses
import os

import numpy as np
import pytest

from conftest import tiny_train_config
from meshflow.dataset import load_manifest
from meshflow.encoder import encode
from meshflow.errors import CheckpointError, ConfigError
from meshflow.geometry import chamfer_bruteforce, read_mesh, read_pointcloud
from meshflow.training import (
    Checkpoint,
    MetricsLog,
    TrainConfig,
    checkpoint_io,
    init_bundle,
    load_checkpoint,
    pack_bundle,
    pretrain_autoencoder,
    save_checkpoint,
    train_flow,
    unpack_checkpoint,
)


class TestCheckpointFormat:
    def test_save_load_save_byte_identical(self, tmp_path, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=2)
        ckpt = pretrain_autoencoder(cfg)
        p1 = str(tmp_path / "a.ckpt")
        p2 = str(tmp_path / "b.ckpt")
        save_checkpoint(p1, ckpt)
        save_checkpoint(p2, load_checkpoint(p1))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_reload_reproduces_encodings_bitwise(self, tmp_path, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=2)
        ckpt = pretrain_autoencoder(cfg)
        path = str(tmp_path / "ae.ckpt")
        checkpoint_io(path, ckpt)
        back = checkpoint_io(path)
        rng = np.random.default_rng(0)
        cloud = rng.standard_normal((20, 3))
        a = encode(cloud, unpack_checkpoint(ckpt).encoder)
        b = encode(cloud, unpack_checkpoint(back).encoder)
        assert np.array_equal(a, b)

    def test_truncated_file_rejected(self, tmp_path, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=1)
        path = str(tmp_path / "trunc.ckpt")
        save_checkpoint(path, pretrain_autoencoder(cfg))
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "junk.ckpt")
        open(path, "wb").write(b"NOPE" + b"\x00" * 100)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=1)
        path = str(tmp_path / "v.ckpt")
        save_checkpoint(path, pretrain_autoencoder(cfg))
        blob = bytearray(open(path, "rb").read())
        blob[4:8] = (99).to_bytes(4, "little")
        open(path, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_block_count_mismatch_is_config_error(self, tmp_path, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=1)
        ae = pretrain_autoencoder(cfg)
        flow_cfg = dataclasses.replace(cfg, stage="train_flow", epochs=1)
        ckpt = train_flow(flow_cfg, ae)
        ckpt.config["n_blocks"] = 5  # claims more blocks than the tensors hold
        with pytest.raises(ConfigError):
            unpack_checkpoint(ckpt)

    def test_embed_dim_mismatch_between_stages(self, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=1)
        ae = pretrain_autoencoder(cfg)
        bad = tiny_train_config(tiny_dataset, stage="train_flow", epochs=1, embed_dim=8)
        with pytest.raises(ConfigError, match="embed_dim"):
            train_flow(bad, ae)

    def test_unknown_config_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            TrainConfig.from_dict({"not_a_field": 1})


class TestPretrainAutoencoder:
    def test_deterministic_runs_byte_identical(self, tmp_path, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=3)
        log1, log2 = MetricsLog(), MetricsLog()
        c1 = pretrain_autoencoder(cfg, log=log1)
        c2 = pretrain_autoencoder(cfg, log=log2)
        assert log1.rows == log2.rows
        p1, p2 = str(tmp_path / "1.ckpt"), str(tmp_path / "2.ckpt")
        save_checkpoint(p1, c1)
        save_checkpoint(p2, c2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_zero_epochs_keeps_initialized_params(self, tiny_dataset):
        cfg = tiny_train_config(tiny_dataset, epochs=0)
        ckpt = pretrain_autoencoder(cfg)
        fresh = pack_bundle(init_bundle(cfg, with_flow=False))
        assert set(ckpt.tensors) == set(fresh.tensors)
        for name in ckpt.tensors:
            assert np.array_equal(ckpt.tensors[name], fresh.tensors[name]), name

    def test_loss_drops_on_tiny_set(self, tiny_dataset):
        log = MetricsLog()
        pretrain_autoencoder(tiny_train_config(tiny_dataset, epochs=40), log=log)
        losses = [row[3] for row in log.rows]
        assert losses[-1] < 0.5 * losses[0]

    def test_point_count_mismatch_rejected(self, tiny_dataset):
        with pytest.raises(ConfigError, match="point_count"):
            pretrain_autoencoder(tiny_train_config(tiny_dataset, point_count=64))

    def test_empty_train_split_rejected(self, tmp_path, tiny_dataset):
        import json
        src = os.path.join(tiny_dataset.root, "manifest.json")
        payload = json.load(open(src))
        for e in payload["entries"]:
            e["split"] = "test"
        dst_dir = tmp_path / "alltest"
        dst_dir.mkdir()
        dst = str(dst_dir / "manifest.json")
        json.dump(payload, open(dst, "w"))
        cfg = tiny_train_config(tiny_dataset)
        cfg = dataclasses.replace(cfg, manifest_path=dst)
        with pytest.raises(ConfigError, match="train split"):
            pretrain_autoencoder(cfg)

    def test_metrics_csv_written(self, tmp_path, tiny_dataset):
        out = str(tmp_path / "run")
        cfg = tiny_train_config(tiny_dataset, epochs=2, out_dir=out)
        pretrain_autoencoder(cfg)
        lines = open(os.path.join(out, "pretrain_ae_metrics.csv")).read().splitlines()
        assert lines[0] == "epoch,split,loss_name,value"
        assert len(lines) == 3
        assert lines[1].startswith("0,train,L_CDR,")


@pytest.fixture(scope="module")
def ae_ckpt(tiny_dataset):
    return pretrain_autoencoder(tiny_train_config(tiny_dataset, epochs=5))


class TestTrainFlow:
    def test_identity_start_loss_equals_template_chamfer(self, tiny_dataset, ae_ckpt):
        # one train entry so the first epoch mean is the first-step loss
        cfg = tiny_train_config(tiny_dataset, stage="train_flow", epochs=1,
                                cross_check_loss=True)
        log = MetricsLog()
        train_flow(dataclasses.replace(cfg, lr_flow=0.0), ae_ckpt, log=log)
        manifest = load_manifest(cfg.manifest_path)
        entries = manifest.split_entries("train")
        expected = np.mean([
            chamfer_bruteforce(
                read_mesh(manifest.resolve(e.template_path)).vertices,
                read_mesh(manifest.resolve(e.mesh_path)).vertices)
            for e in entries])
        assert abs(log.rows[0][3] - expected) < 1e-9

    def test_frozen_encoder_tensors_bit_identical(self, tiny_dataset, ae_ckpt):
        cfg = tiny_train_config(tiny_dataset, stage="train_flow", epochs=2,
                                encoder_frozen=True, lr_flow=1e-3)
        out = train_flow(cfg, ae_ckpt)
        for name, arr in ae_ckpt.tensors.items():
            if name.startswith("encoder."):
                assert np.array_equal(out.tensors[name], arr), name
        for name, arr in ae_ckpt.tensors.items():
            if name.startswith("decoder."):
                assert np.array_equal(out.tensors[name], arr), name

    def test_end_to_end_changes_encoder(self, tiny_dataset, ae_ckpt):
        cfg = tiny_train_config(tiny_dataset, stage="end_to_end", epochs=2, lr_flow=1e-3)
        out = train_flow(cfg, ae_ckpt)
        changed = any(
            not np.array_equal(out.tensors[name], arr)
            for name, arr in ae_ckpt.tensors.items() if name.startswith("encoder."))
        assert changed

    def test_deterministic_flow_runs(self, tmp_path, tiny_dataset, ae_ckpt):
        cfg = tiny_train_config(tiny_dataset, stage="train_flow", epochs=2, lr_flow=1e-3)
        p1, p2 = str(tmp_path / "f1.ckpt"), str(tmp_path / "f2.ckpt")
        save_checkpoint(p1, train_flow(cfg, ae_ckpt))
        save_checkpoint(p2, train_flow(cfg, ae_ckpt))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_single_pair_overfit(self, tmp_path):
        # one object, one deformation step, 500 updates at the default flow lr
        from meshflow import fixtures
        from meshflow.dataset import DatasetSpec, build_dataset
        manifest = build_dataset(DatasetSpec(
            dataset_id="A", objects={"sphere": fixtures.icosphere(2)},
            out_dir=str(tmp_path), seed=2, sigma=0.02, n_points=32, n_steps=1))
        cfg = tiny_train_config(manifest, epochs=10)
        ae = pretrain_autoencoder(cfg)
        flow_cfg = dataclasses.replace(cfg, stage="train_flow", epochs=500,
                                       n_blocks=6, lr_flow=1e-4)
        log = MetricsLog()
        train_flow(flow_cfg, ae, log=log)
        assert log.rows[-1][3] < 1e-4

    def test_cross_check_hook_runs(self, tiny_dataset, ae_ckpt):
        cfg = tiny_train_config(tiny_dataset, stage="train_flow", epochs=1,
                                lr_flow=1e-3, cross_check_loss=True)
        train_flow(cfg, ae_ckpt)  # raises NumericError if the wiring drifts
