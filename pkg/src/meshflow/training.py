"""Two-stage training orchestration, checkpoints, and metric logs.

Stage one pretrains the autoencoder on the train-split clouds with the
chamfer reconstruction loss. Stage two trains the flow: each step encodes the
deformed cloud, deforms the template vertices, and minimizes the chamfer
distance to the ground-truth deformed vertices; the encoder trains along only
when it is not frozen. Runs are fully determined by (seed, config, manifest):
two identical runs produce byte-identical checkpoints.

Checkpoint format (little-endian): magic `MFCK`, u32 version, u32 header
length, JSON header {config echo, tensor name/shape/offset table}, then the
raw float64 payload. Metrics log as CSV `epoch,split,loss_name,value`.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .chamfer import chamfer_loss
from .dataset import DatasetManifest, load_manifest
from .encoder import (
    DecoderParams,
    EncoderParams,
    ae_pretrain_step,
    encode,
    encoder_forward,
    init_decoder,
    init_encoder,
)
from .errors import CheckpointError, ConfigError, NumericError
from .flow import FlowModel, flow_forward, init_flow
from .geometry import chamfer_bruteforce, read_mesh, read_pointcloud
from .optim import AdamState, adam_step, clear_grads

CHECKPOINT_MAGIC = b"MFCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    manifest_path: str = ""
    stage: str = "pretrain_ae"        # pretrain_ae | train_flow | end_to_end
    encoder_frozen: bool = True       # used by the train_flow stage
    embed_dim: int = 1024
    n_blocks: int = 6
    encoder_widths: tuple = (64, 128, 256)
    decoder_widths: tuple = (512, 1024)
    proj_dim: int = 128
    coupling_hidden: int = 256
    lr_ae: float = 1e-3
    lr_flow: float = 1e-4
    epochs: int = 200
    seed: int = 0
    point_count: int = 5000
    out_dir: str = ""                 # when set, metrics CSV is written here
    cross_check_loss: bool = False    # verify each loss against the brute-force oracle

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        kwargs["encoder_widths"] = tuple(kwargs.get("encoder_widths", (64, 128, 256)))
        kwargs["decoder_widths"] = tuple(kwargs.get("decoder_widths", (512, 1024)))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class Checkpoint:
    config: dict
    tensors: dict = field(default_factory=dict)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    names = sorted(ckpt.tensors)
    table = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps({"config": ckpt.config, "tensors": table},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(ckpt.tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header_len = struct.unpack("<I", blob[8:12])[0]
    if len(blob) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    payload = blob[12 + header_len:]
    tensors = {}
    for item in header["tensors"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = item["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {item['name']!r}")
        tensors[item["name"]] = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
    return Checkpoint(config=header["config"], tensors=tensors)


def checkpoint_io(path: str, ckpt: Checkpoint | None = None) -> Checkpoint:
    """Write when given a checkpoint, read otherwise. Round-trips are bit-exact."""
    if ckpt is not None:
        save_checkpoint(path, ckpt)
        return ckpt
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# Bundles: live parameter structures <-> flat checkpoint tensors
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    config: TrainConfig
    encoder: EncoderParams
    decoder: DecoderParams
    flow: FlowModel | None
    opt: AdamState


def init_bundle(cfg: TrainConfig, with_flow: bool) -> ModelBundle:
    rng = np.random.default_rng(cfg.seed)
    enc = init_encoder(rng, cfg.embed_dim, cfg.encoder_widths)
    dec = init_decoder(rng, cfg.embed_dim, cfg.point_count, cfg.decoder_widths)
    flw = init_flow(rng, cfg.embed_dim, cfg.n_blocks, cfg.proj_dim,
                    cfg.coupling_hidden) if with_flow else None
    return ModelBundle(config=cfg, encoder=enc, decoder=dec, flow=flw, opt=AdamState())


def _bundle_tensors(bundle: ModelBundle) -> dict:
    tensors = {}
    for p in bundle.encoder.parameters() + bundle.decoder.parameters():
        tensors[p.name] = p.data
    for i, blk in enumerate(bundle.encoder.blocks):
        tensors[f"encoder.block{i}.running_mean"] = blk.bn.running_mean
        tensors[f"encoder.block{i}.running_var"] = blk.bn.running_var
    if bundle.flow is not None:
        for p in bundle.flow.parameters():
            tensors[p.name] = p.data
    tensors["adam.step"] = np.asarray(float(bundle.opt.step))
    for name, arr in bundle.opt.m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in bundle.opt.v.items():
        tensors[f"adam.v.{name}"] = arr
    return tensors


def pack_bundle(bundle: ModelBundle) -> Checkpoint:
    return Checkpoint(config=bundle.config.to_dict(), tensors=_bundle_tensors(bundle))


def unpack_checkpoint(ckpt: Checkpoint) -> ModelBundle:
    """Rebuild parameter structures; reject tensors inconsistent with the config."""
    cfg = TrainConfig.from_dict(ckpt.config)
    with_flow = any(name.startswith("flow.") for name in ckpt.tensors)
    bundle = init_bundle(cfg, with_flow=with_flow)
    expected = _bundle_tensors(bundle)
    stored = dict(ckpt.tensors)

    # optimizer moments exist only for parameters that have received updates
    adam_names = {n for n in stored if n.startswith(("adam.m.", "adam.v."))}
    param_names = {p.name for p in bundle.encoder.parameters() + bundle.decoder.parameters()}
    if bundle.flow is not None:
        param_names |= {p.name for p in bundle.flow.parameters()}
    for name in adam_names:
        target = name.split(".", 2)[2]
        if target not in param_names:
            raise ConfigError(f"checkpoint optimizer state {name!r} does not match the config")

    missing = set(expected) - set(stored) - {"adam.step"}
    extra = set(stored) - set(expected) - adam_names
    if missing or extra:
        raise ConfigError(
            f"checkpoint tensors do not match the config "
            f"(missing {sorted(missing)[:4]}, unexpected {sorted(extra)[:4]})")

    named = {}
    for p in bundle.encoder.parameters() + bundle.decoder.parameters():
        named[p.name] = p
    if bundle.flow is not None:
        for p in bundle.flow.parameters():
            named[p.name] = p
    for name, param in named.items():
        arr = stored[name]
        if arr.shape != param.data.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, config implies {param.data.shape}")
        param.data = arr.copy()
    for i, blk in enumerate(bundle.encoder.blocks):
        blk.bn.running_mean = stored[f"encoder.block{i}.running_mean"].copy()
        blk.bn.running_var = stored[f"encoder.block{i}.running_var"].copy()
    bundle.opt.step = int(stored.get("adam.step", np.asarray(0.0)).reshape(()).item())
    for name in sorted(adam_names):
        kind, target = name.split(".", 2)[1], name.split(".", 2)[2]
        if stored[name].shape != named[target].data.shape:
            raise CheckpointError(f"optimizer tensor {name!r} has the wrong shape")
        getattr(bundle.opt, kind)[target] = stored[name].copy()
    return bundle


# ---------------------------------------------------------------------------
# Metric logs
# ---------------------------------------------------------------------------

class MetricsLog:
    def __init__(self):
        self.rows = []  # (epoch, split, loss_name, value)

    def add(self, epoch: int, split: str, loss_name: str, value: float) -> None:
        self.rows.append((epoch, split, loss_name, value))

    def write_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,split,loss_name,value\n")
            for epoch, split, loss_name, value in self.rows:
                fh.write(f"{epoch},{split},{loss_name},{value:.12g}\n")


# ---------------------------------------------------------------------------
# Stage 1: autoencoder pretraining
# ---------------------------------------------------------------------------

def _load_train_clouds(manifest: DatasetManifest) -> list:
    entries = manifest.split_entries("train")
    if not entries:
        raise ConfigError("manifest has an empty train split")
    return [read_pointcloud(manifest.resolve(e.pointcloud_path)).points for e in entries]


def pretrain_autoencoder(cfg: TrainConfig, log: MetricsLog | None = None) -> Checkpoint:
    """Train encoder+decoder on the train-split clouds; returns a checkpoint."""
    manifest = load_manifest(cfg.manifest_path)
    clouds = _load_train_clouds(manifest)
    if any(len(c) != cfg.point_count for c in clouds):
        raise ConfigError(
            f"config point_count={cfg.point_count} does not match the dataset clouds")
    cfg = dataclasses.replace(cfg, stage="pretrain_ae")
    bundle = init_bundle(cfg, with_flow=False)
    log = log if log is not None else MetricsLog()
    rng = np.random.default_rng(cfg.seed + 1)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(clouds))
        losses = []
        for idx in order:
            losses.append(ae_pretrain_step(clouds[idx], bundle.encoder, bundle.decoder,
                                           bundle.opt, cfg.lr_ae,
                                           cross_check=cfg.cross_check_loss))
        log.add(epoch, "train", "L_CDR", float(np.mean(losses)))
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        log.write_csv(os.path.join(cfg.out_dir, "pretrain_ae_metrics.csv"))
    return pack_bundle(bundle)


# ---------------------------------------------------------------------------
# Stage 2: flow training
# ---------------------------------------------------------------------------

@dataclass
class _FlowSample:
    template: np.ndarray
    target: np.ndarray
    cloud: np.ndarray
    encoding: np.ndarray | None = None


def _load_flow_samples(manifest: DatasetManifest) -> list:
    entries = manifest.split_entries("train")
    if not entries:
        raise ConfigError("manifest has an empty train split")
    templates = {}
    samples = []
    for e in entries:
        if e.template_path not in templates:
            templates[e.template_path] = read_mesh(manifest.resolve(e.template_path)).vertices
        samples.append(_FlowSample(
            template=templates[e.template_path],
            target=read_mesh(manifest.resolve(e.mesh_path)).vertices,
            cloud=read_pointcloud(manifest.resolve(e.pointcloud_path)).points,
        ))
    return samples


def train_flow(cfg: TrainConfig, ae_ckpt: Checkpoint,
               log: MetricsLog | None = None) -> Checkpoint:
    """Train the coupling flow on top of a pretrained autoencoder checkpoint."""
    ae_cfg = TrainConfig.from_dict(ae_ckpt.config)
    for key in ("embed_dim", "encoder_widths", "decoder_widths", "point_count"):
        if getattr(ae_cfg, key) != getattr(cfg, key):
            raise ConfigError(
                f"autoencoder checkpoint has {key}={getattr(ae_cfg, key)}, "
                f"config wants {getattr(cfg, key)}")
    stage = cfg.stage if cfg.stage in ("train_flow", "end_to_end") else "train_flow"
    frozen = False if stage == "end_to_end" else cfg.encoder_frozen
    cfg = dataclasses.replace(cfg, stage=stage, encoder_frozen=frozen)

    ae_bundle = unpack_checkpoint(ae_ckpt)
    bundle = init_bundle(cfg, with_flow=True)
    bundle.encoder = ae_bundle.encoder
    bundle.decoder = ae_bundle.decoder
    bundle.encoder.set_trainable(not frozen)

    manifest = load_manifest(cfg.manifest_path)
    samples = _load_flow_samples(manifest)
    if frozen:
        # frozen encoder => encodings are constant across epochs; compute once
        for s in samples:
            s.encoding = encode(s.cloud, bundle.encoder)

    flow_params = bundle.flow.parameters()
    trained = flow_params if frozen else flow_params + bundle.encoder.parameters()
    log = log if log is not None else MetricsLog()
    rng = np.random.default_rng(cfg.seed + 2)
    step_counter = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for idx in order:
            s = samples[idx]
            clear_grads(trained)
            try:
                with Tape() as tape:
                    if frozen:
                        enc_row = Tensor(s.encoding[None, :])
                    else:
                        enc_row = encoder_forward(Tensor(s.cloud), bundle.encoder, mode="train")
                    pred = flow_forward(Tensor(s.template), enc_row, bundle.flow)
                    loss = chamfer_loss(pred, Tensor(s.target))
                tape.backward(loss)
            except NumericError as exc:
                raise NumericError(f"training step {step_counter}: {exc}") from None
            adam_step(trained, bundle.opt, cfg.lr_flow)
            value = float(loss.data)
            if cfg.cross_check_loss:
                oracle = chamfer_bruteforce(pred.data, s.target)
                if abs(value - oracle) > 1e-9:
                    raise NumericError(
                        f"training step {step_counter}: loss {value} != oracle {oracle}")
            losses.append(value)
            step_counter += 1
        log.add(epoch, "train", "L_CDD", float(np.mean(losses)))
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        log.write_csv(os.path.join(cfg.out_dir, "train_flow_metrics.csv"))
    return pack_bundle(bundle)
