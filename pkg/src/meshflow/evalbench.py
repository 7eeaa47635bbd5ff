"""Evaluation grids, per-object breakdowns, adaptive resolution, latency.

Evaluation is read-only: it unpacks a checkpoint, encodes each test cloud,
deforms the template, and scores the result against the ground-truth deformed
vertices with the chamfer metric (plus a per-vertex squared-L2 diagnostic,
meaningful because trajectories keep vertices in correspondence). The latency
benchmark times encoder + flow end to end after a warmup, single-threaded in
the timed region, and reports mean/p50/p95 and throughput.
"""

from __future__ import annotations

import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .chamfer import chamfer_accelerated
from .dataset import DatasetManifest
from .encoder import EncoderArrays, encode
from .errors import ConfigError
from .flow import FlowArrays, deform_mesh, flow_deform
from .geometry import Mesh, PointCloud, read_mesh, read_pointcloud, write_mesh
from .training import Checkpoint, ModelBundle, unpack_checkpoint


@dataclass
class MetricsRow:
    experiment_id: str
    train_set: str
    test_set: str
    object_id: str            # object name, or ALL for the aggregate
    metric_name: str          # L_CDR | L_CDD | per_vertex_L2
    value: float
    n_samples: int


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def add(self, **kwargs) -> None:
        self.rows.append(MetricsRow(**kwargs))

    def filter(self, **kwargs) -> "MetricsTable":
        out = [r for r in self.rows if all(getattr(r, k) == v for k, v in kwargs.items())]
        return MetricsTable(rows=out)

    def value(self, **kwargs) -> float:
        hits = self.filter(**kwargs).rows
        if len(hits) != 1:
            raise KeyError(f"expected exactly one row for {kwargs}, found {len(hits)}")
        return hits[0].value

    def write_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("experiment_id,train_set,test_set,object_id,metric_name,value,n_samples\n")
            for r in self.rows:
                fh.write(f"{r.experiment_id},{r.train_set},{r.test_set},{r.object_id},"
                         f"{r.metric_name},{r.value:.12g},{r.n_samples}\n")


def per_object_breakdown(table: MetricsTable) -> MetricsTable:
    """Collapse per-entry rows into one row per object plus an ALL aggregate.

    The aggregate equals the sample-weighted mean of the per-object rows.
    """
    out = MetricsTable()
    keys = {}
    for r in table.rows:
        if r.object_id == "ALL":
            continue
        keys.setdefault((r.experiment_id, r.train_set, r.test_set, r.metric_name), []).append(r)
    for (exp, train, test, metric), rows in keys.items():
        by_object = {}
        for r in rows:
            by_object.setdefault(r.object_id, []).append(r)
        total_value = 0.0
        total_n = 0
        for object_id, obj_rows in by_object.items():
            n = sum(r.n_samples for r in obj_rows)
            value = sum(r.value * r.n_samples for r in obj_rows) / n
            out.add(experiment_id=exp, train_set=train, test_set=test, object_id=object_id,
                    metric_name=metric, value=value, n_samples=n)
            total_value += value * n
            total_n += n
        out.add(experiment_id=exp, train_set=train, test_set=test, object_id="ALL",
                metric_name=metric, value=total_value / total_n, n_samples=total_n)
    return out


def per_vertex_l2(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared vertex displacement error (uses the 1-1 correspondence)."""
    return float(((pred - target) ** 2).sum(axis=1).mean())


def evaluate(ckpt: Checkpoint | ModelBundle, manifest: DatasetManifest, split: str,
             experiment_id: str = "", train_set: str = "", test_set: str = "",
             jobs: int = 1, dump_dir: str | None = None,
             include_entries: bool = False) -> MetricsTable:
    """Score every manifest entry of one split.

    Returns one row per object plus the sample-weighted ALL aggregate; with
    include_entries the raw per-entry rows are appended as well.
    """
    bundle = ckpt if isinstance(ckpt, ModelBundle) else unpack_checkpoint(ckpt)
    if bundle.flow is None:
        raise ConfigError("checkpoint has no flow parameters; train the flow first")
    entries = manifest.split_entries(split)
    if not entries:
        raise ConfigError(f"manifest has no '{split}' entries")
    templates = {}
    for e in entries:
        if e.template_path not in templates:
            templates[e.template_path] = read_mesh(manifest.resolve(e.template_path))
    flow_arrays = FlowArrays.from_model(bundle.flow)
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)

    def score(item):
        index, e = item
        cloud = read_pointcloud(manifest.resolve(e.pointcloud_path))
        target = read_mesh(manifest.resolve(e.mesh_path))
        template = templates[e.template_path]
        code = encode(cloud, bundle.encoder)
        pred = deform_mesh(template, code, flow_arrays)
        if dump_dir:
            write_mesh(os.path.join(
                dump_dir, f"{e.object_id}_t{e.trajectory_index}_s{e.step_index}.obj"), pred)
        return (e.object_id, index,
                chamfer_accelerated(pred.vertices, target.vertices),
                per_vertex_l2(pred.vertices, target.vertices))

    items = list(enumerate(entries))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score, items))
    else:
        results = [score(it) for it in items]
    results.sort(key=lambda r: r[1])  # manifest order regardless of jobs

    entries_table = MetricsTable()
    for object_id, _, cdd, pvl2 in results:
        entries_table.add(experiment_id=experiment_id, train_set=train_set, test_set=test_set,
                          object_id=object_id, metric_name="L_CDD", value=cdd, n_samples=1)
        entries_table.add(experiment_id=experiment_id, train_set=train_set, test_set=test_set,
                          object_id=object_id, metric_name="per_vertex_L2", value=pvl2,
                          n_samples=1)
    table = per_object_breakdown(entries_table)
    if include_entries:
        table.rows.extend(entries_table.rows)
    return table


def identity_baseline(manifest: DatasetManifest, split: str,
                      experiment_id: str = "identity") -> MetricsTable:
    """Scores of the undeformed template against each ground truth."""
    entries_table = MetricsTable()
    templates = {}
    for e in manifest.split_entries(split):
        if e.template_path not in templates:
            templates[e.template_path] = read_mesh(manifest.resolve(e.template_path))
        target = read_mesh(manifest.resolve(e.mesh_path))
        tmpl = templates[e.template_path]
        entries_table.add(experiment_id=experiment_id, train_set="", test_set="",
                          object_id=e.object_id, metric_name="L_CDD",
                          value=chamfer_accelerated(tmpl.vertices, target.vertices), n_samples=1)
    return per_object_breakdown(entries_table)


def adaptive_resolution_eval(ckpt: Checkpoint | ModelBundle, low_res_template: Mesh,
                             high_res_template: Mesh, cloud: PointCloud) -> MetricsTable:
    """Deform two tessellations of one object with the same encoding.

    The reference here is the observed cloud (no ground-truth mesh exists at
    the off-train resolution), so L_CDD is chamfer(pred vertices, cloud).
    """
    bundle = ckpt if isinstance(ckpt, ModelBundle) else unpack_checkpoint(ckpt)
    code = encode(cloud, bundle.encoder)
    arrays = FlowArrays.from_model(bundle.flow)
    table = MetricsTable()
    for label, template in (("low_res", low_res_template), ("high_res", high_res_template)):
        pred = deform_mesh(template, code, arrays)
        table.add(experiment_id="adaptive_resolution", train_set="", test_set="",
                  object_id=label, metric_name="L_CDD",
                  value=chamfer_accelerated(pred.vertices, cloud.points), n_samples=1)
    return table


def evaluate_reconstruction(ckpt: Checkpoint | ModelBundle, manifest: DatasetManifest,
                            split: str, experiment_id: str = "",
                            train_set: str = "", test_set: str = "") -> MetricsTable:
    """Autoencoder reconstruction quality: chamfer between decoded and input clouds."""
    from .encoder import decode

    bundle = ckpt if isinstance(ckpt, ModelBundle) else unpack_checkpoint(ckpt)
    entries_table = MetricsTable()
    for e in manifest.split_entries(split):
        cloud = read_pointcloud(manifest.resolve(e.pointcloud_path))
        code = encode(cloud, bundle.encoder)
        recon = decode(code, bundle.decoder)
        entries_table.add(experiment_id=experiment_id, train_set=train_set,
                          test_set=test_set, object_id=e.object_id,
                          metric_name="L_CDR",
                          value=chamfer_accelerated(recon, cloud.points), n_samples=1)
    return per_object_breakdown(entries_table)


# ---------------------------------------------------------------------------
# Experiment grids: the generalizability table and the encoder ablation,
# reproduced at a configurable (desk by default) scale.
# ---------------------------------------------------------------------------

@dataclass
class GridScale:
    """Desk-scale knobs for the experiment grids."""

    sigma: float = 0.05
    n_points: int = 192
    steps_ab: int = 5            # datasets A/B: one trajectory of this many steps
    trajectories_cd: int = 5     # datasets C/D: this many trajectories...
    steps_cd: int = 3            # ...of this many steps each
    embed_dim: int = 32
    encoder_widths: tuple = (16, 32, 64)
    decoder_widths: tuple = (64, 128)
    proj_dim: int = 48
    coupling_hidden: int = 96
    n_blocks: int = 6
    epochs_ae: int = 50
    epochs_flow: int = 50
    lr_ae: float = 1e-3
    lr_flow: float = 1e-3


def _train_on_manifest(manifest: DatasetManifest, scale: GridScale, seed: int,
                       end_to_end: bool, embed_dim: int | None = None):
    from .training import TrainConfig, pretrain_autoencoder, train_flow

    common = dict(
        manifest_path=os.path.join(manifest.root, "manifest.json"),
        embed_dim=embed_dim or scale.embed_dim,
        encoder_widths=scale.encoder_widths,
        decoder_widths=scale.decoder_widths,
        proj_dim=scale.proj_dim,
        coupling_hidden=scale.coupling_hidden,
        n_blocks=scale.n_blocks,
        point_count=scale.n_points,
        seed=seed,
    )
    ae = pretrain_autoencoder(TrainConfig(stage="pretrain_ae", epochs=scale.epochs_ae,
                                          lr_ae=scale.lr_ae, **common))
    flow = train_flow(TrainConfig(
        stage="end_to_end" if end_to_end else "train_flow",
        encoder_frozen=not end_to_end, epochs=scale.epochs_flow,
        lr_flow=scale.lr_flow, **common), ae)
    return flow


def run_generalizability_grid(objects: dict, out_dir: str, seed: int = 0,
                              scale: GridScale | None = None,
                              end_to_end: bool = True) -> MetricsTable:
    """Train/evaluate the four-way generalizability grid.

    Exp7: train A (one object, per-step split), validate on B's test split.
    Exp8: train B (all objects), validate B. Exp9: train C (one object,
    held-out trajectories), validate C. Exp10: train D, validate C. Emits
    per-object and aggregate L_CDD rows labeled by the actual train/test sets.
    """
    from .dataset import DatasetSpec, build_dataset

    scale = scale or GridScale()
    first = dict(list(objects.items())[:1])
    manifests = {
        "A": build_dataset(DatasetSpec("A", first, out_dir, seed=seed, sigma=scale.sigma,
                                       n_points=scale.n_points, n_steps=scale.steps_ab)),
        "B": build_dataset(DatasetSpec("B", objects, out_dir, seed=seed, sigma=scale.sigma,
                                       n_points=scale.n_points, n_steps=scale.steps_ab)),
        "C": build_dataset(DatasetSpec("C", first, out_dir, seed=seed, sigma=scale.sigma,
                                       n_points=scale.n_points,
                                       n_trajectories=scale.trajectories_cd,
                                       n_steps=scale.steps_cd)),
        "D": build_dataset(DatasetSpec("D", objects, out_dir, seed=seed, sigma=scale.sigma,
                                       n_points=scale.n_points,
                                       n_trajectories=scale.trajectories_cd,
                                       n_steps=scale.steps_cd)),
    }
    pairings = [("Exp7", "A", "B"), ("Exp8", "B", "B"), ("Exp9", "C", "C"),
                ("Exp10", "D", "C")]
    table = MetricsTable()
    for exp_id, train_set, test_set in pairings:
        ckpt = _train_on_manifest(manifests[train_set], scale, seed, end_to_end)
        result = evaluate(ckpt, manifests[test_set], "test", experiment_id=exp_id,
                          train_set=train_set, test_set=test_set)
        table.rows.extend(result.rows)
    return table


def run_encoder_ablation(objects: dict, out_dir: str, seed: int = 0,
                         scale: GridScale | None = None,
                         embed_dims: tuple = (16, 32),
                         end_to_end_axis: tuple = (False, True)) -> MetricsTable:
    """Embedding-size x frozen/end-to-end ablation on the multi-object dataset.

    Mirrors the encoder-comparison table's two reproduced axes at desk scale
    (the full-scale embedding sizes are 256 and 1024).
    """
    from .dataset import DatasetSpec, build_dataset

    scale = scale or GridScale()
    manifest = build_dataset(DatasetSpec("B", objects, out_dir, seed=seed,
                                         sigma=scale.sigma, n_points=scale.n_points,
                                         n_steps=scale.steps_ab))
    table = MetricsTable()
    exp_index = 1
    for embed_dim in embed_dims:
        for end_to_end in end_to_end_axis:
            exp_id = f"Ablation{exp_index}_D{embed_dim}_{'e2e' if end_to_end else 'frozen'}"
            exp_index += 1
            ckpt = _train_on_manifest(manifest, scale, seed, end_to_end,
                                      embed_dim=embed_dim)
            table.rows.extend(evaluate(
                ckpt, manifest, "test", experiment_id=exp_id,
                train_set="B", test_set="B").filter(object_id="ALL").rows)
            table.rows.extend(evaluate_reconstruction(
                ckpt, manifest, "test", experiment_id=exp_id,
                train_set="B", test_set="B").filter(object_id="ALL").rows)
    return table


@dataclass
class BenchReport:
    vertex_count: int
    point_count: int
    n_blocks: int
    precision: str
    warmup_iters: int
    timed_iters: int
    mean_latency_s: float
    p50_latency_s: float
    p95_latency_s: float
    throughput_hz: float
    hardware: str
    noisy: bool = False     # p95/p50 >= 3 after warmup flags a loaded machine

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def _hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine() or "unknown-cpu"
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    threads = os.environ.get("OPENBLAS_NUM_THREADS", "default")
    return f"{cpu}; python {platform.python_version()}; numpy {np.__version__}; blas_threads={threads}"


def bench_inference(ckpt: Checkpoint | ModelBundle, template: Mesh, cloud: PointCloud,
                    iters: int = 50, warmup: int = 10,
                    dtype=np.float32) -> BenchReport:
    """Time encode + deform end to end per iteration after a warmup.

    Weights are pre-cast outside the timed region; the loop itself does only
    what inference requires.
    """
    if iters < 30:
        raise ConfigError("timed_iters must be >= 30 for a stable report")
    bundle = ckpt if isinstance(ckpt, ModelBundle) else unpack_checkpoint(ckpt)
    if bundle.flow is None:
        raise ConfigError("checkpoint has no flow parameters")
    enc_arrays = EncoderArrays.from_params(bundle.encoder, dtype)
    flow_arrays = FlowArrays.from_model(bundle.flow, dtype)
    points = np.ascontiguousarray(cloud.points, dtype=dtype)
    verts = np.ascontiguousarray(template.vertices, dtype=dtype)

    for _ in range(warmup):
        code = enc_arrays.encode(points)
        flow_deform(verts, code, flow_arrays, dtype=dtype)
    latencies = np.empty(iters)
    for i in range(iters):
        start = time.perf_counter()
        code = enc_arrays.encode(points)
        flow_deform(verts, code, flow_arrays, dtype=dtype)
        latencies[i] = time.perf_counter() - start

    mean = float(latencies.mean())
    p50 = float(np.percentile(latencies, 50))
    p95 = float(np.percentile(latencies, 95))
    return BenchReport(
        vertex_count=template.num_vertices,
        point_count=len(cloud),
        n_blocks=len(flow_arrays.blocks),
        precision=np.dtype(dtype).name,
        warmup_iters=warmup,
        timed_iters=iters,
        mean_latency_s=mean,
        p50_latency_s=p50,
        p95_latency_s=p95,
        throughput_hz=1.0 / mean,
        hardware=_hardware_descriptor(),
        noisy=p95 / p50 >= 3.0,
    )
