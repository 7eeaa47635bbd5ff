"""Command-line entry point.

Subcommands: gen-data, pretrain-ae, train-flow, infer, eval, bench, selftest.
Each run resolves its configuration from defaults, an optional flat key=value
config file, and command-line flags (flags win), and writes the resolved
configuration next to its outputs. Exit codes: 0 success, 1 usage error,
2 runtime error. The MESHFLOW_SEED environment variable supplies the seed when
no --seed flag or config key is given.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import fixtures
from .dataset import DatasetSpec, build_dataset, load_manifest
from .errors import ConfigError
from .evalbench import bench_inference, evaluate, identity_baseline
from .geometry import read_mesh, read_pointcloud, write_mesh
from .training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_flow,
    pretrain_autoencoder,
    unpack_checkpoint,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_seed() -> int:
    return int(os.environ.get("MESHFLOW_SEED", "0"))


def _build_parser() -> tuple:
    parser = _Parser(prog="meshflow", description="template-mesh deformation pipeline")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="flat key=value config file; flags override it")
        p.add_argument("--seed", type=int, default=None,
                       help="global seed (default: MESHFLOW_SEED or 0)")

    p = sub.add_parser("gen-data", help="generate a deformation dataset")
    common(p)
    p.add_argument("--dataset", required=True, choices=["A", "B", "C", "D"])
    p.add_argument("--object", action="append", default=None,
                   help="mesh file; repeat for multi-object datasets")
    p.add_argument("--fixtures", action="store_true",
                   help="use the built-in desk objects instead of mesh files")
    p.add_argument("--out", required=True, help="output root directory")
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--points", type=int, default=5000)

    p = sub.add_parser("pretrain-ae", help="pretrain the point-cloud autoencoder")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoint and logs")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--embed-dim", type=int, default=1024)
    p.add_argument("--points", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("train-flow", help="train the coupling flow on a pretrained AE")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ae-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--blocks", type=int, default=6)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--end-to-end", action="store_true",
                   help="train the encoder jointly instead of freezing it")

    p = sub.add_parser("infer", help="deform a template mesh to fit a cloud")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True, help="output OBJ path")

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True, help="output directory for the metrics CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dump-meshes", default=None, help="directory for predicted OBJ dumps")
    p.add_argument("--experiment-id", default="eval")
    p.add_argument("--baseline", action="store_true",
                   help="also report the identity-template baseline")

    p = sub.add_parser("bench", help="measure inference latency")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--float64", action="store_true", help="benchmark at float64")
    p.add_argument("--out", default=None, help="output directory for the JSON report")

    p = sub.add_parser("selftest", help="run built-in verification checks")
    common(p)

    option_types = {}
    for command, sp in sub.choices.items():
        option_types[command] = {
            a.dest: (bool if isinstance(a, argparse._StoreTrueAction) else (a.type or str))
            for a in sp._actions}
    return parser, option_types


def _load_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _apply_config_file(args: argparse.Namespace, argv: list, option_types: dict) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    file_values = _load_config_file(args.config)
    types = option_types[args.command]
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, raw in file_values.items():
        attr = key.replace("-", "_")
        if attr not in types or not hasattr(args, attr):
            raise ConfigError(f"{args.config}: unknown config key {key!r}")
        if attr in explicit:
            continue  # command-line flags win
        cast = types[attr]
        if cast is bool:
            value = raw.lower() in ("1", "true", "yes")
        elif isinstance(getattr(args, attr), list):
            value = raw.split(",")
        else:
            value = cast(raw)
        setattr(args, attr, value)
    return args


def _write_resolved_config(args: argparse.Namespace, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{args.command}.config.txt")
    with open(path, "w") as fh:
        for key in sorted(vars(args)):
            if key in ("config", "command"):
                continue
            fh.write(f"{key} = {getattr(args, key)}\n")


def _seed_of(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    if args.fixtures:
        objects = fixtures.desk_objects()
        if args.dataset in ("A", "C"):
            objects = {"sphere": objects["sphere"]}
    else:
        if not args.object:
            raise ConfigError("gen-data needs --object FILE (or --fixtures)")
        objects = {}
        for path in args.object:
            name = os.path.splitext(os.path.basename(path))[0]
            objects[name] = read_mesh(path)
    spec = DatasetSpec(
        dataset_id=args.dataset,
        objects=objects,
        out_dir=args.out,
        seed=_seed_of(args),
        sigma=args.sigma,
        n_points=args.points,
        n_trajectories=args.trajectories,
        n_steps=args.steps,
    )
    manifest = build_dataset(spec)
    _write_resolved_config(args, manifest.root)
    n_train = len(manifest.split_entries("train"))
    n_test = len(manifest.split_entries("test"))
    print(f"dataset {args.dataset}: {n_train} train / {n_test} test entries "
          f"-> {manifest.root}/manifest.json")
    return 0


def _train_config(args, stage: str) -> TrainConfig:
    cfg = TrainConfig(
        manifest_path=args.manifest,
        stage=stage,
        seed=_seed_of(args),
        out_dir=args.out,
    )
    if stage == "pretrain_ae":
        cfg.embed_dim = args.embed_dim
        cfg.point_count = args.points
        cfg.lr_ae = args.lr
        cfg.epochs = args.epochs
    return cfg


def _cmd_pretrain_ae(args) -> int:
    cfg = _train_config(args, "pretrain_ae")
    ckpt = pretrain_autoencoder(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ae.ckpt")
    save_checkpoint(path, ckpt)
    _write_resolved_config(args, args.out)
    print(f"autoencoder checkpoint -> {path}")
    return 0


def _cmd_train_flow(args) -> int:
    ae_ckpt = load_checkpoint(args.ae_ckpt)
    ae_cfg = TrainConfig.from_dict(ae_ckpt.config)
    cfg = TrainConfig(
        manifest_path=args.manifest,
        stage="end_to_end" if args.end_to_end else "train_flow",
        encoder_frozen=not args.end_to_end,
        embed_dim=ae_cfg.embed_dim,
        encoder_widths=ae_cfg.encoder_widths,
        decoder_widths=ae_cfg.decoder_widths,
        point_count=ae_cfg.point_count,
        n_blocks=args.blocks,
        lr_flow=args.lr,
        epochs=args.epochs,
        seed=_seed_of(args),
        out_dir=args.out,
    )
    ckpt = train_flow(cfg, ae_ckpt)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "flow.ckpt")
    save_checkpoint(path, ckpt)
    _write_resolved_config(args, args.out)
    print(f"flow checkpoint -> {path}")
    return 0


def _cmd_infer(args) -> int:
    from .encoder import encode
    from .flow import deform_mesh

    bundle = unpack_checkpoint(load_checkpoint(args.ckpt))
    if bundle.flow is None:
        raise ConfigError("checkpoint has no flow parameters; train the flow first")
    template = read_mesh(args.template)
    cloud = read_pointcloud(args.cloud)
    code = encode(cloud, bundle.encoder)
    deformed = deform_mesh(template, code, bundle.flow)
    write_mesh(args.out, deformed)
    _write_resolved_config(args, os.path.dirname(os.path.abspath(args.out)))
    print(f"deformed mesh -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    table = evaluate(ckpt, manifest, args.split, experiment_id=args.experiment_id,
                     jobs=args.jobs, dump_dir=args.dump_meshes)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"metrics_{args.split}.csv")
    table.write_csv(csv_path)
    if args.baseline:
        identity_baseline(manifest, args.split).write_csv(
            os.path.join(args.out, f"baseline_{args.split}.csv"))
    _write_resolved_config(args, args.out)
    aggregate = table.value(object_id="ALL", metric_name="L_CDD")
    print(f"L_CDD[{args.split}, ALL] = {aggregate:.6g} -> {csv_path}")
    return 0


def _cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    template = read_mesh(args.template)
    cloud = read_pointcloud(args.cloud)
    dtype = np.float64 if args.float64 else np.float32
    report = bench_inference(ckpt, template, cloud, iters=args.iters,
                             warmup=args.warmup, dtype=dtype)
    print(report.to_json())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench.json"), "w") as fh:
            fh.write(report.to_json() + "\n")
        _write_resolved_config(args, args.out)
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(seed=_seed_of(args)) else 2


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain-ae": _cmd_pretrain_ae,
    "train-flow": _cmd_train_flow,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "selftest": _cmd_selftest,
}


def dispatch(argv: list) -> int:
    parser, option_types = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return 0 if exc.code in (0, None) else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = _apply_config_file(args, argv, option_types)
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
