"""Dataset generation: warp trajectories on disk plus a JSON manifest.

Four dataset flavors share one generator:

  A: one trajectory of deformation steps, one object; per-step split
     (steps divisible by five are held out, counting from 1).
  B: same split rule over six objects.
  C: many trajectories of shorter length, one object; per-trajectory split
     (the first 80% of trajectories train, the rest test).
  D: same as C over six objects.

Counts default to the full-scale values (A/B: 1x50, C/D: 1000x21) and can be
overridden for desk-scale runs. Layout on disk:
`<root>/<dataset_id>/<object>/<traj>/<step>.{obj,xyz}` with one template OBJ
per object. Paths in the manifest are relative to the root.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import (
    Mesh,
    normalize_unit_cube,
    read_mesh,
    read_pointcloud,
    sample_surface,
    write_mesh,
    write_pointcloud,
)
from .warp import generate_trajectory, sample_warp_field

FULL_SCALE = {
    "A": dict(n_trajectories=1, n_steps=50),
    "B": dict(n_trajectories=1, n_steps=50),
    "C": dict(n_trajectories=1000, n_steps=21),
    "D": dict(n_trajectories=1000, n_steps=21),
}
PER_STEP_SPLIT = ("A", "B")
SINGLE_OBJECT = ("A", "C")


@dataclass
class ManifestEntry:
    object_id: str
    trajectory_index: int
    step_index: int
    split: str
    mesh_path: str
    pointcloud_path: str
    template_path: str


@dataclass
class DatasetManifest:
    dataset_id: str
    root: str
    n_points: int
    sigma: float
    seed: int
    entries: list = field(default_factory=list)

    def split_entries(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def objects(self) -> list:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.object_id, None)
        return list(seen)

    def resolve(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path)


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    payload = {
        "dataset_id": manifest.dataset_id,
        "n_points": manifest.n_points,
        "sigma": manifest.sigma,
        "seed": manifest.seed,
        "entries": [asdict(e) for e in manifest.entries],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> DatasetManifest:
    with open(path, "r") as fh:
        payload = json.load(fh)
    entries = [ManifestEntry(**e) for e in payload["entries"]]
    return DatasetManifest(
        dataset_id=payload["dataset_id"],
        root=os.path.dirname(os.path.abspath(path)),
        n_points=payload["n_points"],
        sigma=payload["sigma"],
        seed=payload["seed"],
        entries=entries,
    )


def validate_manifest(manifest: DatasetManifest) -> None:
    """Check that every referenced file exists and parses."""
    for e in manifest.entries:
        read_mesh(manifest.resolve(e.mesh_path))
        read_pointcloud(manifest.resolve(e.pointcloud_path))
        read_mesh(manifest.resolve(e.template_path))


@dataclass
class DatasetSpec:
    dataset_id: str
    objects: dict                     # object_id -> Mesh (raw, un-normalized)
    out_dir: str
    seed: int = 0
    # per-step displacement std, normalized units: keeps 50-step trajectories
    # bounded (the TPS extrapolates superlinearly outside the lattice, so
    # larger values diverge under repeated application)
    sigma: float = 0.01
    n_points: int = 5000
    n_trajectories: int | None = None  # None -> full-scale default
    n_steps: int | None = None


def _object_key(object_id: str) -> int:
    # keyed by name, not list position, so an object gets identical
    # trajectories in single- and multi-object datasets built from one seed
    return zlib.crc32(object_id.encode())


def _warp_seed(base: int, object_id: str, traj_index: int) -> int:
    return int(np.random.SeedSequence(entropy=base,
                                      spawn_key=(_object_key(object_id), traj_index))
               .generate_state(1)[0])


def _cloud_seed(base: int, object_id: str, traj_index: int, step: int) -> int:
    return int(np.random.SeedSequence(entropy=base,
                                      spawn_key=(_object_key(object_id), traj_index, step))
               .generate_state(1)[0])


def train_trajectory_count(n_trajectories: int) -> int:
    """Per-trajectory split: the first 80% train (800 of 1000 at full scale)."""
    return n_trajectories - n_trajectories // 5


def build_dataset(spec: DatasetSpec) -> DatasetManifest:
    """Generate meshes, clouds, and the manifest for one dataset flavor."""
    did = spec.dataset_id
    if did not in FULL_SCALE:
        raise ConfigError(f"unknown dataset id {did!r} (expected one of A, B, C, D)")
    if did in SINGLE_OBJECT and len(spec.objects) != 1:
        raise ConfigError(f"dataset {did} uses exactly one object, got {len(spec.objects)}")
    if did not in SINGLE_OBJECT and len(spec.objects) < 2:
        raise ConfigError(f"dataset {did} uses multiple objects, got {len(spec.objects)}")
    n_traj = spec.n_trajectories or FULL_SCALE[did]["n_trajectories"]
    n_steps = spec.n_steps or FULL_SCALE[did]["n_steps"]
    if did in PER_STEP_SPLIT and n_traj != 1:
        raise ConfigError(f"dataset {did} has a single trajectory per object")

    root = os.path.join(spec.out_dir, did)
    os.makedirs(root, exist_ok=True)
    manifest = DatasetManifest(dataset_id=did, root=root, n_points=spec.n_points,
                               sigma=spec.sigma, seed=spec.seed)
    n_train_traj = train_trajectory_count(n_traj)

    for object_id, raw_mesh in spec.objects.items():
        template, _ = normalize_unit_cube(raw_mesh)
        obj_dir = os.path.join(root, object_id)
        os.makedirs(obj_dir, exist_ok=True)
        template_rel = os.path.join(object_id, "template.obj")
        write_mesh(os.path.join(root, template_rel), template)

        for traj_index in range(n_traj):
            field = sample_warp_field(_warp_seed(spec.seed, object_id, traj_index), spec.sigma)
            trajectory = generate_trajectory(template, field, n_steps, template_id=object_id)
            traj_dir = os.path.join(obj_dir, str(traj_index))
            os.makedirs(traj_dir, exist_ok=True)
            for step in range(1, n_steps + 1):
                deformed = trajectory.steps[step]
                cloud = sample_surface(deformed, spec.n_points,
                                       _cloud_seed(spec.seed, object_id, traj_index, step))
                mesh_rel = os.path.join(object_id, str(traj_index), f"{step}.obj")
                cloud_rel = os.path.join(object_id, str(traj_index), f"{step}.xyz")
                write_mesh(os.path.join(root, mesh_rel), deformed)
                write_pointcloud(os.path.join(root, cloud_rel), cloud)
                if did in PER_STEP_SPLIT:
                    split = "test" if step % 5 == 0 else "train"
                else:
                    split = "train" if traj_index < n_train_traj else "test"
                manifest.entries.append(ManifestEntry(
                    object_id=object_id,
                    trajectory_index=traj_index,
                    step_index=step,
                    split=split,
                    mesh_path=mesh_rel,
                    pointcloud_path=cloud_rel,
                    template_path=template_rel,
                ))

    save_manifest(manifest, os.path.join(root, "manifest.json"))
    return manifest
