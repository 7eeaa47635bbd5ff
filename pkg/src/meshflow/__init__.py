"""meshflow: deform a template mesh to fit deformed point clouds.

The pipeline pairs a permutation-invariant point-cloud encoder with a
conditional stack of invertible coupling blocks that moves the template's
vertices while reusing its faces, plus synthetic warp-field datasets, a
minimal reverse-mode tensor engine, and evaluation/latency tooling.
"""

from .autodiff import BatchNormState, Parameter, Tape, Tensor
from .chamfer import chamfer_accelerated, chamfer_loss
from .dataset import DatasetManifest, DatasetSpec, build_dataset, load_manifest
from .encoder import (
    DecoderParams,
    EncoderParams,
    ae_pretrain_step,
    decode,
    encode,
    init_decoder,
    init_encoder,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateGeometryError,
    MeshParseError,
    NumericError,
    ShapeError,
    UnsupportedTopologyError,
)
from .evalbench import (
    BenchReport,
    GridScale,
    MetricsTable,
    adaptive_resolution_eval,
    bench_inference,
    evaluate,
    evaluate_reconstruction,
    identity_baseline,
    per_object_breakdown,
    run_encoder_ablation,
    run_generalizability_grid,
)
from .flow import (
    CouplingBlockParams,
    FlowModel,
    coupling_apply,
    coupling_forward,
    deform_mesh,
    flow_deform,
    flow_forward,
    flow_inverse,
    init_flow,
)
from .geometry import (
    Mesh,
    PointCloud,
    TopologySummary,
    chamfer_bruteforce,
    normalize_unit_cube,
    read_mesh,
    read_pointcloud,
    sample_surface,
    topology_summary,
    write_mesh,
    write_pointcloud,
)
from .gradcheck import grad_check
from .optim import AdamState, adam_step, clear_grads
from .training import (
    Checkpoint,
    MetricsLog,
    ModelBundle,
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
from .warp import (
    Trajectory,
    WarpField,
    apply_warp,
    generate_trajectory,
    identity_warp_field,
    sample_warp_field,
    warp_displacement,
)

__version__ = "0.1.0"
