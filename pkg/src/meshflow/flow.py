"""Conditional coupling flow that moves template-mesh vertices.

Each coupling block rewrites one coordinate dimension of every vertex as
z' = z * exp(s) + t, where s and t are pointwise networks evaluated on the
projection of the zero-masked coordinates concatenated with the cloud
encoding. Since s and t never see the rewritten dimension, each block is
exactly invertible: z = (z' - t) * exp(-s). The map is applied per vertex, so
one trained model deforms templates of any resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import inference as fast
from .autodiff import Parameter, Tensor
from .errors import ConfigError, NumericError
from .geometry import Mesh

MAX_LOG_SCALE = 30.0  # exp(s) overflow guard; tanh keeps |s| <= 2 in practice


@dataclass
class CouplingBlockParams:
    """Parameters of one coupling block rewriting dimension masked_dim."""

    masked_dim: int
    proj_w: Parameter
    proj_b: Parameter
    s1_w: Parameter
    s1_b: Parameter
    s2_w: Parameter
    s2_b: Parameter
    t1_w: Parameter
    t1_b: Parameter
    t2_w: Parameter
    t2_b: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.proj_w, self.proj_b, self.s1_w, self.s1_b, self.s2_w, self.s2_b,
                self.t1_w, self.t1_b, self.t2_w, self.t2_b]


@dataclass
class FlowModel:
    blocks: list[CouplingBlockParams]
    embed_dim: int
    proj_dim: int
    hidden: int

    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.parameters()]


def init_flow(rng: np.random.Generator, embed_dim: int, n_blocks: int = 6,
              proj_dim: int = 128, hidden: int = 256, zero_init: bool = True,
              prefix: str = "flow") -> FlowModel:
    """Build a flow with masked dimensions cycling 0,1,2,...

    With zero_init the final layer of each s/t network starts at zero, so the
    untrained flow is the identity and training starts from the template.
    """
    if n_blocks < 1:
        raise ConfigError("flow needs at least one coupling block")

    def he(cin, cout):
        return rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cout))

    blocks = []
    for k in range(n_blocks):
        cin = proj_dim + embed_dim
        name = f"{prefix}.block{k}"
        final_s = np.zeros((hidden, 1)) if zero_init else he(hidden, 1)
        final_t = np.zeros((hidden, 1)) if zero_init else he(hidden, 1)
        blocks.append(CouplingBlockParams(
            masked_dim=k % 3,
            proj_w=Parameter(he(3, proj_dim), f"{name}.proj.weight"),
            proj_b=Parameter(np.zeros(proj_dim), f"{name}.proj.bias"),
            s1_w=Parameter(he(cin, hidden), f"{name}.map_s.fc0.weight"),
            s1_b=Parameter(np.zeros(hidden), f"{name}.map_s.fc0.bias"),
            s2_w=Parameter(final_s, f"{name}.map_s.fc1.weight"),
            s2_b=Parameter(np.zeros(1), f"{name}.map_s.fc1.bias"),
            t1_w=Parameter(he(cin, hidden), f"{name}.map_t.fc0.weight"),
            t1_b=Parameter(np.zeros(hidden), f"{name}.map_t.fc0.bias"),
            t2_w=Parameter(final_t, f"{name}.map_t.fc1.weight"),
            t2_b=Parameter(np.zeros(1), f"{name}.map_t.fc1.bias"),
        ))
    return FlowModel(blocks=blocks, embed_dim=embed_dim, proj_dim=proj_dim, hidden=hidden)


def _keep_mask(masked_dim: int) -> np.ndarray:
    mask = np.ones((1, 3))
    mask[0, masked_dim] = 0.0
    return mask


def coupling_forward(coords: Tensor, enc_row: Tensor, block: CouplingBlockParams,
                     block_index: int | None = None) -> Tensor:
    """Tape path of one block: differentiable w.r.t. coords, enc, and weights."""
    j = block.masked_dim
    mask = Tensor(_keep_mask(j))
    masked = ad.mul(coords, mask)
    proj = ad.pointwise_linear(masked, block.proj_w, block.proj_b)
    h = ad.concat_broadcast(proj, enc_row)
    s = ad.scale(ad.tanh(ad.pointwise_linear(
        ad.relu(ad.pointwise_linear(h, block.s1_w, block.s1_b)),
        block.s2_w, block.s2_b)), 2.0)
    t = ad.pointwise_linear(
        ad.relu(ad.pointwise_linear(h, block.t1_w, block.t1_b)),
        block.t2_w, block.t2_b)
    if np.abs(s.data).max(initial=0.0) > MAX_LOG_SCALE:
        raise NumericError(f"coupling block {block_index}: log-scale exceeds {MAX_LOG_SCALE}")
    z = ad.slice_column(coords, j)
    z_new = ad.add(ad.mul(z, ad.exp(s)), t)
    return ad.add(masked, ad.pad_column(z_new, j, 3))


def flow_forward(coords: Tensor, enc_row: Tensor, model: FlowModel) -> Tensor:
    """Tape path through all blocks in order."""
    out = coords
    for k, block in enumerate(model.blocks):
        out = coupling_forward(out, enc_row, block, block_index=k)
    return out


# ---------------------------------------------------------------------------
# Tape-free evaluation path (chunked, per-vertex bit-stable)
# ---------------------------------------------------------------------------

@dataclass
class _BlockArrays:
    masked_dim: int
    proj_w: np.ndarray
    proj_b: np.ndarray
    s1_top: np.ndarray   # proj-feature rows of the first map_s layer
    s1_enc: np.ndarray   # encoding rows of the first map_s layer
    s1_b: np.ndarray
    s2_w: np.ndarray
    s2_b: np.ndarray
    t1_top: np.ndarray
    t1_enc: np.ndarray
    t1_b: np.ndarray
    t2_w: np.ndarray
    t2_b: np.ndarray


@dataclass
class FlowArrays:
    """Weights pre-cast and pre-split for fast inference.

    The first layer of each map is split so the encoding contribution, which
    is identical for all vertices, is computed once per call instead of per
    vertex.
    """

    blocks: list
    proj_dim: int

    @classmethod
    def from_model(cls, model: FlowModel, dtype=np.float64) -> "FlowArrays":
        blocks = []
        p = model.proj_dim
        for b in model.blocks:
            blocks.append(_BlockArrays(
                masked_dim=b.masked_dim,
                proj_w=b.proj_w.data.astype(dtype),
                proj_b=b.proj_b.data.astype(dtype),
                s1_top=b.s1_w.data[:p].astype(dtype),
                s1_enc=b.s1_w.data[p:].astype(dtype),
                s1_b=b.s1_b.data.astype(dtype),
                s2_w=b.s2_w.data.astype(dtype),
                s2_b=b.s2_b.data.astype(dtype),
                t1_top=b.t1_w.data[:p].astype(dtype),
                t1_enc=b.t1_w.data[p:].astype(dtype),
                t1_b=b.t1_b.data.astype(dtype),
                t2_w=b.t2_w.data.astype(dtype),
                t2_b=b.t2_b.data.astype(dtype),
            ))
        return cls(blocks=blocks, proj_dim=p)


def _block_scale_shift(coords: np.ndarray, enc: np.ndarray, b: _BlockArrays):
    """s and t of one block for the given coordinates, as (V,) arrays."""
    masked = coords.copy()
    masked[:, b.masked_dim] = 0.0
    proj = fast.linear_rows(masked, b.proj_w, b.proj_b)
    s_bias = enc @ b.s1_enc + b.s1_b
    t_bias = enc @ b.t1_enc + b.t1_b
    hs = fast.relu_rows(fast.linear_rows(proj, b.s1_top) + s_bias)
    ht = fast.relu_rows(fast.linear_rows(proj, b.t1_top) + t_bias)
    s = 2.0 * np.tanh(fast.linear_rows(hs, b.s2_w) + b.s2_b)
    t = fast.linear_rows(ht, b.t2_w) + b.t2_b
    return s[:, 0], t[:, 0]


def flow_deform(coords: np.ndarray, enc: np.ndarray,
                model: FlowModel | FlowArrays, dtype=np.float64) -> np.ndarray:
    """Eval-mode deformation of (V, 3) coordinates conditioned on a (D,) code."""
    arrays = model if isinstance(model, FlowArrays) else FlowArrays.from_model(model, dtype)
    out = np.ascontiguousarray(coords, dtype=dtype)
    enc = np.ascontiguousarray(enc, dtype=dtype)
    for k, b in enumerate(arrays.blocks):
        s, t = _block_scale_shift(out, enc, b)
        if np.abs(s).max(initial=0.0) > MAX_LOG_SCALE:
            raise NumericError(f"coupling block {k}: log-scale exceeds {MAX_LOG_SCALE}")
        new = out.copy()
        new[:, b.masked_dim] = out[:, b.masked_dim] * np.exp(s) + t
        out = new
    if not np.isfinite(out).all():
        raise NumericError("flow produced non-finite coordinates")
    return out


def flow_inverse(coords: np.ndarray, enc: np.ndarray,
                 model: FlowModel | FlowArrays, dtype=np.float64) -> np.ndarray:
    """Exact inverse: blocks in reverse order, z = (z' - t) * exp(-s)."""
    arrays = model if isinstance(model, FlowArrays) else FlowArrays.from_model(model, dtype)
    out = np.ascontiguousarray(coords, dtype=dtype)
    enc = np.ascontiguousarray(enc, dtype=dtype)
    for k in range(len(arrays.blocks) - 1, -1, -1):
        b = arrays.blocks[k]
        s, t = _block_scale_shift(out, enc, b)  # masked dim is zeroed, so s,t match forward
        if np.abs(s).max(initial=0.0) > MAX_LOG_SCALE:
            raise NumericError(f"coupling block {k}: log-scale exceeds {MAX_LOG_SCALE}")
        new = out.copy()
        new[:, b.masked_dim] = (out[:, b.masked_dim] - t) * np.exp(-s)
        out = new
    return out


def coupling_apply(coords: np.ndarray, enc: np.ndarray, block: CouplingBlockParams,
                   proj_dim: int, inverse: bool = False) -> np.ndarray:
    """Eval-mode single block (forward or inverse) on raw arrays."""
    one = FlowModel(blocks=[block], embed_dim=len(enc), proj_dim=proj_dim, hidden=block.s1_b.shape[0])
    return flow_inverse(coords, enc, one) if inverse else flow_deform(coords, enc, one)


def deform_mesh(template: Mesh, enc: np.ndarray, model: FlowModel | FlowArrays) -> Mesh:
    """Deform the template's vertices; the face array object is reused verbatim."""
    return template.with_vertices(flow_deform(template.vertices, enc, model))
