"""Permutation-invariant point-cloud encoder and fully-connected decoder.

The encoder stacks shared per-point linear maps with batchnorm and ReLU and
collapses the point axis with a channel-wise max, so the code depends only on
the multiset of points. The decoder maps the code back to a fixed-size cloud
and exists only to pretrain the encoder with the chamfer reconstruction loss;
inference never runs it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import inference as fast
from .autodiff import BatchNormState, Parameter, Tape, Tensor
from .chamfer import chamfer_loss
from .errors import ConfigError, NumericError
from .geometry import PointCloud
from .optim import AdamState, adam_step, clear_grads

DEFAULT_ENCODER_WIDTHS = (64, 128, 256)
DEFAULT_DECODER_WIDTHS = (512, 1024)


@dataclass
class PointBlockParams:
    """One encoder stage: pointwise linear -> batchnorm -> ReLU."""

    weight: Parameter
    bias: Parameter
    gamma: Parameter
    beta: Parameter
    bn: BatchNormState


@dataclass
class EncoderParams:
    blocks: list[PointBlockParams]
    widths: tuple
    embed_dim: int

    def parameters(self) -> list[Parameter]:
        out = []
        for b in self.blocks:
            out.extend([b.weight, b.bias, b.gamma, b.beta])
        return out

    def set_trainable(self, trainable: bool) -> None:
        for p in self.parameters():
            p.trainable = trainable


@dataclass
class DecoderParams:
    weights: list[Parameter]
    biases: list[Parameter]
    widths: tuple
    embed_dim: int
    output_points: int

    def parameters(self) -> list[Parameter]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def init_encoder(rng: np.random.Generator, embed_dim: int = 1024,
                 widths: tuple = DEFAULT_ENCODER_WIDTHS,
                 prefix: str = "encoder") -> EncoderParams:
    dims = (3,) + tuple(widths) + (embed_dim,)
    blocks = []
    for i in range(len(dims) - 1):
        cin, cout = dims[i], dims[i + 1]
        blocks.append(PointBlockParams(
            weight=Parameter(_he_init(rng, cin, cout), f"{prefix}.block{i}.weight"),
            bias=Parameter(np.zeros(cout), f"{prefix}.block{i}.bias"),
            gamma=Parameter(np.ones(cout), f"{prefix}.block{i}.gamma"),
            beta=Parameter(np.zeros(cout), f"{prefix}.block{i}.beta"),
            bn=BatchNormState.create(cout),
        ))
    return EncoderParams(blocks=blocks, widths=tuple(widths), embed_dim=embed_dim)


def init_decoder(rng: np.random.Generator, embed_dim: int, output_points: int,
                 widths: tuple = DEFAULT_DECODER_WIDTHS,
                 prefix: str = "decoder") -> DecoderParams:
    dims = (embed_dim,) + tuple(widths) + (3 * output_points,)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        weights.append(Parameter(_he_init(rng, dims[i], dims[i + 1]), f"{prefix}.fc{i}.weight"))
        biases.append(Parameter(np.zeros(dims[i + 1]), f"{prefix}.fc{i}.bias"))
    return DecoderParams(weights=weights, biases=biases, widths=tuple(widths),
                         embed_dim=embed_dim, output_points=output_points)


def encoder_forward(x: Tensor, params: EncoderParams, mode: str) -> Tensor:
    """Tape path: per-point blocks then max pooling, returns a (1, D) tensor."""
    h = x
    for b in params.blocks:
        h = ad.pointwise_linear(h, b.weight, b.bias)
        h = ad.batchnorm_points(h, b.gamma, b.beta, b.bn, mode)
        h = ad.relu(h)
    return ad.maxpool_points(h)


def encode(cloud: PointCloud | np.ndarray, params: EncoderParams,
           dtype=np.float64) -> np.ndarray:
    """Eval-mode encoding of a cloud, returned as a (D,) array.

    Exactly permutation invariant: every per-point row is computed
    independently of batch size and order, and the final max is order-free.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    h = np.ascontiguousarray(pts, dtype=dtype)
    for b in params.blocks:
        h = fast.linear_rows(h, b.weight.data.astype(dtype, copy=False),
                             b.bias.data.astype(dtype, copy=False))
        h = fast.bn_eval_rows(h, b.gamma.data.astype(dtype, copy=False),
                              b.beta.data.astype(dtype, copy=False),
                              b.bn.running_mean.astype(dtype, copy=False),
                              b.bn.running_var.astype(dtype, copy=False), b.bn.eps)
        h = fast.relu_rows(h)
    return h.max(axis=0)


@dataclass
class EncoderArrays:
    """Encoder weights pre-cast for the benchmark fast path."""

    layers: list

    @classmethod
    def from_params(cls, params: EncoderParams, dtype) -> "EncoderArrays":
        layers = []
        for b in params.blocks:
            inv_std = (1.0 / np.sqrt(b.bn.running_var + b.bn.eps))
            layers.append((
                b.weight.data.astype(dtype),
                b.bias.data.astype(dtype),
                b.gamma.data.astype(dtype),
                b.beta.data.astype(dtype),
                b.bn.running_mean.astype(dtype),
                inv_std.astype(dtype),
            ))
        return cls(layers=layers)

    def encode(self, points: np.ndarray) -> np.ndarray:
        h = points
        for weight, bias, gamma, beta, mean, inv_std in self.layers:
            h = fast.linear_rows(h, weight, bias)
            h = (h - mean) * inv_std * gamma + beta
            h = fast.relu_rows(h)
        return h.max(axis=0)


def decoder_forward(code: Tensor, params: DecoderParams) -> Tensor:
    """(1, D) code -> (m, 3) cloud; ReLU between layers, linear output."""
    if code.shape != (1, params.embed_dim):
        raise ConfigError(f"decoder expects a (1, {params.embed_dim}) code, got {code.shape}")
    h = code
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.pointwise_linear(h, w, b)
        if i != last:
            h = ad.relu(h)
    return ad.reshape(h, (params.output_points, 3))


def decode(code: np.ndarray, params: DecoderParams) -> np.ndarray:
    """Eval decode of a (D,) code into an (m, 3) array."""
    return decoder_forward(Tensor(code[None, :]), params).data


def ae_pretrain_step(points: np.ndarray, enc_params: EncoderParams,
                     dec_params: DecoderParams, opt: AdamState, lr: float,
                     cross_check: bool = False) -> float:
    """One reconstruction step: encode, decode, chamfer, backprop, Adam.

    With cross_check the reported loss is verified against the brute-force
    chamfer oracle before the update is applied.
    """
    if len(points) != dec_params.output_points:
        raise ConfigError(
            f"decoder emits {dec_params.output_points} points but the cloud has {len(points)}")
    params = enc_params.parameters() + dec_params.parameters()
    clear_grads(params)
    with Tape() as tape:
        x = Tensor(points)
        code = encoder_forward(x, enc_params, mode="train")
        decoded = decoder_forward(code, dec_params)
        loss = chamfer_loss(decoded, x)
    tape.backward(loss)
    if cross_check:
        from .geometry import chamfer_bruteforce
        oracle = chamfer_bruteforce(decoded.data, points)
        if abs(float(loss.data) - oracle) > 1e-9:
            raise NumericError(f"chamfer loss {float(loss.data)} != oracle {oracle}")
    adam_step(params, opt, lr)
    return float(loss.data)
