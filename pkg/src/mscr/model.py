"""Two-branch masked-restoration network.

Global and local conv encoders meet in a projection-free self-attention
over the concatenated token sequences; each branch adds a residual MLP
correction pooled from the other branch's attention span, then decodes
to a restoration plus a per-point uncertainty. A trend autoencoder
restores the global signal from the smoothed-difference trend fused with
the global feature.

Features are channels x length maps; tokens are positions (width =
channel count), so both branches must share feature_dim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    attention,
    concat,
    conv1d,
    leaky_relu,
    matmul,
    mul,
    narrow,
    reshape,
    softplus,
    tmean,
    transpose,
    upsample_nearest,
)
from .sigproc import MaskSpec

LEAKY_SLOPE = 0.2
SIGMA_FLOOR = 1e-6
# raw-output bias making softplus(raw) == 1 at init, so early losses
# divide by ~1 instead of ~ln 2
SIGMA_BIAS0 = float(np.log(np.e - 1.0))


@dataclass
class ModelConfig:
    D: int = 512
    d: int = 96
    channels_g: tuple = (16, 32, 64)
    kernels_g: tuple = (7, 5, 5, 3)
    channels_l: tuple = (16, 32)
    kernels_l: tuple = (7, 5, 3)
    feature_dim: int = 32
    attention_tokens: str = "per_position"
    seed: int = 0

    def __post_init__(self):
        self.channels_g = tuple(int(c) for c in self.channels_g)
        self.channels_l = tuple(int(c) for c in self.channels_l)
        self.kernels_g = tuple(int(k) for k in self.kernels_g)
        self.kernels_l = tuple(int(k) for k in self.kernels_l)
        if self.feature_dim <= 0:
            raise ContractError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.attention_tokens != "per_position":
            raise ContractError(
                f"unsupported attention tokenization {self.attention_tokens!r}"
            )
        if len(self.kernels_g) != len(self.channels_g) + 1:
            raise ContractError("global branch needs len(kernels) == len(channels) + 1")
        if len(self.kernels_l) != len(self.channels_l) + 1:
            raise ContractError("local branch needs len(kernels) == len(channels) + 1")
        for k in self.kernels_g + self.kernels_l:
            if k % 2 != 1:
                raise ContractError(f"kernel sizes must be odd, got {k}")
        if self.D % self.stride_g != 0:
            raise ContractError(f"D={self.D} not divisible by encoder stride {self.stride_g}")
        if self.d % self.stride_l != 0:
            raise ContractError(f"d={self.d} not divisible by encoder stride {self.stride_l}")
        if self.D // self.stride_g < 1 or self.d // self.stride_l < 1:
            raise ContractError("encoder downsamples the input away")

    @property
    def stride_g(self) -> int:
        return 2 ** len(self.kernels_g)

    @property
    def stride_l(self) -> int:
        return 2 ** len(self.kernels_l)

    @property
    def tokens_g(self) -> int:
        return self.D // self.stride_g

    @property
    def tokens_l(self) -> int:
        return self.d // self.stride_l


TINY_CONFIG = dict(
    D=64, d=16, channels_g=(8,), kernels_g=(5, 3), channels_l=(8,), kernels_l=(5, 3),
    feature_dim=8,
)


def tiny_config(seed: int = 0) -> ModelConfig:
    """Small enough for finite-difference checks over every parameter."""
    return ModelConfig(seed=seed, **TINY_CONFIG)


@dataclass
class FeaturePair:
    f_in_g: Tensor
    f_in_l: Tensor
    f_ca: Tensor
    f_out_g: Tensor
    f_out_l: Tensor


@dataclass
class RestorationOutput:
    x_hat_g: Tensor
    sigma_g: Tensor
    x_hat_l: Tensor
    sigma_l: Tensor
    x_hat_t: Tensor


# -- parameter construction --------------------------------------------------


def _conv_shapes(c_in: int, channels, kernels, feature_dim: int):
    """(c_in, c_out, k) per encoder block; last block lands on feature_dim."""
    outs = list(channels) + [feature_dim]
    shapes = []
    for c_out, k in zip(outs, kernels):
        shapes.append((c_in, c_out, k))
        c_in = c_out
    return shapes


def _decoder_shapes(c_in: int, channels, kernels):
    """Mirror of the encoder: reversed channels, first width repeated last."""
    outs = list(reversed(channels)) + [channels[0]]
    shapes = []
    for c_out, k in zip(outs, reversed(kernels)):
        shapes.append((c_in, c_out, k))
        c_in = c_out
    return shapes


def init_params(cfg: ModelConfig) -> dict:
    """Ordered name -> Tensor map. Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)),
    biases zero except the uncertainty heads (softplus(bias) == 1).
    """
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, Tensor] = {}

    def conv_param(name, c_in, c_out, k):
        bound = np.sqrt(1.0 / (c_in * k))
        params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (c_out, c_in, k)), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros((c_out, 1)), requires_grad=True)

    def mlp_param(name, width):
        for layer in (0, 1):
            bound = np.sqrt(1.0 / width)
            params[f"{name}.{layer}.w"] = Tensor(
                rng.uniform(-bound, bound, (width, width)), requires_grad=True
            )
            params[f"{name}.{layer}.b"] = Tensor(np.zeros((width, 1)), requires_grad=True)

    def head_param(name, c_in, sigma_bias=False):
        bound = np.sqrt(1.0 / (c_in * 3))
        params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (1, c_in, 3)), requires_grad=True)
        bias = SIGMA_BIAS0 if sigma_bias else 0.0
        params[f"{name}.b"] = Tensor(np.full((1, 1), bias), requires_grad=True)

    F = cfg.feature_dim
    for i, (ci, co, k) in enumerate(_conv_shapes(1, cfg.channels_g, cfg.kernels_g, F)):
        conv_param(f"enc_g.{i}", ci, co, k)
    for i, (ci, co, k) in enumerate(_conv_shapes(1, cfg.channels_l, cfg.kernels_l, F)):
        conv_param(f"enc_l.{i}", ci, co, k)
    for i, (ci, co, k) in enumerate(_decoder_shapes(F, cfg.channels_g, cfg.kernels_g)):
        conv_param(f"dec_g.{i}", ci, co, k)
    head_param("dec_g.head_x", cfg.channels_g[0])
    head_param("dec_g.head_s", cfg.channels_g[0], sigma_bias=True)
    for i, (ci, co, k) in enumerate(_decoder_shapes(F, cfg.channels_l, cfg.kernels_l)):
        conv_param(f"dec_l.{i}", ci, co, k)
    head_param("dec_l.head_x", cfg.channels_l[0])
    head_param("dec_l.head_s", cfg.channels_l[0], sigma_bias=True)
    mlp_param("phi_g", F)
    mlp_param("phi_l", F)
    for i, (ci, co, k) in enumerate(_conv_shapes(1, cfg.channels_g, cfg.kernels_g, F)):
        conv_param(f"enc_t.{i}", ci, co, k)
    for i, (ci, co, k) in enumerate(_decoder_shapes(2 * F, cfg.channels_g, cfg.kernels_g)):
        conv_param(f"dec_t.{i}", ci, co, k)
    head_param("dec_t.head_x", cfg.channels_g[0])
    return params


def param_count(params: dict) -> int:
    return sum(p.size for p in params.values())


# -- forward pieces -----------------------------------------------------------


def _as_row(x, length: int, what: str) -> Tensor:
    if isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(x, dtype=np.float64))
    if t.data.ndim == 1:
        t = reshape(t, (1, t.data.shape[0]))
    if t.data.shape != (1, length):
        raise DimensionError(f"{what} must have length {length}, got {t.data.shape}")
    return t


def _encoder(x: Tensor, params: dict, prefix: str, n_blocks: int) -> Tensor:
    h = x
    for i in range(n_blocks):
        w, b = params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"]
        k = w.data.shape[2]
        h = leaky_relu(add(conv1d(h, w, stride=2, padding=(k - 1) // 2), b), LEAKY_SLOPE)
    return h


def _decoder_body(f: Tensor, params: dict, prefix: str, n_blocks: int) -> Tensor:
    h = f
    for i in range(n_blocks):
        w, b = params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"]
        k = w.data.shape[2]
        h = upsample_nearest(h, 2)
        h = leaky_relu(add(conv1d(h, w, stride=1, padding=(k - 1) // 2), b), LEAKY_SLOPE)
    return h


def _head(body: Tensor, params: dict, name: str) -> Tensor:
    w, b = params[f"{name}.w"], params[f"{name}.b"]
    out = add(conv1d(body, w, stride=1, padding=1), b)
    return reshape(out, (out.data.shape[1],))


def encode(x_g_masked, x_l_masked, params: dict, cfg: ModelConfig):
    """Run both conv stacks on already-masked inputs."""
    xg = _as_row(x_g_masked, cfg.D, "global input")
    xl = _as_row(x_l_masked, cfg.d, "local input")
    f_in_g = _encoder(xg, params, "enc_g", len(cfg.kernels_g))
    f_in_l = _encoder(xl, params, "enc_l", len(cfg.kernels_l))
    return f_in_g, f_in_l


def _mlp(pooled: Tensor, params: dict, prefix: str) -> Tensor:
    h = add(matmul(params[f"{prefix}.0.w"], pooled), params[f"{prefix}.0.b"])
    h = leaky_relu(h, LEAKY_SLOPE)
    return add(matmul(params[f"{prefix}.1.w"], h), params[f"{prefix}.1.b"])


def cross_attention_fuse(f_in_g: Tensor, f_in_l: Tensor, params: dict) -> FeaturePair:
    """Self-attention over concatenated token sequences, then residual MLP
    corrections: each branch receives the mean-pooled attention output of
    the *other* branch's token span.
    """
    if f_in_g.data.shape[0] != f_in_l.data.shape[0]:
        raise DimensionError(
            f"token widths differ: {f_in_g.data.shape[0]} vs {f_in_l.data.shape[0]}"
        )
    n_g = f_in_g.data.shape[1]
    tokens = concat([transpose(f_in_g), transpose(f_in_l)], axis=0)
    f_ca = attention(tokens, tokens, tokens)
    ca_g = narrow(f_ca, slice(0, n_g))
    ca_l = narrow(f_ca, slice(n_g, None))
    pool_g = reshape(tmean(ca_g, axis=0), (f_in_g.data.shape[0], 1))
    pool_l = reshape(tmean(ca_l, axis=0), (f_in_g.data.shape[0], 1))
    f_out_g = add(f_in_g, _mlp(pool_l, params, "phi_g"))
    f_out_l = add(f_in_l, _mlp(pool_g, params, "phi_l"))
    return FeaturePair(f_in_g=f_in_g, f_in_l=f_in_l, f_ca=f_ca, f_out_g=f_out_g, f_out_l=f_out_l)


def decode_with_uncertainty(f_out: Tensor, params: dict, prefix: str, n_blocks: int):
    """Returns (x_hat, sigma); sigma = softplus(raw) + 1e-6 > 0."""
    body = _decoder_body(f_out, params, prefix, n_blocks)
    x_hat = _head(body, params, f"{prefix}.head_x")
    raw = _head(body, params, f"{prefix}.head_s")
    sigma = add(softplus(raw), SIGMA_FLOOR)
    return x_hat, sigma


def tgm_forward(x_t, f_out_g: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    """Restore the global signal from the trend fused with f_out_g."""
    xt = _as_row(x_t, cfg.D, "trend input")
    e_t = _encoder(xt, params, "enc_t", len(cfg.kernels_g))
    bottleneck = concat([e_t, f_out_g], axis=0)
    body = _decoder_body(bottleneck, params, "dec_t", len(cfg.kernels_g))
    return _head(body, params, "dec_t.head_x")


def model_forward(
    x_g,
    x_l,
    mask_g: Optional[MaskSpec],
    mask_l: Optional[MaskSpec],
    x_t,
    params: dict,
    cfg: ModelConfig,
) -> RestorationOutput:
    """Mask, encode, fuse, decode both branches, and run the trend module.

    Masks may be None (no masking, pure reconstruction). Inputs are plain
    vectors; gradients flow to params only.
    """
    x_g = np.asarray(x_g, dtype=np.float64)
    x_l = np.asarray(x_l, dtype=np.float64)
    if x_g.shape != (cfg.D,):
        raise DimensionError(f"global input must have shape ({cfg.D},), got {x_g.shape}")
    if x_l.shape != (cfg.d,):
        raise DimensionError(f"local input must have shape ({cfg.d},), got {x_l.shape}")
    xg_masked = x_g * mask_g.keep if mask_g is not None else x_g
    xl_masked = x_l * mask_l.keep if mask_l is not None else x_l

    f_in_g, f_in_l = encode(xg_masked, xl_masked, params, cfg)
    fused = cross_attention_fuse(f_in_g, f_in_l, params)
    x_hat_g, sigma_g = decode_with_uncertainty(fused.f_out_g, params, "dec_g", len(cfg.kernels_g))
    x_hat_l, sigma_l = decode_with_uncertainty(fused.f_out_l, params, "dec_l", len(cfg.kernels_l))
    x_hat_t = tgm_forward(x_t, fused.f_out_g, params, cfg)
    return RestorationOutput(
        x_hat_g=x_hat_g, sigma_g=sigma_g, x_hat_l=x_hat_l, sigma_l=sigma_l, x_hat_t=x_hat_t
    )
