"""The lifting network: skeleton embedding, stacked graph-conv + U-shaped
MLP blocks, and dual decoders for the predicted 3D mean and per-joint
log-variance.

Every block runs one graph convolution and feeds its output through two
parallel U-shaped MLPs, one mixing channels (with a bottleneck C -> C/4
-> C) and one mixing joints (K -> S_mid -> K on the transposed view).
The two pathway outputs are summed and a residual wraps the whole block,
so zeroed MLP weights leave the block an exact identity on the
convolution output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .skeleton import SkeletonGraph, gcn_layer

LOG_VARIANCE_CLAMP = 10.0  # keeps exp(+-s) representable and gradients sane


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; shapes of all weights derive from these."""

    joints: int = 17
    blocks: int = 3
    channels: int = 512
    spatial_mid: int = 102
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.joints < 1:
            raise ContractError("joints must be >= 1")
        if self.blocks < 1:
            raise ContractError("blocks must be >= 1")
        if self.channels < 8 or self.channels % 4 != 0:
            raise ContractError("channels must be >= 8 and divisible by 4")
        if self.spatial_mid < self.joints:
            raise ContractError("spatial_mid must be >= joints")
        if self.layer_norm_eps <= 0:
            raise ContractError("layer_norm_eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape manifest; its order fixes the checkpoint layout."""
    k, c, s = cfg.joints, cfg.channels, cfg.spatial_mid
    c4 = c // 4
    shapes: dict[str, tuple[int, ...]] = {
        "embed.weight": (2, c),
        "embed.bias": (c,),
    }
    for b in range(cfg.blocks):
        prefix = f"block{b}"
        shapes[f"{prefix}.gcn.weight"] = (c, c)
        shapes[f"{prefix}.channel.norm.gamma"] = (c,)
        shapes[f"{prefix}.channel.norm.beta"] = (c,)
        shapes[f"{prefix}.channel.down.weight"] = (c, c4)
        shapes[f"{prefix}.channel.down.bias"] = (c4,)
        shapes[f"{prefix}.channel.mid.weight"] = (c4, c4)
        shapes[f"{prefix}.channel.mid.bias"] = (c4,)
        shapes[f"{prefix}.channel.up.weight"] = (c4, c)
        shapes[f"{prefix}.channel.up.bias"] = (c,)
        shapes[f"{prefix}.spatial.norm.gamma"] = (k,)
        shapes[f"{prefix}.spatial.norm.beta"] = (k,)
        shapes[f"{prefix}.spatial.up.weight"] = (k, s)
        shapes[f"{prefix}.spatial.up.bias"] = (s,)
        shapes[f"{prefix}.spatial.mid.weight"] = (s, s)
        shapes[f"{prefix}.spatial.mid.bias"] = (s,)
        shapes[f"{prefix}.spatial.down.weight"] = (s, k)
        shapes[f"{prefix}.spatial.down.bias"] = (k,)
    shapes["decoder_mu.weight"] = (c, 3)
    shapes["decoder_mu.bias"] = (3,)
    shapes["decoder_s.weight"] = (c, 1)
    shapes["decoder_s.bias"] = (1,)
    return shapes


class ModelParams:
    """Ordered collection of named learnable tensors."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def detached(self) -> "ModelParams":
        """Same data, no gradient tracking; use for frozen-parameter passes."""
        return ModelParams({name: t.detach() for name, t in self.items()})


@dataclass
class GaussianPosePrediction:
    """Per-joint Gaussian output: mean positions and log-variances.

    Both fields are tensors so the prediction stays differentiable; use
    ``.data`` (or ``detach()``) for plain arrays. ``s`` is clamped to
    [-LOG_VARIANCE_CLAMP, +LOG_VARIANCE_CLAMP] by construction.
    """

    mu: Tensor  # [.., K, 3]
    s: Tensor  # [.., K]

    def detach(self) -> "GaussianPosePrediction":
        return GaussianPosePrediction(self.mu.detach(), self.s.detach())

    @property
    def sigma_squared(self) -> np.ndarray:
        return np.exp(self.s.data)


def init_params(cfg: ModelConfig) -> ModelParams:
    """Deterministic init: Glorot-uniform weights, zero biases, unit norms."""
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".weight"):
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            value = np.ones(shape)
        else:  # biases and betas start at zero; decoder_s bias 0 => prior var 1
            value = np.zeros(shape)
        tensors[name] = Tensor(value, requires_grad=True)
    return ModelParams(tensors)


def _mlp(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    # "MLP" throughout: one linear map followed by GELU
    return ad.gelu(ad.matmul(x, weight) + bias)


def channel_umlp(x: Tensor, params: ModelParams, block: int, eps: float) -> Tensor:
    """Bottleneck MLP over the channel axis with inner and outer residuals."""
    p = params[f"block{block}.channel.norm.gamma"], params[f"block{block}.channel.norm.beta"]
    xn = ad.layer_norm(x, p[0], p[1], eps)
    down = _mlp(xn, params[f"block{block}.channel.down.weight"], params[f"block{block}.channel.down.bias"])
    mid = _mlp(down, params[f"block{block}.channel.mid.weight"], params[f"block{block}.channel.mid.bias"]) + down
    return _mlp(mid, params[f"block{block}.channel.up.weight"], params[f"block{block}.channel.up.bias"]) + x


def spatial_umlp(x: Tensor, params: ModelParams, block: int, eps: float) -> Tensor:
    """Expansion MLP over the joint axis, applied to the transposed view."""
    xt = ad.swap_last2(x)  # [.., C, K]
    xn = ad.layer_norm(
        xt,
        params[f"block{block}.spatial.norm.gamma"],
        params[f"block{block}.spatial.norm.beta"],
        eps,
    )
    up = _mlp(xn, params[f"block{block}.spatial.up.weight"], params[f"block{block}.spatial.up.bias"])
    mid = _mlp(up, params[f"block{block}.spatial.mid.weight"], params[f"block{block}.spatial.mid.bias"]) + up
    down = _mlp(mid, params[f"block{block}.spatial.down.weight"], params[f"block{block}.spatial.down.bias"]) + xt
    return ad.swap_last2(down)


def _as_input_tensor(j2d, joints: int) -> Tensor:
    x = j2d if isinstance(j2d, Tensor) else Tensor(np.asarray(j2d, dtype=np.float64))
    if x.ndim < 2 or x.shape[-1] != 2 or x.shape[-2] != joints:
        raise ShapeError(f"2D input shape {x.shape} does not match [.., {joints}, 2]")
    return x


def forward_hidden(params: ModelParams, cfg: ModelConfig, g: SkeletonGraph, j2d) -> Tensor:
    """Embedding plus all blocks; returns the pre-decoder state [.., K, C]."""
    if g.joint_count != cfg.joints:
        raise ShapeError(f"skeleton K={g.joint_count} does not match config joints={cfg.joints}")
    x = _as_input_tensor(j2d, cfg.joints)
    h = ad.matmul(x, params["embed.weight"]) + params["embed.bias"]
    for b in range(cfg.blocks):
        conv = gcn_layer(h, params[f"block{b}.gcn.weight"], g, activate=True)
        mixed = channel_umlp(conv, params, b, cfg.layer_norm_eps) + spatial_umlp(
            conv, params, b, cfg.layer_norm_eps
        )
        h = h + mixed
    return h


def decode_mu(params: ModelParams, hidden: Tensor) -> Tensor:
    return ad.matmul(hidden, params["decoder_mu.weight"]) + params["decoder_mu.bias"]


def decode_s(params: ModelParams, hidden: Tensor) -> Tensor:
    raw = ad.matmul(hidden, params["decoder_s.weight"]) + params["decoder_s.bias"]
    return ad.clamp(ad.reshape(raw, raw.shape[:-1]), -LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP)


def forward(params: ModelParams, cfg: ModelConfig, g: SkeletonGraph, j2d) -> GaussianPosePrediction:
    """Full differentiable pass from 2D joints to the Gaussian prediction."""
    hidden = forward_hidden(params, cfg, g, j2d)
    return GaussianPosePrediction(mu=decode_mu(params, hidden), s=decode_s(params, hidden))


def forward_from_hidden(params: ModelParams, cfg: ModelConfig, g: SkeletonGraph,
                        hidden) -> GaussianPosePrediction:
    """Decoders only, for optimizing the pre-decoder state directly."""
    h = hidden if isinstance(hidden, Tensor) else Tensor(np.asarray(hidden, dtype=np.float64))
    if h.ndim < 2 or h.shape[-2:] != (cfg.joints, cfg.channels):
        raise ShapeError(
            f"hidden shape {h.shape} does not match [.., {cfg.joints}, {cfg.channels}]"
        )
    return GaussianPosePrediction(mu=decode_mu(params, h), s=decode_s(params, h))


def predict(params: ModelParams, cfg: ModelConfig, g: SkeletonGraph, j2d) -> GaussianPosePrediction:
    """Inference-mode forward: no tape recording, frozen parameters."""
    return forward(params.detached(), cfg, g, j2d)
