"""Per-clip multi-modal fusion network with temporal self-attention heads.

Per clip: each enabled visual feature kind runs through its own projection
MLP; a single-head cross-attention uses the projected action feature as one
query over the shared text tokens; projected features and the attention
output are concatenated and fused by an 8-layer MLP. The fused clip vectors,
plus learned position embeddings, pass through 8 pre-norm self-attention
blocks. Two sigmoid heads read the temporal features: the watch-percentage
head averages over all clips, the continuation head over the clips covering
the opening seconds of the video.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError

VISUAL_KINDS = ("semantic", "distortion", "action", "aesthetic", "caption_mid")
TEXT_KIND = "text"
ALL_KINDS = VISUAL_KINDS + (TEXT_KIND,)

DEFAULT_FEATURE_DIM = 64
FUSION_LAYERS = 8
TEMPORAL_LAYERS = 8


def _default_feature_dims() -> dict[str, int]:
    return {kind: DEFAULT_FEATURE_DIM for kind in ALL_KINDS}


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    feature_dims: Mapping[str, int] = field(default_factory=_default_feature_dims)
    frames_per_clip: int = 16
    max_clips: int = 225
    features: tuple[str, ...] = ALL_KINDS
    ecr_window_s: float = 5.0
    duration_as_input: bool = False
    ecr_causal_mask: bool = False

    def validate(self) -> None:
        if self.d_model < 1:
            raise DataError("d_model must be >= 1")
        if self.frames_per_clip < 1:
            raise DataError("frames_per_clip must be >= 1")
        if self.max_clips < 1:
            raise DataError("max_clips must be >= 1")
        if self.ecr_window_s <= 0:
            raise DataError("ecr_window_s must be positive")
        if not self.features:
            raise DataError("at least one feature kind must be enabled")
        for kind in self.features:
            if kind not in ALL_KINDS:
                raise DataError(f"unknown feature kind {kind!r}")
            if kind not in self.feature_dims or self.feature_dims[kind] < 1:
                raise DataError(f"feature kind {kind!r} has no valid dimension")

    @property
    def visual_kinds(self) -> tuple[str, ...]:
        return tuple(k for k in VISUAL_KINDS if k in self.features)

    @property
    def cross_attention_enabled(self) -> bool:
        # The attention query comes from the action feature; text provides
        # keys/values. Both must be enabled for the block to exist.
        return "action" in self.features and TEXT_KIND in self.features

    def fusion_input_dim(self) -> int:
        dim = len(self.visual_kinds) * self.d_model
        if self.cross_attention_enabled:
            dim += self.d_model
        if self.duration_as_input:
            dim += 1
        return dim

    def ecr_clip_count(self, frame_rate: float, n_clips: int) -> int:
        window = math.floor(self.ecr_window_s * frame_rate / self.frames_per_clip)
        return min(n_clips, max(1, window))

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "feature_dims": {k: self.feature_dims[k] for k in ALL_KINDS if k in self.feature_dims},
            "frames_per_clip": self.frames_per_clip,
            "max_clips": self.max_clips,
            "features": list(self.features),
            "ecr_window_s": self.ecr_window_s,
            "duration_as_input": self.duration_as_input,
            "ecr_causal_mask": self.ecr_causal_mask,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        cfg = cls(
            d_model=int(payload.get("d_model", 256)),
            feature_dims={
                str(k): int(v)
                for k, v in payload.get("feature_dims", _default_feature_dims()).items()
            },
            frames_per_clip=int(payload.get("frames_per_clip", 16)),
            max_clips=int(payload.get("max_clips", 225)),
            features=tuple(payload.get("features", list(ALL_KINDS))),
            ecr_window_s=float(payload.get("ecr_window_s", 5.0)),
            duration_as_input=bool(payload.get("duration_as_input", False)),
            ecr_causal_mask=bool(payload.get("ecr_causal_mask", False)),
        )
        cfg.validate()
        return cfg


@dataclass
class FeatureBundle:
    """Precomputed per-clip visual features plus shared text token embeddings."""

    video_id: str
    n_clips: int
    frame_rate: float
    clip_features: dict[str, np.ndarray]
    text_tokens: np.ndarray

    def validate(self) -> None:
        if not self.video_id:
            raise DataError("feature bundle has empty video_id")
        if self.n_clips < 1:
            raise DataError(f"bundle {self.video_id!r}: n_clips must be >= 1")
        if self.frame_rate <= 0 or not math.isfinite(self.frame_rate):
            raise DataError(f"bundle {self.video_id!r}: invalid frame_rate")
        for kind, arr in self.clip_features.items():
            if arr.ndim != 2 or arr.shape[0] != self.n_clips:
                raise DataError(
                    f"bundle {self.video_id!r}: {kind} has shape {arr.shape}, "
                    f"expected ({self.n_clips}, D)"
                )
            if not np.all(np.isfinite(arr)):
                raise DataError(f"bundle {self.video_id!r}: {kind} has non-finite values")
        if self.text_tokens.ndim != 2 or self.text_tokens.shape[0] < 1:
            raise DataError(f"bundle {self.video_id!r}: text tokens must be (T>=1, D)")
        if not np.all(np.isfinite(self.text_tokens)):
            raise DataError(f"bundle {self.video_id!r}: text tokens have non-finite values")


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _linear_init(rng, fan_in: int, fan_out: int, relu_follows: bool) -> np.ndarray:
    # Symmetric uniform scaled by fan-in; the relu gain keeps activation
    # variance stable through the deep fusion stack.
    gain = 6.0 if relu_follows else 3.0
    return _uniform(rng, (fan_in, fan_out), math.sqrt(gain / fan_in))


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Seeded parameter initialization in canonical name order."""
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.d_model
    params: dict[str, Tensor] = {}

    def linear(name: str, fan_in: int, fan_out: int, relu_follows: bool) -> None:
        params[f"{name}.w"] = Tensor(_linear_init(rng, fan_in, fan_out, relu_follows))
        params[f"{name}.b"] = Tensor(np.zeros(fan_out))

    def layer_norm(name: str) -> None:
        params[f"{name}.g"] = Tensor(np.ones(d))
        params[f"{name}.b"] = Tensor(np.zeros(d))

    for kind in config.visual_kinds:
        linear(f"proj.{kind}.0", config.feature_dims[kind], d, relu_follows=True)
        linear(f"proj.{kind}.1", d, d, relu_follows=False)
    if config.cross_attention_enabled:
        d_txt = config.feature_dims[TEXT_KIND]
        linear("xattn.q", d, d, relu_follows=False)
        linear("xattn.k", d_txt, d, relu_follows=False)
        linear("xattn.v", d_txt, d, relu_follows=False)
        linear("xattn.o", d, d, relu_follows=False)
    fusion_in = config.fusion_input_dim()
    for i in range(FUSION_LAYERS):
        linear(f"fusion.{i}", fusion_in if i == 0 else d, d, relu_follows=i < FUSION_LAYERS - 1)
    params["pos_embed"] = Tensor(_uniform(rng, (config.max_clips, d), 0.02))
    for i in range(TEMPORAL_LAYERS):
        layer_norm(f"temporal.{i}.ln1")
        linear(f"temporal.{i}.attn.q", d, d, relu_follows=False)
        linear(f"temporal.{i}.attn.k", d, d, relu_follows=False)
        linear(f"temporal.{i}.attn.v", d, d, relu_follows=False)
        linear(f"temporal.{i}.attn.o", d, d, relu_follows=False)
        layer_norm(f"temporal.{i}.ln2")
        linear(f"temporal.{i}.mlp.0", d, d, relu_follows=True)
        linear(f"temporal.{i}.mlp.1", d, d, relu_follows=False)
    layer_norm("temporal.norm")
    for head in ("head_nawp", "head_ecr"):
        linear(f"{head}.0", d, d, relu_follows=True)
        linear(f"{head}.1", d, 1, relu_follows=False)
    return params


def count_parameters(params: dict[str, Tensor]) -> int:
    """Total number of scalar parameters."""
    return sum(p.data.size for p in params.values())


def _linear_layer(params, name: str, x: Tensor) -> Tensor:
    return ad.add_rowvec(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _layer_norm_affine(params, name: str, x: Tensor) -> Tensor:
    return ad.add_rowvec(
        ad.mul_rowvec(ad.layer_norm_rows(x), params[f"{name}.g"]), params[f"{name}.b"]
    )


def _self_attention(params, prefix: str, x: Tensor, d_model: int) -> Tensor:
    q = _linear_layer(params, f"{prefix}.q", x)
    k = _linear_layer(params, f"{prefix}.k", x)
    v = _linear_layer(params, f"{prefix}.v", x)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_model))
    ctx = ad.matmul(ad.softmax_rows(scores), v)
    return _linear_layer(params, f"{prefix}.o", ctx)


def _temporal_stack(params, config: ModelConfig, fused: Tensor, n_clips: int) -> Tensor:
    x = ad.add(fused, ad.slice_rows(params["pos_embed"], 0, n_clips))
    for i in range(TEMPORAL_LAYERS):
        z = _layer_norm_affine(params, f"temporal.{i}.ln1", x)
        x = ad.add(x, _self_attention(params, f"temporal.{i}.attn", z, config.d_model))
        z = _layer_norm_affine(params, f"temporal.{i}.ln2", x)
        h = ad.relu(_linear_layer(params, f"temporal.{i}.mlp.0", z))
        x = ad.add(x, _linear_layer(params, f"temporal.{i}.mlp.1", h))
    return _layer_norm_affine(params, "temporal.norm", x)


def _head(params, name: str, h: Tensor) -> Tensor:
    hidden = ad.relu(_linear_layer(params, f"{name}.0", h))
    return ad.sigmoid(_linear_layer(params, f"{name}.1", hidden))


def _fuse_clips(
    params, config: ModelConfig, bundle: FeatureBundle, duration_s: float | None
) -> Tensor:
    projected: dict[str, Tensor] = {}
    for kind in config.visual_kinds:
        if kind not in bundle.clip_features:
            raise DataError(f"bundle {bundle.video_id!r} is missing {kind!r} features")
        x = Tensor(bundle.clip_features[kind])
        if x.shape[1] != config.feature_dims[kind]:
            raise DataError(
                f"bundle {bundle.video_id!r}: {kind} dim {x.shape[1]} != "
                f"configured {config.feature_dims[kind]}"
            )
        h = ad.relu(_linear_layer(params, f"proj.{kind}.0", x))
        projected[kind] = _linear_layer(params, f"proj.{kind}.1", h)
    parts = [projected[kind] for kind in config.visual_kinds]
    if config.cross_attention_enabled:
        text = Tensor(bundle.text_tokens)
        if text.shape[1] != config.feature_dims[TEXT_KIND]:
            raise DataError(
                f"bundle {bundle.video_id!r}: text dim {text.shape[1]} != "
                f"configured {config.feature_dims[TEXT_KIND]}"
            )
        q = _linear_layer(params, "xattn.q", projected["action"])
        k = _linear_layer(params, "xattn.k", text)
        v = _linear_layer(params, "xattn.v", text)
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(config.d_model))
        ctx = ad.matmul(ad.softmax_rows(scores), v)
        parts.append(_linear_layer(params, "xattn.o", ctx))
    if config.duration_as_input:
        if duration_s is None:
            raise DataError("duration_as_input requires duration_s")
        parts.append(Tensor(np.full((bundle.n_clips, 1), duration_s / 60.0)))
    h = ad.concat(parts, axis=1)
    for i in range(FUSION_LAYERS):
        h = _linear_layer(params, f"fusion.{i}", h)
        if i < FUSION_LAYERS - 1:
            h = ad.relu(h)
    return h


@dataclass
class ForwardResult:
    nawp_hat: float
    ecr_hat: float
    per_clip: list[tuple[float, float]]
    n_ecr_clips: int
    nawp_node: Tensor
    ecr_node: Tensor


def forward(
    bundle: FeatureBundle,
    params: dict[str, Tensor],
    config: ModelConfig,
    duration_s: float | None = None,
) -> ForwardResult:
    """Run the network on one video's feature bundle."""
    bundle.validate()
    if bundle.n_clips > config.max_clips:
        raise DataError(
            f"bundle {bundle.video_id!r} has {bundle.n_clips} clips, "
            f"model supports {config.max_clips}"
        )
    fused = _fuse_clips(params, config, bundle, duration_s)
    temporal = _temporal_stack(params, config, fused, bundle.n_clips)
    f1 = _head(params, "head_nawp", temporal)
    f2 = _head(params, "head_ecr", temporal)
    n_ecr = config.ecr_clip_count(bundle.frame_rate, bundle.n_clips)
    nawp_node = ad.mean_axis(ad.mean_axis(f1, 0), 0)
    if config.ecr_causal_mask:
        # Recompute the temporal stack on the opening clips only, so later
        # clips cannot leak into the continuation estimate via attention.
        masked = _temporal_stack(
            params, config, ad.slice_rows(fused, 0, n_ecr), n_ecr
        )
        ecr_source = _head(params, "head_ecr", masked)
    else:
        ecr_source = ad.slice_rows(f2, 0, n_ecr)
    ecr_node = ad.mean_axis(ad.mean_axis(ecr_source, 0), 0)
    per_clip = [(float(a), float(b)) for a, b in zip(f1.data[:, 0], f2.data[:, 0])]
    return ForwardResult(
        nawp_hat=float(nawp_node.data),
        ecr_hat=float(ecr_node.data),
        per_clip=per_clip,
        n_ecr_clips=n_ecr,
        nawp_node=nawp_node,
        ecr_node=ecr_node,
    )


def infer_feature_dims(bundle: FeatureBundle) -> dict[str, int]:
    """Feature dimensions as carried by a bundle, keyed like ModelConfig."""
    dims = {kind: int(arr.shape[1]) for kind, arr in bundle.clip_features.items()}
    dims[TEXT_KIND] = int(bundle.text_tokens.shape[1])
    return dims


def config_for_bundle(config: ModelConfig, bundle: FeatureBundle) -> ModelConfig:
    """Copy of ``config`` whose feature dims match the bundle's arrays."""
    dims = dict(config.feature_dims)
    dims.update(infer_feature_dims(bundle))
    return replace(config, feature_dims=dims)
