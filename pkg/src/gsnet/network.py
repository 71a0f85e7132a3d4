"""Backbone -> attention -> classifier assembly, plus the ablation variants.

The backbone is a small trainable CNN (conv3x3 -> layer norm -> swish ->
maxpool2x2 per stage).  The attention module is inserted after the last
stage; the classifier is global average pooling followed by a single
3-neuron linear layer producing raw logits.

The four variants share one code path: `baseline` skips attention entirely,
`cam_only` / `sam_only` run one attention branch with the other fusion
weight fixed at 0, and `full_gsam` runs both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Node, Parameter, Tape
from .gsam import GsamParams, cam_forward, gsam_forward, gsam_init, sam_forward
from .tensor import Tensor, read_t4b, softmax_lastaxis, write_t4b

VARIANTS = ("baseline", "cam_only", "sam_only", "full_gsam")

CHECKPOINT_MANIFEST = "checkpoint.txt"


def validate_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return variant


@dataclass(frozen=True)
class BackboneConfig:
    """Stage plan for the feature extractor.

    Each stage halves the spatial dims via maxpool2x2, so input_hw must be
    divisible by 2**len(stage_channels); the final channel count must be
    even because the spatial attention branch projects to half width.
    """

    stage_channels: tuple[int, ...] = (16, 32, 64, 64)
    input_hw: int = 64
    in_channels: int = 1

    def __post_init__(self):
        if not self.stage_channels:
            raise ValueError("at least one backbone stage is required")
        if any(c < 1 for c in self.stage_channels):
            raise ValueError("stage channel counts must be positive")
        if self.stage_channels[-1] % 2:
            raise ValueError("final channel count must be even")
        divisor = 2 ** len(self.stage_channels)
        if self.input_hw % divisor:
            raise ValueError(
                f"input_hw={self.input_hw} must be divisible by {divisor} "
                f"for {len(self.stage_channels)} pooling stages"
            )

    @property
    def feature_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def feature_hw(self) -> int:
        return self.input_hw // (2 ** len(self.stage_channels))


@dataclass
class StageParams:
    conv_weight: Parameter  # (3, 3, c_in, c_out)
    conv_bias: Parameter    # (c_out,)
    ln_gamma: Parameter     # (c_out,)
    ln_beta: Parameter      # (c_out,)

    def parameters(self):
        return [self.conv_weight, self.conv_bias, self.ln_gamma, self.ln_beta]


@dataclass
class NetworkParams:
    config: BackboneConfig
    stages: list[StageParams]
    gsam: GsamParams | None
    fc_weight: Parameter  # (k, 3)
    fc_bias: Parameter    # (3,)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for stage in self.stages:
            params += stage.parameters()
        if self.gsam is not None:
            params += self.gsam.parameters()
        params += [self.fc_weight, self.fc_bias]
        return params


def network_init(config: BackboneConfig, include_gsam: bool, seed: int) -> NetworkParams:
    """Build a parameter tree with seeded Xavier-uniform initialization.

    The backbone/classifier stream and the attention stream are derived
    from the seed independently, so all variants built from the same seed
    share identical backbone and classifier values.
    """
    rng = np.random.default_rng([seed, 0])
    stages = []
    c_in = config.in_channels
    for i, c_out in enumerate(config.stage_channels):
        limit = math.sqrt(6.0 / (9 * c_in + 9 * c_out))
        stages.append(StageParams(
            conv_weight=Parameter(f"backbone.stage{i}.conv.weight",
                                  rng.uniform(-limit, limit, (3, 3, c_in, c_out))),
            conv_bias=Parameter(f"backbone.stage{i}.conv.bias", np.zeros(c_out)),
            ln_gamma=Parameter(f"backbone.stage{i}.ln_gamma", np.ones(c_out)),
            ln_beta=Parameter(f"backbone.stage{i}.ln_beta", np.zeros(c_out)),
        ))
        c_in = c_out
    k = config.feature_channels
    limit = math.sqrt(6.0 / (k + 3))
    fc_weight = Parameter("classifier.weight", rng.uniform(-limit, limit, (k, 3)))
    fc_bias = Parameter("classifier.bias", np.zeros(3))
    gsam = gsam_init(k, [seed, 1]) if include_gsam else None
    return NetworkParams(config=config, stages=stages, gsam=gsam,
                         fc_weight=fc_weight, fc_bias=fc_bias)


def backbone_forward(tape: Tape, img: Node, params: NetworkParams) -> Node:
    """Run the staged feature extractor; output is (n, hw/2^s, hw/2^s, k)."""
    cfg = params.config
    n, h, w, c = img.value.shape
    if (h, w) != (cfg.input_hw, cfg.input_hw) or c != cfg.in_channels:
        raise ValueError(
            f"expected input {cfg.input_hw}x{cfg.input_hw}x{cfg.in_channels}, got {h}x{w}x{c}"
        )
    x = img
    for stage in params.stages:
        x = tape.conv3x3(x, tape.param(stage.conv_weight), tape.param(stage.conv_bias), stride=1)
        x = tape.layer_norm(x, tape.param(stage.ln_gamma), tape.param(stage.ln_beta))
        x = tape.swish(x)
        x = tape.maxpool2x2(x)
    return x


def gsnet_forward(tape: Tape, img: Node, params: NetworkParams,
                  variant: str) -> tuple[Node, dict[str, Node]]:
    """Full forward pass to raw (n, 3) logits.

    Returns the logits node and a diagnostics dict holding whichever
    attention matrices the variant computed.
    """
    validate_variant(variant)
    if variant != "baseline" and params.gsam is None:
        raise ValueError(f"variant {variant!r} requires attention parameters")
    features = backbone_forward(tape, img, params)
    diagnostics: dict[str, Node] = {}
    if variant == "baseline":
        fused = features
    elif variant == "cam_only":
        channel_out, attn = cam_forward(tape, features, params.gsam.cam)
        fused = tape.weighted_sum3(channel_out, features, features,
                                   tape.param(params.gsam.fusion.w1), 0.0,
                                   tape.param(params.gsam.fusion.w3))
        diagnostics["channel_attention"] = attn
    elif variant == "sam_only":
        spatial_out, attn = sam_forward(tape, features, params.gsam.sam)
        fused = tape.weighted_sum3(features, spatial_out, features, 0.0,
                                   tape.param(params.gsam.fusion.w2),
                                   tape.param(params.gsam.fusion.w3))
        diagnostics["spatial_attention"] = attn
    else:
        fused, (channel_attn, spatial_attn) = gsam_forward(tape, features, params.gsam)
        diagnostics["channel_attention"] = channel_attn
        diagnostics["spatial_attention"] = spatial_attn
    pooled = tape.squeeze_pooled(tape.global_avg_pool(fused))
    logits = tape.add_row_bias(tape.matmul(pooled, tape.param(params.fc_weight)),
                               tape.param(params.fc_bias))
    return logits, diagnostics


def forward_logits(img: Tensor | np.ndarray, params: NetworkParams, variant: str) -> np.ndarray:
    """Value-level forward pass on a throwaway tape."""
    data = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    tape = Tape()
    logits, _ = gsnet_forward(tape, tape.input(data), params, variant)
    return logits.value


def predict(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over the 3 logits per row; argmax with lowest-index tie-break.

    Returns (class ids (n,), probability vectors (n, 3)).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    probs = softmax_lastaxis(logits)
    return probs.argmax(axis=1), probs


# ---------------------------------------------------------------------------
# Checkpoints: a key=value manifest plus one .t4b file per parameter,
# named by parameter id path.
# ---------------------------------------------------------------------------

def _as_rank4(value: np.ndarray) -> Tensor:
    dims = value.shape
    padded = (1,) * (4 - value.ndim) + dims
    return Tensor(value.reshape(padded))


def save_checkpoint(directory, params: NetworkParams, variant: str,
                    seed: int, epoch: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = params.config
    manifest = "\n".join([
        f"variant={variant}",
        f"stage_channels={','.join(str(c) for c in cfg.stage_channels)}",
        f"input_hw={cfg.input_hw}",
        f"in_channels={cfg.in_channels}",
        f"k={cfg.feature_channels}",
        f"seed={seed}",
        f"epoch={epoch}",
    ]) + "\n"
    (directory / CHECKPOINT_MANIFEST).write_text(manifest, encoding="utf-8")
    for p in params.parameters():
        write_t4b(directory / f"{p.id}.t4b", _as_rank4(p.value))
    return directory


def load_checkpoint(directory) -> tuple[NetworkParams, dict[str, str]]:
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    meta: dict[str, str] = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    required = {"variant", "stage_channels", "input_hw", "in_channels", "seed", "epoch"}
    missing = required - meta.keys()
    if missing:
        raise ValueError(f"{manifest_path}: missing keys {sorted(missing)}")
    variant = validate_variant(meta["variant"])
    config = BackboneConfig(
        stage_channels=tuple(int(c) for c in meta["stage_channels"].split(",")),
        input_hw=int(meta["input_hw"]),
        in_channels=int(meta["in_channels"]),
    )
    params = network_init(config, include_gsam=variant != "baseline", seed=int(meta["seed"]))
    for p in params.parameters():
        path = directory / f"{p.id}.t4b"
        if not path.exists():
            raise FileNotFoundError(f"checkpoint parameter file missing: {path}")
        stored = read_t4b(path).data
        if stored.size != p.value.size:
            raise ValueError(f"{path}: expected {p.value.size} values, found {stored.size}")
        p.value[...] = stored.reshape(p.value.shape)
    return params, meta
