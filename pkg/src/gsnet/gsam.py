"""Global self-attention module: channel attention (CAM), spatial attention
(SAM), and a learnable three-way fusion.

Both attention paths consume a feature map (n, h, w, k) and return a
same-shaped map.  CAM attends across channels via a k-by-k attention matrix
built from globally pooled query/key branches; SAM attends across the h*w
spatial positions with half-width (k/2) projections.  The fused output is
w1 * cam_out + w2 * sam_out + w3 * input, so the module starts as an exact
identity with the default weights (0, 0, 1) and the attention pathways grow
during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Parameter, Tape
from .tensor import Tensor


@dataclass
class ConvBlockParams:
    """One 1x1 conv block: channel mix -> layer norm -> swish."""

    weight: Parameter    # (k_in, k_out)
    bias: Parameter      # (k_out,)
    ln_gamma: Parameter  # (k_out,)
    ln_beta: Parameter   # (k_out,)

    @property
    def k_in(self) -> int:
        return self.weight.value.shape[0]

    @property
    def k_out(self) -> int:
        return self.weight.value.shape[1]

    def parameters(self):
        return [self.weight, self.bias, self.ln_gamma, self.ln_beta]


@dataclass
class CamParams:
    """Channel attention: three k -> k conv blocks (query, key, value)."""

    q_block: ConvBlockParams
    k_block: ConvBlockParams
    v_block: ConvBlockParams

    @property
    def k(self) -> int:
        return self.q_block.k_in

    def parameters(self):
        return self.q_block.parameters() + self.k_block.parameters() + self.v_block.parameters()


@dataclass
class SamParams:
    """Spatial attention: k -> k/2 projections plus a k/2 -> k output block."""

    q_block: ConvBlockParams
    k_block: ConvBlockParams
    v_block: ConvBlockParams
    out_block: ConvBlockParams

    @property
    def k(self) -> int:
        return self.q_block.k_in

    def parameters(self):
        return (self.q_block.parameters() + self.k_block.parameters()
                + self.v_block.parameters() + self.out_block.parameters())


@dataclass
class FusionWeights:
    w1: Parameter
    w2: Parameter
    w3: Parameter

    def parameters(self):
        return [self.w1, self.w2, self.w3]


@dataclass
class GsamParams:
    cam: CamParams
    sam: SamParams
    fusion: FusionWeights

    @property
    def k(self) -> int:
        return self.cam.k

    def parameters(self):
        return self.cam.parameters() + self.sam.parameters() + self.fusion.parameters()


def _init_conv_block(prefix: str, k_in: int, k_out: int, rng) -> ConvBlockParams:
    limit = math.sqrt(6.0 / (k_in + k_out))
    return ConvBlockParams(
        weight=Parameter(f"{prefix}.weight", rng.uniform(-limit, limit, (k_in, k_out))),
        bias=Parameter(f"{prefix}.bias", np.zeros(k_out)),
        ln_gamma=Parameter(f"{prefix}.ln_gamma", np.ones(k_out)),
        ln_beta=Parameter(f"{prefix}.ln_beta", np.zeros(k_out)),
    )


def gsam_init(k: int, rng_seed, prefix: str = "gsam") -> GsamParams:
    """Seeded initialization: Xavier-uniform conv weights, zero biases, unit
    layer-norm gamma, and fusion weights (0, 0, 1) so the module starts as
    the identity."""
    if k < 2 or k % 2:
        raise ValueError(f"channel count must be even and >= 2, got {k}")
    half = k // 2
    rng = np.random.default_rng(rng_seed)
    cam = CamParams(
        q_block=_init_conv_block(f"{prefix}.cam.q", k, k, rng),
        k_block=_init_conv_block(f"{prefix}.cam.k", k, k, rng),
        v_block=_init_conv_block(f"{prefix}.cam.v", k, k, rng),
    )
    sam = SamParams(
        q_block=_init_conv_block(f"{prefix}.sam.q", k, half, rng),
        k_block=_init_conv_block(f"{prefix}.sam.k", k, half, rng),
        v_block=_init_conv_block(f"{prefix}.sam.v", k, half, rng),
        out_block=_init_conv_block(f"{prefix}.sam.out", half, k, rng),
    )
    fusion = FusionWeights(
        w1=Parameter(f"{prefix}.fusion.w1", 0.0),
        w2=Parameter(f"{prefix}.fusion.w2", 0.0),
        w3=Parameter(f"{prefix}.fusion.w3", 1.0),
    )
    return GsamParams(cam=cam, sam=sam, fusion=fusion)


def conv_block(tape: Tape, x: Node, p: ConvBlockParams, eps: float = 1e-5) -> Node:
    """conv1x1 -> layer norm -> swish, in that order."""
    y = tape.conv1x1(x, tape.param(p.weight), tape.param(p.bias))
    y = tape.layer_norm(y, tape.param(p.ln_gamma), tape.param(p.ln_beta), eps)
    return tape.swish(y)


def cam_forward(tape: Tape, x: Node, p: CamParams) -> tuple[Node, Node]:
    """Channel attention over a (n, h, w, k) map.

    Query: global max pool -> conv block, a (n, 1, k) row per item.
    Key:   global avg pool -> conv block, transposed to (n, k, 1).
    The attention matrix softmax(key @ query) is (n, k, k), row-stochastic;
    it right-multiplies the flattened value branch, and the result is
    elementwise-multiplied with the input.  Returns (output, attention).
    """
    n, h, w, k = x.value.shape
    if k != p.k:
        raise ValueError(f"channel attention expects {p.k} channels, got {k}")
    query = tape.flatten_spatial(conv_block(tape, tape.global_max_pool(x), p.q_block))
    key = tape.bmat_transpose(
        tape.flatten_spatial(conv_block(tape, tape.global_avg_pool(x), p.k_block))
    )
    attn = tape.softmax_rows(tape.bmatmul(key, query))
    values = tape.flatten_spatial(conv_block(tape, x, p.v_block))
    mixed = tape.unflatten_spatial(tape.bmatmul(values, attn), h, w)
    return tape.elementwise_mul(mixed, x), attn


def sam_forward(tape: Tape, x: Node, p: SamParams) -> tuple[Node, Node]:
    """Spatial attention over a (n, h, w, k) map.

    Query/key/value are k -> k/2 conv blocks flattened to (n, h*w, k/2);
    softmax(query @ key^T) is the (n, h*w, h*w) row-stochastic attention.
    The attended values pass through the k/2 -> k output block, then
    multiply the input elementwise.  Returns (output, attention).
    """
    n, h, w, k = x.value.shape
    if k % 2:
        raise ValueError(f"spatial attention requires an even channel count, got {k}")
    if k != p.k:
        raise ValueError(f"spatial attention expects {p.k} channels, got {k}")
    query = tape.flatten_spatial(conv_block(tape, x, p.q_block))
    key = tape.bmat_transpose(tape.flatten_spatial(conv_block(tape, x, p.k_block)))
    attn = tape.softmax_rows(tape.bmatmul(query, key))
    values = tape.flatten_spatial(conv_block(tape, x, p.v_block))
    mixed = tape.unflatten_spatial(tape.bmatmul(attn, values), h, w)
    projected = conv_block(tape, mixed, p.out_block)
    return tape.elementwise_mul(projected, x), attn


def gsam_forward(tape: Tape, x: Node, p: GsamParams) -> tuple[Node, tuple[Node, Node]]:
    """Full module: w1 * cam(x) + w2 * sam(x) + w3 * x.

    Returns the fused map plus both attention matrices for inspection.
    """
    channel_out, channel_attn = cam_forward(tape, x, p.cam)
    spatial_out, spatial_attn = sam_forward(tape, x, p.sam)
    fused = tape.weighted_sum3(
        channel_out, spatial_out, x,
        tape.param(p.fusion.w1), tape.param(p.fusion.w2), tape.param(p.fusion.w3),
    )
    return fused, (channel_attn, spatial_attn)


# -- value-level conveniences (build a throwaway tape) -------------------------

def run_cam(f_i: Tensor, p: CamParams) -> tuple[Tensor, np.ndarray]:
    tape = Tape()
    out, attn = cam_forward(tape, tape.input(f_i.data), p)
    return Tensor(out.value), attn.value.copy()


def run_sam(f_i: Tensor, p: SamParams) -> tuple[Tensor, np.ndarray]:
    tape = Tape()
    out, attn = sam_forward(tape, tape.input(f_i.data), p)
    return Tensor(out.value), attn.value.copy()


def run_gsam(f_i: Tensor, p: GsamParams) -> tuple[Tensor, np.ndarray, np.ndarray]:
    tape = Tape()
    out, (channel_attn, spatial_attn) = gsam_forward(tape, tape.input(f_i.data), p)
    return Tensor(out.value), channel_attn.value.copy(), spatial_attn.value.copy()


def attention_as_tensor(attn: np.ndarray) -> Tensor:
    """Pack a (n, rows, cols) attention stack as a [n, 1, rows, cols] tensor
    for .t4b export and offline inspection."""
    n, rows, cols = attn.shape
    return Tensor(attn.reshape(n, 1, rows, cols))
