"""Full model assembly: shallow conv, block groups, reconstruction.

Data flow: a 3x3 conv lifts the RGB input to C channels; N groups of M
attention blocks (plus a group-end conv with a shortcut over the chain output)
refine it; a body conv re-adds the shallow features; and a conv to
c_out*scale^2 channels followed by pixel shuffle produces the upscaled image.
Blocks alternate between aligned and cyclically shifted windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, is_dataclass
from typing import Iterator

import numpy as np

from .attention import (
    VARIANTS,
    DenseParams,
    EsRpbParams,
    GrlParams,
    GrsaParams,
    RpbTableParams,
    VariantSpec,
    WindowSpec,
    attention_bias,
    effective_heads,
    grsa_forward,
    window_partition,
    window_reverse,
)
from .config import ModelConfig
from .rng import Rng
from .tensor import (
    DimensionError,
    Tensor,
    add,
    conv2d_3x3,
    gelu,
    layer_norm,
    linear,
    reshape,
    transpose,
)

LOG_LAMBDA_MAX = math.log(100.0)
INIT_STD = 0.02


@dataclass
class ConvParams:
    w: Tensor
    b: Tensor


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class GrsabParams:
    grsa: GrsaParams
    norm1: NormParams
    ffn1: DenseParams
    ffn2: DenseParams
    norm2: NormParams


@dataclass
class GroupParams:
    blocks: list[GrsabParams]
    conv: ConvParams


@dataclass
class GrformerParams:
    conv_shallow: ConvParams
    groups: list[GroupParams]
    conv_body: ConvParams
    conv_pre_up: ConvParams
    variant: str = "grsa"


# -- parameter traversal ------------------------------------------------------


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk a parameter record depth-first in declared field order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj) and not isinstance(obj, (WindowSpec, VariantSpec)):
        for f in fields(obj):
            child = getattr(obj, f.name)
            if child is None or isinstance(child, (int, str, VariantSpec)):
                continue
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(child, sub)
    elif isinstance(obj, list):
        for i, child in enumerate(obj):
            yield from named_tensors(child, f"{prefix}.{i}" if prefix else str(i))


def count_tensor_entries(params) -> int:
    return sum(t.size for _, t in named_tensors(params))


def zero_grads(params) -> None:
    for _, t in named_tensors(params):
        t.grad = None


# -- initialization -----------------------------------------------------------


def _weight(rng: Rng, name: str, shape: tuple[int, ...]) -> Tensor:
    return Tensor(rng.split(name).truncated_normal(shape, std=INIT_STD), requires_grad=True)


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape: tuple[int, ...], scale: float = 1.0) -> Tensor:
    return Tensor(np.full(shape, scale), requires_grad=True)


def init_conv(rng: Rng, name: str, cin: int, cout: int) -> ConvParams:
    return ConvParams(w=_weight(rng, f"{name}.w", (cout, cin, 3, 3)), b=_zeros((cout,)))


def init_dense(rng: Rng, name: str, cin: int, cout: int) -> DenseParams:
    return DenseParams(w=_weight(rng, f"{name}.w", (cin, cout)), b=_zeros((cout,)))


def init_grl(rng: Rng, name: str, c: int) -> GrlParams:
    half = c // 2
    return GrlParams(
        w1=_weight(rng, f"{name}.w1", (half, half)),
        b1=_zeros((half,)),
        w2=_weight(rng, f"{name}.w2", (half, half)),
        b2=_zeros((half,)),
    )


def init_es_rpb(rng: Rng, name: str, c_hidden: int, heads: int) -> EsRpbParams:
    return EsRpbParams(
        alpha=_ones(()),
        beta=_ones(()),
        mlp_w1=_weight(rng, f"{name}.mlp_w1", (2, c_hidden)),
        mlp_w2=_weight(rng, f"{name}.mlp_w2", (c_hidden, heads)),
    )


def init_rpb_table(rng: Rng, name: str, win: WindowSpec, heads: int) -> RpbTableParams:
    return RpbTableParams(table=_weight(rng, f"{name}.table", (win.num_offsets, heads)))


def init_grsa(
    rng: Rng, name: str, c: int, heads: int, win: WindowSpec, c_hidden: int, variant: VariantSpec
) -> GrsaParams:
    heads = effective_heads(heads, variant)

    def proj(pname: str):
        if variant.grouped:
            return init_grl(rng, f"{name}.{pname}", c)
        return init_dense(rng, f"{name}.{pname}", c, c)

    if variant.bias_kind == "es_rpb":
        rpb = init_es_rpb(rng, f"{name}.rpb", c_hidden, heads)
    else:
        rpb = init_rpb_table(rng, f"{name}.rpb", win, heads)
    log_lam = _ones((heads,), scale=math.log(10.0)) if variant.cosine else None
    return GrsaParams(
        q=proj("q"), k=proj("k"), v=proj("v"), proj=proj("proj"),
        log_lam=log_lam, rpb=rpb, heads=heads, variant=variant,
    )


def init_grsab(rng: Rng, name: str, cfg: ModelConfig, variant: VariantSpec) -> GrsabParams:
    c, f = cfg.channels, cfg.ffn_width
    return GrsabParams(
        grsa=init_grsa(rng, f"{name}.grsa", c, cfg.heads, cfg.window, cfg.c_hidden_rpb, variant),
        norm1=NormParams(gamma=_ones((c,)), beta=_zeros((c,))),
        ffn1=init_dense(rng, f"{name}.ffn1", c, f),
        ffn2=init_dense(rng, f"{name}.ffn2", f, c),
        norm2=NormParams(gamma=_ones((c,)), beta=_zeros((c,))),
    )


def init_parameters(cfg: ModelConfig, rng: Rng, variant: str = "grsa") -> GrformerParams:
    """Fresh parameters; per-name child streams make the draw order immaterial."""
    spec = VARIANTS[variant]
    c = cfg.channels
    groups = []
    for gi in range(cfg.groups):
        blocks = [
            init_grsab(rng, f"groups.{gi}.blocks.{bi}", cfg, spec) for bi in range(cfg.blocks_per_group)
        ]
        groups.append(GroupParams(blocks=blocks, conv=init_conv(rng, f"groups.{gi}.conv", c, c)))
    return GrformerParams(
        conv_shallow=init_conv(rng, "conv_shallow", cfg.c_in, c),
        groups=groups,
        conv_body=init_conv(rng, "conv_body", c, c),
        conv_pre_up=init_conv(rng, "conv_pre_up", c, cfg.c_out * cfg.scale * cfg.scale),
        variant=variant,
    )


# -- forward ------------------------------------------------------------------


def _to_tokens(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return transpose(reshape(x, (c, h * w)), (1, 0))


def _to_map(tokens: Tensor, h: int, w: int) -> Tensor:
    c = tokens.shape[-1]
    return reshape(transpose(tokens, (1, 0)), (c, h, w))


def block_shift(cfg: ModelConfig, block_index: int) -> tuple[int, int]:
    if cfg.shift_windows and block_index % 2 == 1:
        return (cfg.window.h // 2, cfg.window.w // 2)
    return (0, 0)


def grsab_forward(x: Tensor, p: GrsabParams, cfg: ModelConfig, block_index: int) -> Tensor:
    """One block: window attention and FFN, each post-normalized then shortcut."""
    c, h, w = x.shape
    shift = block_shift(cfg, block_index)
    wins = window_partition(x, cfg.window, shift)
    attn = grsa_forward(wins, p.grsa, attention_bias(cfg.window, p.grsa))
    attn_map = window_reverse(attn, cfg.window, h, w, shift)

    tokens = _to_tokens(x)
    x1 = add(layer_norm(_to_tokens(attn_map), p.norm1.gamma, p.norm1.beta), tokens)
    ffn_out = linear(gelu(linear(x1, p.ffn1.w, p.ffn1.b)), p.ffn2.w, p.ffn2.b)
    x2 = add(layer_norm(ffn_out, p.norm2.gamma, p.norm2.beta), x1)
    return _to_map(x2, h, w)


def grsab_group_forward(x: Tensor, gp: GroupParams, cfg: ModelConfig) -> Tensor:
    """M chained blocks, then a 3x3 conv with a shortcut over the chain output."""
    out = x
    for i, block in enumerate(gp.blocks):
        out = grsab_forward(out, block, cfg, i)
    return add(conv2d_3x3(out, gp.conv.w, gp.conv.b), out)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """[c*r^2, H, W] -> [c, r*H, r*W]; channel block i*r^2.. fills an r x r tile."""
    cr2, h, w = x.shape
    if cr2 % (r * r) != 0:
        raise DimensionError(f"pixel_shuffle: {cr2} channels not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    x = reshape(x, (c, r, r, h, w))
    x = transpose(x, (0, 3, 1, 4, 2))  # [c, H, r, W, r]
    return reshape(x, (c, h * r, w * r))


def grformer_forward(img: Tensor, p: GrformerParams, cfg: ModelConfig) -> Tensor:
    """[c_in, H, W] -> [c_out, r*H, r*W]."""
    x0 = conv2d_3x3(img, p.conv_shallow.w, p.conv_shallow.b)
    x = x0
    for gp in p.groups:
        x = grsab_group_forward(x, gp, cfg)
    deep = add(conv2d_3x3(x, p.conv_body.w, p.conv_body.b), x0)
    pre = conv2d_3x3(add(deep, x0), p.conv_pre_up.w, p.conv_pre_up.b)
    return pixel_shuffle(pre, cfg.scale)
