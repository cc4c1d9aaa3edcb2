"""Grouped residual window self-attention.

The unit replaces dense Q/K/V projections with channel-halved pairs of affine
maps plus a per-half identity shortcut (GRL), scores tokens with cosine
similarity sharpened by a trainable per-head temperature, and adds a relative
position bias produced by a tiny MLP over exponentially saturated offsets
(ES-RPB) instead of a free per-offset table. The output projection is grouped
but carries no shortcut.

Ablation arms (plain table bias, no shortcut, dense projections) share the
same forward via `VariantSpec`, so the efficiency comparisons and the
structural harness instantiate every arm from one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    concat,
    crop2d,
    l2_normalize,
    linear,
    matmul,
    mul,
    pad2d_mirror,
    relu,
    reshape,
    roll,
    sign,
    softmax,
    split2,
    sub,
    tabs,
    take_rows,
    texp,
    transpose,
)


@dataclass(frozen=True)
class WindowSpec:
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise DimensionError(f"window sides must be >= 1, got {self.h}x{self.w}")

    @property
    def tokens(self) -> int:
        return self.h * self.w

    @property
    def num_offsets(self) -> int:
        return (2 * self.h - 1) * (2 * self.w - 1)


@dataclass(frozen=True)
class VariantSpec:
    """One arm of the attention design space.

    grouped: channel-halved projections (half the weights of dense).
    residual: per-half identity shortcut on Q/K/V projections.
    cosine: unit-normalized Q/K with trainable per-head temperature; when off,
        plain dot product scaled by head_dim**-0.5.
    bias_kind: 'es_rpb' (saturating-offset MLP) or 'table' (free per-offset).
    heads_override: the dense baseline keeps the head count conventional for
        its lineage at this width (6 at 60 channels) rather than inheriting ours.
    """

    name: str
    grouped: bool = True
    residual: bool = True
    cosine: bool = True
    bias_kind: str = "es_rpb"
    heads_override: int | None = None


VARIANTS: dict[str, VariantSpec] = {
    "grsa": VariantSpec("grsa"),
    "sa-with-rpb": VariantSpec("sa-with-rpb", bias_kind="table"),
    "sa-grouped-no-residual": VariantSpec("sa-grouped-no-residual", residual=False),
    "sa-ungrouped": VariantSpec(
        "sa-ungrouped", grouped=False, residual=False, cosine=False, bias_kind="table", heads_override=6
    ),
}


def effective_heads(heads: int, variant: VariantSpec) -> int:
    return variant.heads_override or heads


# -- parameter records --------------------------------------------------------


@dataclass
class GrlParams:
    """Two half-width affine maps; each half maps C/2 -> C/2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class DenseParams:
    w: Tensor
    b: Tensor


@dataclass
class EsRpbParams:
    alpha: Tensor  # scalar rate for the x offsets
    beta: Tensor  # scalar rate for the y offsets
    mlp_w1: Tensor  # [2, c_hidden], no bias
    mlp_w2: Tensor  # [c_hidden, heads], no bias


@dataclass
class RpbTableParams:
    table: Tensor  # [num_offsets, heads], free parameters


@dataclass
class GrsaParams:
    q: GrlParams | DenseParams
    k: GrlParams | DenseParams
    v: GrlParams | DenseParams
    proj: GrlParams | DenseParams  # grouped arm: grouping WITHOUT shortcut
    log_lam: Tensor | None  # [heads]; temperature is exp(log_lam), None for non-cosine arms
    rpb: EsRpbParams | RpbTableParams
    heads: int
    variant: VariantSpec


# -- projections --------------------------------------------------------------


def grl_forward(x: Tensor, p: GrlParams, residual: bool = True) -> Tensor:
    """Channel-halved pair of affine maps, identity shortcut added per half."""
    if x.shape[-1] % 2 != 0:
        raise DimensionError(f"grouped projection needs even channels, got {x.shape[-1]}")
    x1, x2 = split2(x, -1)
    y1 = linear(x1, p.w1, p.b1)
    y2 = linear(x2, p.w2, p.b2)
    if residual:
        y1 = add(y1, x1)
        y2 = add(y2, x2)
    return concat([y1, y2], -1)


def _project(x: Tensor, p: GrlParams | DenseParams, residual: bool) -> Tensor:
    if isinstance(p, GrlParams):
        return grl_forward(x, p, residual=residual)
    return linear(x, p.w, p.b)


# -- relative position bias ---------------------------------------------------


def relative_offset_table(win: WindowSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique token-pair offsets and the [N, N] row lookup into them.

    Tokens are enumerated row-major. Offset row k encodes
    (dy, dx) = (k // (2w-1) - (h-1), k % (2w-1) - (w-1)); the center row holds
    (0, 0) and gather[i][i] lands on it for every i.
    """
    h, w = win.h, win.w
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([ys.reshape(-1), xs.reshape(-1)])  # [2, N]
    dy = coords[0][:, None] - coords[0][None, :]  # [N, N]
    dx = coords[1][:, None] - coords[1][None, :]
    gather = (dy + h - 1) * (2 * w - 1) + (dx + w - 1)
    k = np.arange(win.num_offsets)
    table_dx = k % (2 * w - 1) - (w - 1)
    table_dy = k // (2 * w - 1) - (h - 1)
    return table_dx.astype(np.int64), table_dy.astype(np.int64), gather.astype(np.int64)


def saturate_offsets(offsets: Tensor, rate: Tensor) -> Tensor:
    """sign(d) * (1 - exp(-|rate * d|)): odd, bounded in (-1, 1), steepest near 0."""
    return mul(sign(offsets), sub(1.0, texp(mul(tabs(mul(offsets, rate)), -1.0))))


def es_rpb_per_offset(win: WindowSpec, p: EsRpbParams) -> Tensor:
    """[num_offsets, heads] bias values, one row per unique (dy, dx)."""
    dx, dy, _ = relative_offset_table(win)
    fx = saturate_offsets(Tensor(dx.astype(np.float64)), p.alpha)
    fy = saturate_offsets(Tensor(dy.astype(np.float64)), p.beta)
    feats = concat([reshape(fx, (win.num_offsets, 1)), reshape(fy, (win.num_offsets, 1))], 1)
    return matmul(relu(matmul(feats, p.mlp_w1)), p.mlp_w2)


def es_rpb_bias(win: WindowSpec, p: EsRpbParams) -> Tensor:
    """Per-head [heads, N, N] bias from the saturating-offset MLP."""
    _, _, gather = relative_offset_table(win)
    return transpose(take_rows(es_rpb_per_offset(win, p), gather), (2, 0, 1))


def rpb_table_bias(win: WindowSpec, p: RpbTableParams) -> Tensor:
    """Free per-offset table gathered to [heads, N, N]."""
    _, _, gather = relative_offset_table(win)
    if p.table.shape[0] != win.num_offsets:
        raise DimensionError(f"bias table has {p.table.shape[0]} rows, window needs {win.num_offsets}")
    return transpose(take_rows(p.table, gather), (2, 0, 1))


def attention_bias(win: WindowSpec, p: GrsaParams) -> Tensor:
    if isinstance(p.rpb, EsRpbParams):
        return es_rpb_bias(win, p.rpb)
    return rpb_table_bias(win, p.rpb)


# -- attention ----------------------------------------------------------------


def grsa_forward(x: Tensor, p: GrsaParams, bias: Tensor) -> Tensor:
    """Window attention over x: [N, C] or [num_windows, N, C].

    Cosine arms score with exp(log_lam)-sharpened normalized Q/K; bias is added
    to the logits before softmax; heads run independently and re-concatenate
    before the output projection.
    """
    squeeze = x.data.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.data.ndim != 3:
        raise DimensionError(f"expected [windows, N, C], got {x.shape}")
    nw, n, c = x.shape
    heads = p.heads
    if c % heads != 0:
        raise DimensionError(f"channels {c} not divisible by {heads} heads")
    hd = c // heads

    q = _project(x, p.q, p.variant.residual)
    k = _project(x, p.k, p.variant.residual)
    v = _project(x, p.v, p.variant.residual)

    def to_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (nw, n, heads, hd)), (0, 2, 1, 3))  # [nW, heads, N, hd]

    qh, kh, vh = to_heads(q), to_heads(k), to_heads(v)
    if p.variant.cosine:
        qh = l2_normalize(qh, -1)
        kh = l2_normalize(kh, -1)
        lam = reshape(texp(p.log_lam), (heads, 1, 1))
        logits = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), lam)
    else:
        logits = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), hd ** -0.5)
    attn = softmax(add(logits, bias), -1)
    out = transpose(matmul(attn, vh), (0, 2, 1, 3))  # [nW, N, heads, hd]
    out = reshape(out, (nw, n, c))
    out = _project(out, p.proj, residual=False)
    return reshape(out, (n, c)) if squeeze else out


# -- windowing ----------------------------------------------------------------


def window_partition(x: Tensor, win: WindowSpec, shift: tuple[int, int] = (0, 0)) -> Tensor:
    """[C, H, W] -> [num_windows, N, C]; mirror-pads to window multiples, then
    cyclically rolls by -shift before tiling."""
    c, h, w = x.shape
    hp = -(-h // win.h) * win.h
    wp = -(-w // win.w) * win.w
    if (hp, wp) != (h, w):
        x = pad2d_mirror(x, hp, wp)
    if shift != (0, 0):
        x = roll(x, (-shift[0], -shift[1]), (1, 2))
    nh, nw = hp // win.h, wp // win.w
    x = reshape(x, (c, nh, win.h, nw, win.w))
    x = transpose(x, (1, 3, 2, 4, 0))  # [nh, nw, wh, ww, C]
    return reshape(x, (nh * nw, win.tokens, c))


def window_reverse(windows: Tensor, win: WindowSpec, height: int, width: int, shift: tuple[int, int] = (0, 0)) -> Tensor:
    """Inverse of window_partition for the same (win, shift, height, width)."""
    hp = -(-height // win.h) * win.h
    wp = -(-width // win.w) * win.w
    nh, nw = hp // win.h, wp // win.w
    c = windows.shape[-1]
    x = reshape(windows, (nh, nw, win.h, win.w, c))
    x = transpose(x, (4, 0, 2, 1, 3))  # [C, nh, wh, nw, ww]
    x = reshape(x, (c, hp, wp))
    if shift != (0, 0):
        x = roll(x, (shift[0], shift[1]), (1, 2))
    if (hp, wp) != (height, width):
        x = crop2d(x, height, width)
    return x
