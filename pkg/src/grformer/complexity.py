"""Closed-form parameter and multiply-accumulate accounting.

Counts are exact against the instantiated network (same formulas the init
code follows), broken down by submodule family so the attention-only subset
can be compared across ablation arms.

Conventions, pinned here because every downstream figure depends on them:
 - a linear over T tokens costs T * (in * out) MACs; grouping halves that;
 - a 3x3 conv costs H * W * Cin * Cout * 9 at the un-padded input size;
 - attention rows (projections, score/value matmuls) are counted at the
   window-padded token count, since that is what the kernels actually see;
 - the score/value matmul row is windows * N^2 * head_dim;
 - the saturating-bias MLP runs once per unique offset, not per token pair,
   so its MAC term is flat in resolution;
 - bias adds, softmax, and normalizations are not multiply-accumulates and
   count zero MACs (their parameters are still counted).
"""

from __future__ import annotations

from dataclasses import dataclass

from .attention import VARIANTS, VariantSpec, WindowSpec, effective_heads
from .config import ModelConfig

SA_ROWS = ("attn_qkv", "attn_proj", "attn_bias")


@dataclass(frozen=True)
class ComplexityRow:
    name: str
    params: int
    macs: int


@dataclass(frozen=True)
class ComplexityReport:
    rows: tuple[ComplexityRow, ...]
    variant: str
    out_res: tuple[int, int] | None  # upscaled (width, height); None for a params-only report

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def sa_params(self) -> int:
        return sum(r.params for r in self.rows if r.name in SA_ROWS)

    @property
    def sa_macs(self) -> int:
        return sum(r.macs for r in self.rows if r.name in SA_ROWS)

    def table(self) -> str:
        with_macs = self.out_res is not None
        header = ["submodule", "params"] + (["macs"] if with_macs else [])
        body = [[r.name, f"{r.params:,}"] + ([f"{r.macs:,}"] if with_macs else []) for r in self.rows]
        body.append(["total", f"{self.total_params:,}"] + ([f"{self.total_macs:,}"] if with_macs else []))
        body.append(["sa_only", f"{self.sa_params:,}"] + ([f"{self.sa_macs:,}"] if with_macs else []))
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        lines = []
        title = f"variant={self.variant}"
        if with_macs:
            title += f" output={self.out_res[0]}x{self.out_res[1]}"
        lines.append(title)
        lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        for row in body:
            padded = [row[0].ljust(widths[0])] + [row[i].rjust(widths[i]) for i in range(1, len(row))]
            lines.append("  ".join(padded).rstrip())
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        lines = ["name,params,macs"]
        for r in self.rows:
            lines.append(f"{r.name},{r.params},{r.macs}")
        lines.append(f"total,{self.total_params},{self.total_macs}")
        lines.append(f"sa_only,{self.sa_params},{self.sa_macs}")
        return "\n".join(lines) + "\n"


def es_rpb_mlp_param_count(c_hidden: int = 128, heads: int = 1) -> int:
    """Weights of the 2 -> hidden -> heads bias MLP (no bias terms)."""
    return 2 * c_hidden + c_hidden * heads


def rpb_table_param_count(win: WindowSpec) -> int:
    """One free scalar per unique offset per head; this is the per-head figure."""
    return win.num_offsets


def _resolve_variant(variant: str | VariantSpec) -> VariantSpec:
    if isinstance(variant, VariantSpec):
        return variant
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}, have {sorted(VARIANTS)}") from None


def token_counts(cfg: ModelConfig, out_res: tuple[int, int]) -> tuple[int, int]:
    """(unpadded, window-padded) token counts at the input scale.

    out_res is the upscaled (width, height); input size is the integer
    division by the scale factor, then rounded up to window multiples for
    the attention rows.
    """
    out_w, out_h = out_res
    in_w, in_h = out_w // cfg.scale, out_h // cfg.scale
    win = cfg.window
    pad_h = -(-in_h // win.h) * win.h
    pad_w = -(-in_w // win.w) * win.w
    return in_h * in_w, pad_h * pad_w


def _rows(cfg: ModelConfig, out_res: tuple[int, int] | None, variant: VariantSpec) -> tuple[ComplexityRow, ...]:
    c = cfg.channels
    half = c // 2
    heads = effective_heads(cfg.heads, variant)
    win = cfg.window
    modules = cfg.groups * cfg.blocks_per_group
    f = cfg.ffn_width
    r2 = cfg.scale * cfg.scale

    if variant.grouped:
        qkv_w = 3 * 2 * half * half
        proj_w = 2 * half * half
    else:
        qkv_w = 3 * c * c
        proj_w = c * c

    if variant.bias_kind == "es_rpb":
        bias_params = es_rpb_mlp_param_count(cfg.c_hidden_rpb, heads) + 2  # + the two rate scalars
        bias_macs_flat = win.num_offsets * es_rpb_mlp_param_count(cfg.c_hidden_rpb, heads)
    else:
        bias_params = rpb_table_param_count(win) * heads
        bias_macs_flat = 0  # table lookup, no multiplies
    if variant.cosine:
        bias_params += heads  # per-head temperature

    if out_res is None:
        t = t_pad = 0
    else:
        t, t_pad = token_counts(cfg, out_res)

    head_dim = c // heads
    return (
        ComplexityRow("conv_shallow", 9 * cfg.c_in * c + c, t * 9 * cfg.c_in * c),
        ComplexityRow("attn_qkv", modules * (qkv_w + 3 * c), modules * t_pad * qkv_w),
        ComplexityRow("attn_proj", modules * (proj_w + c), modules * t_pad * proj_w),
        ComplexityRow("attn_bias", modules * bias_params, modules * bias_macs_flat),
        ComplexityRow("attn_matmul", 0, modules * t_pad * win.tokens * head_dim),
        ComplexityRow("ffn", modules * (2 * c * f + f + c), modules * t * 2 * c * f),
        ComplexityRow("norms", modules * 4 * c, 0),
        ComplexityRow("group_convs", cfg.groups * (9 * c * c + c), cfg.groups * t * 9 * c * c),
        ComplexityRow("conv_body", 9 * c * c + c, t * 9 * c * c),
        ComplexityRow("conv_pre_up", 9 * c * cfg.c_out * r2 + cfg.c_out * r2, t * 9 * c * cfg.c_out * r2),
    )


def count_params(cfg: ModelConfig, variant: str | VariantSpec = "grsa") -> ComplexityReport:
    v = _resolve_variant(variant)
    return ComplexityReport(rows=_rows(cfg, None, v), variant=v.name, out_res=None)


def count_macs(
    cfg: ModelConfig,
    out_res: tuple[int, int] = (1280, 720),
    variant: str | VariantSpec = "grsa",
) -> ComplexityReport:
    v = _resolve_variant(variant)
    return ComplexityReport(rows=_rows(cfg, out_res, v), variant=v.name, out_res=tuple(out_res))


def reduction_summary(
    cfg: ModelConfig,
    out_res: tuple[int, int] = (1280, 720),
    variant: str | VariantSpec = "grsa",
    baseline: str | VariantSpec = "sa-ungrouped",
) -> tuple[float, float]:
    """(param, mac) reduction of the attention-only subset, as 1 - ours/baseline."""
    ours = count_macs(cfg, out_res, variant)
    other = count_macs(cfg, out_res, baseline)
    return (1.0 - ours.sa_params / other.sa_params, 1.0 - ours.sa_macs / other.sa_macs)
