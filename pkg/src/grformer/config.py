"""Architecture hyperparameters and their flat `key = value` file format.

The format is line-oriented and diffable: one decision per line, `#` comments,
booleans as true/false, the FFN ratio as an exact fraction. parse/serialize
round-trip to a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

from .attention import WindowSpec


class ConfigError(ValueError):
    """Malformed config text; message carries line number and field."""


@dataclass(frozen=True)
class ModelConfig:
    groups: int = 4
    blocks_per_group: int = 6
    channels: int = 60
    heads: int = 3
    window: WindowSpec = WindowSpec(8, 32)
    scale: int = 4
    ffn_ratio: Fraction = Fraction(7, 3)
    c_in: int = 3
    c_out: int = 3
    shift_windows: bool = True
    c_hidden_rpb: int = 128

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise ConfigError(f"channels must be even, got {self.channels}")
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        for name in ("groups", "blocks_per_group", "heads", "c_in", "c_out", "c_hidden_rpb"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def ffn_width(self) -> int:
        return int(round(self.ffn_ratio * self.channels))

    def with_scale(self, scale: int) -> "ModelConfig":
        return replace(self, scale=scale)


_FIELDS = (
    "groups",
    "blocks_per_group",
    "channels",
    "heads",
    "window_h",
    "window_w",
    "scale",
    "ffn_ratio",
    "c_in",
    "c_out",
    "shift_windows",
    "c_hidden_rpb",
)


def serialize_config(cfg: ModelConfig) -> str:
    ratio = cfg.ffn_ratio
    ratio_s = str(ratio.numerator) if ratio.denominator == 1 else f"{ratio.numerator}/{ratio.denominator}"
    values = {
        "groups": cfg.groups,
        "blocks_per_group": cfg.blocks_per_group,
        "channels": cfg.channels,
        "heads": cfg.heads,
        "window_h": cfg.window.h,
        "window_w": cfg.window.w,
        "scale": cfg.scale,
        "ffn_ratio": ratio_s,
        "c_in": cfg.c_in,
        "c_out": cfg.c_out,
        "shift_windows": "true" if cfg.shift_windows else "false",
        "c_hidden_rpb": cfg.c_hidden_rpb,
    }
    return "".join(f"{k} = {values[k]}\n" for k in _FIELDS)


def parse_config(text: str) -> ModelConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate field {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        raw[key] = value

    def get_int(key: str, default: int) -> int:
        if key not in raw:
            return default
        try:
            return int(raw[key])
        except ValueError:
            raise ConfigError(f"field {key!r}: not an integer: {raw[key]!r}") from None

    def get_bool(key: str, default: bool) -> bool:
        if key not in raw:
            return default
        if raw[key] not in ("true", "false"):
            raise ConfigError(f"field {key!r}: expected true/false, got {raw[key]!r}")
        return raw[key] == "true"

    if "ffn_ratio" in raw:
        try:
            ratio = Fraction(raw["ffn_ratio"])
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"field 'ffn_ratio': not a fraction: {raw['ffn_ratio']!r}") from None
    else:
        ratio = Fraction(7, 3)

    base = ModelConfig()
    try:
        return ModelConfig(
            groups=get_int("groups", base.groups),
            blocks_per_group=get_int("blocks_per_group", base.blocks_per_group),
            channels=get_int("channels", base.channels),
            heads=get_int("heads", base.heads),
            window=WindowSpec(get_int("window_h", base.window.h), get_int("window_w", base.window.w)),
            scale=get_int("scale", base.scale),
            ffn_ratio=ratio,
            c_in=get_int("c_in", base.c_in),
            c_out=get_int("c_out", base.c_out),
            shift_windows=get_bool("shift_windows", base.shift_windows),
            c_hidden_rpb=get_int("c_hidden_rpb", base.c_hidden_rpb),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: ModelConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
