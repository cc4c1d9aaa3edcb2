"""L1/Adam training loop at desk scale.

The loop overfits one HR image: the LR input is produced by bicubic
downscaling, each iteration optionally applies one of the eight dihedral
augmentations to the (HR, LR) pair, and the learning rate halves at the
configured milestones. Everything is seed-deterministic in a fixed precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import ModelConfig
from .network import (
    LOG_LAMBDA_MAX,
    GrformerParams,
    grformer_forward,
    init_parameters,
    named_tensors,
    zero_grads,
)
from .imaging import PlaneF, bicubic_resize, resize_rgb
from .rng import Rng
from .tensor import DimensionError, Tensor, backward, sub, tabs, tmean


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    iters: int = 500
    # Halving points, proportional to the reference schedule's shape.
    milestones: tuple[int, ...] = (208, 333, 425, 450)
    patch: int = 64
    batch: int = 1
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError(f"milestones must ascend, got {self.milestones}")
        if self.iters < 0 or self.batch < 1:
            raise ValueError("iters must be >= 0 and batch >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def init_adam(params) -> AdamState:
    state = AdamState()
    for name, t in named_tensors(params):
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def lr_at(tcfg: TrainConfig, iteration: int) -> float:
    halvings = sum(1 for m in tcfg.milestones if m <= iteration)
    return tcfg.lr * (0.5 ** halvings)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; ties contribute zero slope."""
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return tmean(tabs(sub(pred, target)))


def adam_step(params, state: AdamState, tcfg: TrainConfig, iteration: int) -> None:
    """Bias-corrected Adam over all gradients; temperature params re-clamped."""
    state.step += 1
    t = state.step
    lr = lr_at(tcfg, iteration)
    c1 = 1.0 - tcfg.beta1 ** t
    c2 = 1.0 - tcfg.beta2 ** t
    for name, p in named_tensors(params):
        if p.grad is None:
            continue
        g = p.grad.astype(np.float64, copy=False)
        m = state.m[name] = tcfg.beta1 * state.m[name] + (1.0 - tcfg.beta1) * g
        v = state.v[name] = tcfg.beta2 * state.v[name] + (1.0 - tcfg.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + tcfg.eps)
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)
        if name.endswith("log_lam"):
            np.minimum(p.data, LOG_LAMBDA_MAX, out=p.data)


# -- augmentation -------------------------------------------------------------


def dihedral_apply(img: np.ndarray, op: int) -> np.ndarray:
    """op in [0, 8): bit 2 flips horizontally, low bits rotate by 90 deg steps.

    img is [C, H, W]; the same op applied to an aligned (HR, LR) pair keeps
    them aligned because both transforms act on the spatial axes alike.
    """
    if not 0 <= op < 8:
        raise ValueError(f"dihedral op must be in [0, 8), got {op}")
    out = img
    if op & 4:
        out = out[:, :, ::-1]
    k = op & 3
    if k:
        out = np.rot90(out, k, axes=(1, 2))
    return np.ascontiguousarray(out)


def augment(hr_patch: np.ndarray, lr_patch: np.ndarray, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """One random rotation (0/90/180/270) plus optional horizontal flip."""
    op = int(rng.integers(8))
    return dihedral_apply(hr_patch, op), dihedral_apply(lr_patch, op)


# -- toy loop -----------------------------------------------------------------


@dataclass
class TrainToyResult:
    params: GrformerParams
    losses: list[float]
    lr_rgb: np.ndarray  # the degraded input actually trained on, [3, h, w]


def degrade(hr_rgb: np.ndarray, scale: int) -> np.ndarray:
    return resize_rgb(hr_rgb, Fraction(1, scale))


def train_toy(
    cfg: ModelConfig,
    tcfg: TrainConfig,
    hr_rgb: np.ndarray,
    variant: str = "grsa",
    params: GrformerParams | None = None,
) -> TrainToyResult:
    """Overfit one [3, H, W] image in [0, 1]; returns per-iteration losses."""
    hr_rgb = np.asarray(hr_rgb, dtype=np.float64)
    if hr_rgb.ndim != 3 or hr_rgb.shape[0] != cfg.c_in:
        raise DimensionError(f"expected [{cfg.c_in}, H, W] image, got {hr_rgb.shape}")
    if hr_rgb.shape[1] % cfg.scale or hr_rgb.shape[2] % cfg.scale:
        raise DimensionError(f"image sides {hr_rgb.shape[1:]} must divide by scale {cfg.scale}")
    lr_rgb = degrade(hr_rgb, cfg.scale)
    if params is None:
        params = init_parameters(cfg, Rng(tcfg.seed).split("init"), variant=variant)
    state = init_adam(params)
    aug_rng = Rng(tcfg.seed).split("augment")
    losses: list[float] = []
    for it in range(tcfg.iters):
        zero_grads(params)
        total = 0.0
        for _ in range(tcfg.batch):
            hr_t, lr_t = (augment(hr_rgb, lr_rgb, aug_rng) if tcfg.augment else (hr_rgb, lr_rgb))
            pred = grformer_forward(Tensor(lr_t), params, cfg)
            loss = l1_loss(pred, Tensor(hr_t))
            backward(loss)
            total += float(loss.data)
        if tcfg.batch > 1:  # mean over the batch, not sum
            for _, p in named_tensors(params):
                if p.grad is not None:
                    p.grad /= tcfg.batch
        losses.append(total / tcfg.batch)
        adam_step(params, state, tcfg, it)
    return TrainToyResult(params=params, losses=losses, lr_rgb=lr_rgb)


def upscale(params: GrformerParams, cfg: ModelConfig, lr_rgb: np.ndarray) -> np.ndarray:
    """Plain forward pass on a [3, h, w] float image; no gradient bookkeeping."""
    out = grformer_forward(Tensor(np.asarray(lr_rgb, dtype=np.float64)), params, cfg)
    return out.data
