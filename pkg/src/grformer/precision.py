"""Run-scoped scalar precision.

Verification oracles need float64 (finite differences at step 1e-5 drown in
float32 rounding); training runs in float32 for parity with common practice.
The active dtype is a process-global setting, switched once per run by the CLI
or scoped with `use_precision` in tests.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

_NAMES = {"f32": np.float32, "f64": np.float64}

_active = np.float64


def set_precision(name: str) -> None:
    """Set the process-wide scalar dtype. `name` is 'f32' or 'f64'."""
    global _active
    try:
        _active = _NAMES[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_NAMES)}") from None


def precision_name() -> str:
    return "f32" if _active == np.float32 else "f64"


def active_dtype() -> type:
    return _active


@contextmanager
def use_precision(name: str) -> Iterator[None]:
    prev = precision_name()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(prev)
