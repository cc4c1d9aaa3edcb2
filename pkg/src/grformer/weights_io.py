"""Single-file weight container.

Layout: 5-byte magic "GRFW1", a uint64 little-endian manifest length, the
UTF-8 JSON manifest, then raw tensor bytes. The manifest embeds the model
config (flat text, same format as config files), the variant name, and one
entry per tensor: name, dtype, shape, byte offset into the data section.
Round-trips are bit-exact; loading rebuilds the parameter tree from the
embedded config and fails loudly on any name or shape mismatch.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .attention import VARIANTS
from .config import ModelConfig, parse_config, serialize_config
from .network import GrformerParams, init_parameters, named_tensors
from .rng import Rng

MAGIC = b"GRFW1"


class WeightsError(Exception):
    pass


class WeightsFormatError(WeightsError):
    """The file is not a readable container (bad magic, truncation, bad JSON)."""


class WeightsMismatchError(WeightsError):
    """The container is readable but does not describe this model shape."""


def save_weights(path: str, params: GrformerParams, cfg: ModelConfig) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, t in named_tensors(params):
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        arr = t.data if t.data.ndim == 0 else np.ascontiguousarray(t.data)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "config": serialize_config(cfg),
        "variant": params.variant,
        "tensors": entries,
    }
    payload = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for raw in blobs:
            fh.write(raw)


def load_weights(path: str) -> tuple[GrformerParams, ModelConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise WeightsFormatError(f"{path}: not a GRFW1 container")
    head = len(MAGIC) + 8
    if len(blob) < head:
        raise WeightsFormatError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", blob[len(MAGIC) : head])
    if len(blob) < head + mlen:
        raise WeightsFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[head : head + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"{path}: manifest is not valid JSON ({exc})") from None
    for key in ("config", "variant", "tensors"):
        if key not in manifest:
            raise WeightsFormatError(f"{path}: manifest missing {key!r}")

    cfg = parse_config(manifest["config"])
    data = blob[head + mlen :]
    stored = {}
    for entry in manifest["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = int(entry["offset"])
        end = start + n * dtype.itemsize
        if end > len(data):
            raise WeightsFormatError(f"{path}: tensor {entry['name']} runs past end of file")
        stored[entry["name"]] = np.frombuffer(data[start:end], dtype=dtype).reshape(shape).copy()

    if manifest["variant"] not in VARIANTS:
        raise WeightsFormatError(f"{path}: unknown variant {manifest['variant']!r}")
    params = init_parameters(cfg, Rng(0), variant=manifest["variant"])
    expected = dict(named_tensors(params))
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise WeightsMismatchError(
            f"{path}: tensors do not match config (missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, t in expected.items():
        if stored[name].shape != t.data.shape:
            raise WeightsMismatchError(
                f"{path}: {name} has shape {stored[name].shape}, config needs {t.data.shape}"
            )
        t.data = stored[name]
    return params, cfg
