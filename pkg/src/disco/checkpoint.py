"""On-disk checkpoint format.

A checkpoint directory holds ``manifest.json`` and one raw little-endian
binary file per named tensor::

    {
      "format": "disco-checkpoint/1",
      "step": 5000,
      "config": {...},          # fully resolved RunConfig
      "generator": {...},       # GeneratorHandle.describe()
      "rng_state": {...},       # numpy bit-generator state
      "tensors": {"navigator/matrix": {"file": "navigator__matrix.bin",
                                       "dtype": "<f4", "shape": [4, 8]}, ...}
    }
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import ConfigError

FORMAT = "disco-checkpoint/1"


def tensor_hash(tensors: Dict[str, np.ndarray]) -> str:
    """SHA-256 over names, dtypes, shapes and little-endian bytes, in name order."""
    digest = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], order="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        digest.update(name.encode())
        digest.update(arr.dtype.str.encode())
        digest.update(repr(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def _file_name(name: str) -> str:
    return name.replace("/", "__").replace(".", "_") + ".bin"


def save(directory, checkpoint) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(checkpoint.tensors):
        arr = np.asarray(checkpoint.tensors[name], order="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        fname = _file_name(name)
        (root / fname).write_bytes(arr.tobytes())
        entries[name] = {"file": fname, "dtype": arr.dtype.str, "shape": list(arr.shape)}
    manifest = {
        "format": FORMAT,
        "step": checkpoint.step,
        "config": checkpoint.config,
        "generator": checkpoint.generator,
        "rng_state": checkpoint.rng_state,
        "tensors": entries,
    }
    # manifest last: a directory without one is an incomplete write
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load(directory, cls):
    root = Path(directory)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint manifest in {root}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise ConfigError(f"{root} is not a {FORMAT} checkpoint")
    try:
        tensors = {}
        for name, meta in manifest["tensors"].items():
            dtype = np.dtype(meta["dtype"])
            shape = tuple(meta["shape"])
            raw = (root / meta["file"]).read_bytes()
            if len(raw) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
                raise ConfigError(f"tensor file for {name} has the wrong size")
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        return cls(
            tensors=tensors,
            step=int(manifest["step"]),
            rng_state=manifest["rng_state"],
            config=manifest["config"],
            generator=manifest.get("generator", {}),
        )
    except (KeyError, TypeError, ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"corrupt checkpoint manifest in {root}: {exc}") from exc
