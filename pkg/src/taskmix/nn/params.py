"""Named parameter storage and a byte-stable checkpoint format.

Checkpoints are a fixed binary container: magic, format version, a
canonical JSON header describing every tensor in insertion order, then
the raw little-endian float64 payloads concatenated in the same order.
Writing the same parameters twice yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from taskmix.errors import ConfigurationError

_MAGIC = b"TMX1"
FORMAT_VERSION = 1


class ParameterSet:
    """Ordered mapping of unique names to float64 arrays, tagged by owner."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._owners: dict[str, str] = {}

    def add(self, name: str, value: np.ndarray, owner: str) -> np.ndarray:
        if name in self._values:
            raise ConfigurationError(f"duplicate parameter name '{name}'")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        self._values[name] = arr
        self._owners[name] = owner
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._values:
            raise ConfigurationError(f"unknown parameter '{name}'")
        old = self._values[name]
        arr = np.ascontiguousarray(value, dtype=np.float64)
        if arr.shape != old.shape:
            raise ConfigurationError(
                f"shape mismatch for '{name}': {old.shape} vs {arr.shape}")
        self._values[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def owner_of(self, name: str) -> str:
        return self._owners[name]

    def owners(self) -> list[str]:
        seen = dict.fromkeys(self._owners.values())
        return list(seen)

    def names_for(self, *owners: str) -> list[str]:
        wanted = set(owners)
        return [n for n, o in self._owners.items() if o in wanted]

    def subset(self, *owners: str) -> dict[str, np.ndarray]:
        return {n: self._values[n] for n in self.names_for(*owners)}

    def clone(self) -> "ParameterSet":
        out = ParameterSet()
        for name, value in self._values.items():
            out.add(name, value.copy(), self._owners[name])
        return out

    def copy_from(self, other: "ParameterSet", names=None) -> None:
        for name in (names if names is not None else other.names()):
            self[name] = other[name].copy()


def save_checkpoint(params: ParameterSet, path, meta: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": [
            {"name": n, "owner": params.owner_of(n), "shape": list(v.shape)}
            for n, v in params.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, value in params.items():
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ConfigurationError(f"not a parameter checkpoint: {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ConfigurationError(
                f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        params = ParameterSet()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ConfigurationError(f"truncated checkpoint: {path}")
            value = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            params.add(entry["name"], value, entry["owner"])
    return params, header["meta"]
