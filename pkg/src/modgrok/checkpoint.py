"""Checkpoint container.

Layout::

    b"MODGROK\\x00"            8-byte magic
    uint64 (little endian)    length L of the JSON header in bytes
    L bytes                   UTF-8 JSON header
    W1, W2, extra arrays      little-endian float64, row-major, in header order

The header always carries ``schema_version``, ``p``, ``N``, ``activation``,
``scaling``, ``seed``, ``epoch`` and an ``arrays`` list of ``{name, shape}``
entries describing the payload.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .network import NetworkParams

MAGIC = b"MODGROK\x00"
SCHEMA_VERSION = 1
_LE_F8 = np.dtype("<f8")


@dataclass
class Checkpoint:
    params: NetworkParams
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)  # extra named arrays (e.g. optimizer moments)


def save_checkpoint(path, params: NetworkParams, meta: dict | None = None,
                    arrays: dict | None = None) -> Path:
    path = Path(path)
    arrays = dict(arrays or {})
    payload = [("W1", params.W1), ("W2", params.W2)] + sorted(arrays.items())
    header = {
        "seed": None,
        "epoch": 0,
        **(meta or {}),
        "schema_version": SCHEMA_VERSION,
        "p": params.p,
        "N": params.N,
        "activation": params.activation.value,
        "scaling": params.scaling.value,
        "arrays": [{"name": name, "shape": list(np.shape(a))} for name, a in payload],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in payload:
            fh.write(np.ascontiguousarray(a, dtype=_LE_F8).tobytes())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ConfigError(f"{path}: not a modgrok checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {header.get('schema_version')}")
    offset = 16 + hlen
    loaded = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(data):
            raise ConfigError(f"{path}: truncated payload")
        a = np.frombuffer(data, dtype=_LE_F8, count=count, offset=offset).reshape(shape)
        loaded[entry["name"]] = a.astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise ConfigError(f"{path}: {len(data) - offset} trailing bytes")
    params = NetworkParams(loaded.pop("W1"), loaded.pop("W2"), header["activation"], header["scaling"])
    meta = {k: v for k, v in header.items() if k != "arrays"}
    return Checkpoint(params, meta, loaded)
