"""Binary container shared by checkpoints and baseline models.

Layout: a magic line, one JSON manifest line, then raw little-endian float64
arrays in manifest order.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import IoFailure


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack(magic: str, manifest: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    directory = []
    blobs = []
    offset = 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = dict(manifest, tensors=directory)
    head = f"{magic}\n" + json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    return head.encode("utf-8") + b"".join(blobs)


def unpack(magic: str, payload: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    first = payload.find(b"\n")
    if first < 0 or payload[:first].decode("utf-8", "replace") != magic:
        raise IoFailure(f"not a {magic.split()[0]} file (bad magic)")
    second = payload.find(b"\n", first + 1)
    manifest = json.loads(payload[first + 1 : second].decode("utf-8"))
    base = second + 1
    arrays = {}
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    return manifest, arrays


def write_container(path, magic: str, manifest: dict, arrays) -> None:
    atomic_write_bytes(path, pack(magic, manifest, arrays))


def read_container(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return unpack(magic, payload)
