"""Versioned on-disk artifacts (policies, neighbor indexes, checkpoints).

Single JSON document with float64 arrays as base64 (little-endian), written
atomically. Serialization is byte-deterministic for identical contents, which
the reproducibility guarantees lean on.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from .errors import DemoFormatError, VersionError


def encode_array(arr) -> dict:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    return {
        "shape": list(arr.shape),
        "b64": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def decode_array(node) -> np.ndarray:
    data = base64.b64decode(node["b64"])
    arr = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return arr.reshape(node["shape"])


def save_artifact(path, kind: str, version: int, payload: dict) -> None:
    doc = {"format": kind, "version": version, **payload}
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_artifact(path, kind: str, version: int) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DemoFormatError(f"corrupt artifact file: {exc}") from exc
    if doc.get("format") != kind:
        raise DemoFormatError(f"expected a {kind} artifact, found {doc.get('format')!r}")
    if doc.get("version") != version:
        raise VersionError(f"unsupported {kind} version {doc.get('version')!r}")
    return doc
