"""Single-file model checkpoints.

Layout: one UTF-8 JSON header line, then the raw little-endian bytes of every
parameter in the order the header declares. The header carries a format
version so old files fail loudly instead of deserializing garbage.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .validation import ParseError

FORMAT_NAME = "triagekit-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, params: dict[str, np.ndarray], extras: dict | None = None) -> None:
    """Write ``params`` (name -> array) with a versioned JSON header.

    Iteration order of ``params`` is the declared serialization order.
    """
    entries = []
    blobs = []
    for name, value in params.items():
        arr = np.ascontiguousarray(value)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    header = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "params": entries,
        "extras": extras or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_kind: str | None = None):
    """Return ``(config, params, extras)``; validates format and kind."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: not a triagekit checkpoint ({exc})") from None
        if header.get("format") != FORMAT_NAME:
            raise ParseError(f"{path}: unexpected format {header.get('format')!r}")
        if header.get("format_version") != FORMAT_VERSION:
            raise ParseError(
                f"{path}: format version {header.get('format_version')} "
                f"not supported (expected {FORMAT_VERSION})"
            )
        if expected_kind is not None and header.get("kind") != expected_kind:
            raise ParseError(
                f"{path}: checkpoint kind {header.get('kind')!r}, expected {expected_kind!r}"
            )
        params = {}
        for entry in header["params"]:
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            blob = fh.read(count * dtype.itemsize)
            if len(blob) != count * dtype.itemsize:
                raise ParseError(f"{path}: truncated parameter {entry['name']!r}")
            arr = np.frombuffer(blob, dtype=dtype).reshape(entry["shape"])
            params[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
        trailing = fh.read(1)
        if trailing:
            raise ParseError(f"{path}: trailing bytes after declared parameters")
    return header["config"], params, header.get("extras", {})
