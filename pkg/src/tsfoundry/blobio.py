"""Single-file container: JSON manifest followed by a raw float32 blob.

Layout (all integers little-endian):

    bytes 0..5    magic b"TSFBL1"
    bytes 6..9    uint32 manifest byte length
    manifest      UTF-8 JSON (compact, sorted keys)
    blob          little-endian 32-bit floats, row-major

Corpus files, checkpoints and embedding matrices all use this container
with different manifest schemas (distinguished by the manifest "kind" key).
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import FileFormatError

MAGIC = b"TSFBL1"
FORMAT_VERSION = 1


def canonical_json(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_blob_file(path, manifest: dict, blob: np.ndarray) -> None:
    """Write a manifest + float32 blob container. `blob` is flattened row-major."""
    data = np.ascontiguousarray(blob, dtype="<f4")
    man = dict(manifest)
    man.setdefault("format_version", FORMAT_VERSION)
    man["blob_floats"] = int(data.size)
    payload = canonical_json(man)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(data.tobytes())


def read_blob_file(path) -> tuple[dict, np.ndarray]:
    """Read a container; returns (manifest, flat float32 array).

    Raises FileFormatError on bad magic, truncated manifest/blob, or an
    unsupported format version.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise FileFormatError(f"{path}: not a blob container (bad magic)")
    (man_len,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + man_len:
        raise FileFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[start : start + man_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: corrupt manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FileFormatError(
            f"{path}: unsupported format version {version!r} (expected {FORMAT_VERSION})"
        )
    expected = int(manifest.get("blob_floats", -1))
    blob_bytes = raw[start + man_len :]
    if expected < 0 or len(blob_bytes) != 4 * expected:
        raise FileFormatError(
            f"{path}: blob length {len(blob_bytes)} bytes does not match "
            f"manifest ({expected} floats)"
        )
    blob = np.frombuffer(blob_bytes, dtype="<f4").copy()
    return manifest, blob


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def bytes_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
