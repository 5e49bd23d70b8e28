"""Checkpoint container: one JSON header line, then raw little-endian float64.

Layout::

    b"RETINN-CKPT\\n"
    <header JSON, UTF-8, single line>\\n
    <binary section: every parameter flattened in header order, '<f8'>

The header lists parameter names and shapes and carries the SHA-256 of the
binary section; anything else the caller puts in it (architecture config,
hyperparameters, normalization statistics) is stored verbatim.
"""

import hashlib
import json

import numpy as np

from .errors import DataError
from .params import ParameterStore

MAGIC = b"RETINN-CKPT\n"
FORMAT_VERSION = 1


def dumps_json(obj):
    """Canonical JSON used for every artifact that must be byte-reproducible."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(header, params):
    binary = params.flat().astype("<f8").tobytes()
    full = dict(header)
    full["format_version"] = FORMAT_VERSION
    full["parameters"] = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    full["binary"] = {"dtype": "<f8", "length": len(binary),
                      "sha256": hashlib.sha256(binary).hexdigest()}
    return MAGIC + dumps_json(full).encode("utf-8") + b"\n" + binary


def decode(blob):
    if not blob.startswith(MAGIC):
        raise DataError("not a checkpoint file (bad magic)")
    rest = blob[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise DataError("checkpoint header is not terminated")
    try:
        header = json.loads(rest[:nl].decode("utf-8"))
    except ValueError as exc:
        raise DataError(f"checkpoint header is not valid JSON: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format_version {header.get('format_version')!r}")
    binary = rest[nl + 1:]
    meta = header["binary"]
    if len(binary) != meta["length"]:
        raise DataError(f"binary section is {len(binary)} bytes, header says {meta['length']}")
    if hashlib.sha256(binary).hexdigest() != meta["sha256"]:
        raise DataError("checkpoint checksum mismatch")
    flat = np.frombuffer(binary, dtype="<f8").astype(np.float64)
    store = ParameterStore()
    pos = 0
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        store.add(entry["name"], flat[pos:pos + size].reshape(shape))
        pos += size
    if pos != flat.size:
        raise DataError("parameter shapes do not cover the binary section")
    return header, store


def save(path, header, params):
    blob = encode(header, params)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
