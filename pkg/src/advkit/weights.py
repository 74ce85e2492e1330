"""Weight persistence: the "MGWT" container format.

Layout (all integers little-endian unless noted):

    magic            4 bytes, ASCII "MGWT"
    format version   u16 (currently 1)
    metadata lines   u32 line count, then per line u32 byte length +
                     UTF-8 "key=value"
    parameter records until EOF, each:
                     u32 name length + UTF-8 name
                     u32 rank, then rank x u32 dims
                     raw little-endian float32 data (prod(dims) values)

Round-trips are bit-exact: loading writes the stored bytes straight into
float32 arrays.  Metadata carries the dataset id, the architecture hash,
the training seed, and the epoch count; the hash must match the spec a
load is asked to fill, so weights cannot be poured into the wrong model.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .models import TrainedModel

MAGIC = b"MGWT"
VERSION = 1


def _dataset_id(spec):
    return {(28, 28, 1): "mnist", (32, 32, 3): "cifar10"}.get(
        tuple(spec.input_shape), "custom"
    )


def save_weights(model, path, seed=0, epochs=None):
    """Serialize a TrainedModel's parameters plus identifying metadata."""
    if epochs is None:
        epochs = len(model.history)
    meta = {
        "dataset": _dataset_id(model.spec),
        "spec_hash": model.spec.hash(),
        "seed": str(int(seed)),
        "epochs": str(int(epochs)),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(meta)))
        for key, value in sorted(meta.items()):
            line = f"{key}={value}".encode("utf-8")
            fh.write(struct.pack("<I", len(line)))
            fh.write(line)
        for name in sorted(model.params):
            arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    return path


def _take(blob, offset, count, path, what):
    end = offset + count
    if end > len(blob):
        raise FormatError(
            f"{path}: truncated while reading {what} at offset {offset}"
        )
    return blob[offset:end], end


def read_container(path):
    """Parse an MGWT file into (metadata dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head, offset = _take(blob, 0, 6, path, "header")
    if head[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {head[:4]!r} at offset 0")
    version = struct.unpack("<H", head[4:6])[0]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")

    raw, offset = _take(blob, offset, 4, path, "metadata count")
    meta = {}
    for i in range(struct.unpack("<I", raw)[0]):
        raw, offset = _take(blob, offset, 4, path, f"metadata length {i}")
        line, offset = _take(
            blob, offset, struct.unpack("<I", raw)[0], path, f"metadata line {i}"
        )
        key, sep, value = line.decode("utf-8").partition("=")
        if not sep:
            raise FormatError(f"{path}: metadata line {i} has no '='")
        meta[key] = value

    params = {}
    while offset < len(blob):
        raw, offset = _take(blob, offset, 4, path, "parameter name length")
        name, offset = _take(
            blob, offset, struct.unpack("<I", raw)[0], path, "parameter name"
        )
        name = name.decode("utf-8")
        raw, offset = _take(blob, offset, 4, path, f"{name} rank")
        rank = struct.unpack("<I", raw)[0]
        raw, offset = _take(blob, offset, 4 * rank, path, f"{name} dims")
        dims = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(dims)) if rank else 1
        raw, offset = _take(blob, offset, 4 * count, path, f"{name} data")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return meta, params


def load_weights(spec, path):
    """Rebuild a TrainedModel from an MGWT file, guarded by the spec hash."""
    meta, arrays = read_container(path)
    stored = meta.get("spec_hash", "")
    if stored != spec.hash():
        raise FormatError(
            f"{path}: architecture hash {stored} does not match the requested "
            f"spec ({spec.hash()}, role={spec.role}, input={spec.input_shape})"
        )
    from .autodiff import Tensor

    params = {
        name: Tensor(arr.astype(np.float32), requires_grad=True)
        for name, arr in arrays.items()
    }
    expected = {name for name, _ in _iter_param_names(spec)}
    if set(params) != expected:
        missing = sorted(expected - set(params))
        surplus = sorted(set(params) - expected)
        raise FormatError(
            f"{path}: parameter set mismatch (missing {missing}, surplus {surplus})"
        )
    return TrainedModel(spec=spec, params=params)


def _iter_param_names(spec):
    from .models import init_params

    # init_params is cheap at float32 and authoritative about naming.
    for name, tensor in init_params(spec, 0).items():
        yield name, tensor.shape
