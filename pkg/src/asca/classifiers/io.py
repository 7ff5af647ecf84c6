"""Binary model container.

Layout (little-endian)::

    b"ASCA1"
    u8   kind length, kind bytes ("lda" | "conv")
    u32  header length, header bytes (UTF-8 JSON: labels, hyper-parameters)
    u32  array count
    per array: u8 name length, name, u8 ndim, u32 dims[ndim], float64 data
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import asdict

import numpy as np

from ..errors import FormatError, IoError
from .conv import ConvConfig, ConvModel
from .lda import LdaModel

MAGIC = b"ASCA1"


def _write_array(buf, name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    nb = name.encode()
    buf.write(struct.pack("<B", len(nb)) + nb)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def model_to_bytes(model) -> bytes:
    if isinstance(model, LdaModel):
        kind = "lda"
        header = {"labels": list(model.labels), "shrinkage": model.shrinkage}
        arrays = {"class_means": model.class_means, "shared_covariance": model.shared_covariance,
                  "priors": model.priors}
    elif isinstance(model, ConvModel):
        kind = "conv"
        cfg = asdict(model.config)
        cfg["maps"] = list(cfg["maps"])
        header = {"labels": list(model.labels), "input_shape": list(model.input_shape),
                  "config": cfg}
        arrays = dict(model.params)
        arrays["input_mean"] = model.input_mean
        arrays["input_std"] = model.input_std
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    kb = kind.encode()
    buf.write(struct.pack("<B", len(kb)) + kb)
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(hb)) + hb)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        _write_array(buf, name, arrays[name])
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(data: bytes):
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an ASCA1 model")
    (klen,) = r.unpack("<B")
    kind = r.take(klen).decode()
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode())
    except ValueError as exc:
        raise FormatError("corrupt model header") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<B")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(float)
    if r.pos != len(data):
        raise FormatError("trailing bytes in model file")
    labels = tuple(header["labels"])
    if kind == "lda":
        return LdaModel(arrays["class_means"], arrays["shared_covariance"], arrays["priors"],
                        labels, header["shrinkage"])
    if kind == "conv":
        cfg = dict(header["config"])
        cfg["maps"] = tuple(cfg["maps"])
        params = {k: arrays[k] for k in ("w1", "b1", "w2", "b2", "w3", "b3")}
        return ConvModel(params, tuple(header["input_shape"]), labels, ConvConfig(**cfg),
                         arrays["input_mean"], arrays["input_std"])
    raise FormatError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(model_to_bytes(model))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_model(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
