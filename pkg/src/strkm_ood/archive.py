"""Binary model archive.

Layout (all integers little-endian)::

    magic      8 bytes   b"STRKMARC"
    version    u32       currently 1
    count      u32       number of tensors
    count x tensor:
        name_len  u32, name  utf-8 bytes
        ndim      u32, dims  ndim x u64
        data      prod(dims) x f64 (IEEE-754, little-endian, row-major)
    sha256     32 bytes  digest of every byte from ``count`` up to here

Tensor names::

    dims                  [D, l, m]
    lambda                scalar
    U                     l x m
    feature_mean          l
    encoder/<i>/weight    out x in      (same for decoder/<i>/...)
    encoder/<i>/bias      out
    encoder/<i>/slope     scalar (PReLU slope; stored for every layer)
    encoder/<i>/activation  scalar code: 0 linear, 1 prelu, 2 sigmoid
    meta/seed, meta/epochs  scalars
    threshold/tpr_target    scalar (optional)
    threshold/<kind>        scalar gamma per energy kind (optional)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .model import StRkmModel
from .nn import Layer, Mlp

MAGIC = b"STRKMARC"
VERSION = 1
ACT_CODES = {"linear": 0, "prelu": 1, "sigmoid": 2}
ACT_NAMES = {v: k for k, v in ACT_CODES.items()}


@dataclass
class ModelArchive:
    model: StRkmModel
    seed: int = 0
    epochs: int = 0
    tpr_target: float = 0.95
    thresholds: dict = field(default_factory=dict)  # energy kind name -> gamma


def _net_tensors(prefix: str, net: Mlp):
    for i, layer in enumerate(net.layers):
        yield f"{prefix}/{i}/weight", layer.weight
        yield f"{prefix}/{i}/bias", layer.bias
        yield f"{prefix}/{i}/slope", np.float64(layer.slope)
        yield f"{prefix}/{i}/activation", np.float64(ACT_CODES[layer.activation])


def to_bytes(archive: ModelArchive) -> bytes:
    m = archive.model
    tensors = [
        ("dims", np.array(m.dims, dtype=np.float64)),
        ("lambda", np.float64(m.lam)),
        ("U", m.U),
        ("feature_mean", m.feature_mean),
        *_net_tensors("encoder", m.encoder),
        *_net_tensors("decoder", m.decoder),
        ("meta/seed", np.float64(archive.seed)),
        ("meta/epochs", np.float64(archive.epochs)),
    ]
    if archive.thresholds:
        tensors.append(("threshold/tpr_target", np.float64(archive.tpr_target)))
        for kind in sorted(archive.thresholds):
            tensors.append((f"threshold/{kind}", np.float64(archive.thresholds[kind])))
    body = bytearray(struct.pack("<I", len(tensors)))
    for name, value in tensors:
        a = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw
        body += struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
        body += a.tobytes(order="C")
    return MAGIC + struct.pack("<I", VERSION) + bytes(body) + hashlib.sha256(body).digest()


def save_archive(archive: ModelArchive, path) -> None:
    Path(path).write_bytes(to_bytes(archive))


class _Reader:
    def __init__(self, buf: bytes, start: int, end: int):
        self.buf, self.pos, self.end = buf, start, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise FormatError("archive truncated", offset=self.pos)
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(buf: bytes) -> ModelArchive:
    if len(buf) < 12 + 32:
        raise FormatError("archive too short", offset=len(buf))
    if buf[:8] != MAGIC:
        raise FormatError("not a model archive (bad magic)", offset=0)
    (version,) = struct.unpack("<I", buf[8:12])
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version}", offset=8)
    body, digest = buf[12:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("archive checksum mismatch", offset=len(buf) - 32)
    r = _Reader(buf, 12, len(buf) - 32)
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = data
    if r.pos != r.end:
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    try:
        return _assemble(tensors)
    except KeyError as exc:
        raise FormatError(f"archive is missing tensor {exc.args[0]!r}") from None
    except ValidationError as exc:
        raise FormatError(f"archive tensors are inconsistent: {exc}") from None


def _net(tensors: dict, prefix: str) -> Mlp:
    layers = []
    i = 0
    while f"{prefix}/{i}/weight" in tensors:
        code = int(tensors[f"{prefix}/{i}/activation"])
        if code not in ACT_NAMES:
            raise FormatError(f"{prefix}/{i}: unknown activation code {code}")
        layers.append(Layer(tensors[f"{prefix}/{i}/weight"], tensors[f"{prefix}/{i}/bias"],
                            ACT_NAMES[code], float(tensors[f"{prefix}/{i}/slope"])))
        i += 1
    return Mlp(tuple(layers))


def _assemble(t: dict) -> ModelArchive:
    model = StRkmModel(_net(t, "encoder"), _net(t, "decoder"), t["U"], t["feature_mean"],
                       float(t["lambda"]))
    if tuple(int(v) for v in t["dims"]) != model.dims:
        raise ValidationError(f"dims tensor {t['dims']} disagrees with shapes {model.dims}")
    thresholds = {k.split("/", 1)[1]: float(v) for k, v in t.items()
                  if k.startswith("threshold/") and k != "threshold/tpr_target"}
    return ModelArchive(model, int(t["meta/seed"]), int(t["meta/epochs"]),
                        float(t.get("threshold/tpr_target", 0.95)), thresholds)


def load_archive(path) -> ModelArchive:
    return from_bytes(Path(path).read_bytes())
