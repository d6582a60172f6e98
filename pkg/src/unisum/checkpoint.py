"""Versioned binary model checkpoints.

Layout (all integers little-endian):

    magic   b"USUM"
    version u32
    count   u32                      number of sections
    section repeated `count` times, sorted by name:
        name_len u32, name utf-8
        payload_len u64, payload

Tensor sections (parameter and optimizer-accumulator names) encode
u32 ndim, ndim u64 dims, then raw float64 data. `meta.*` sections hold
UTF-8 payloads: the full config JSON, its fingerprint, the iteration
counter, and the training RNG state. Sorting plus canonical JSON makes
save -> load -> save byte-identical.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import config as config_mod
from .errors import DataError

MAGIC = b"USUM"
VERSION = 1


@dataclass
class Checkpoint:
    config: object
    params: dict
    opt_acc: dict = field(default_factory=dict)
    iteration: int = 0
    rng_state: dict = None
    version: int = VERSION

    def has_extractor(self):
        return any(k.startswith("ext.") for k in self.params)

    def has_abstracter(self):
        return any(k.startswith("abs.") for k in self.params)


def _encode_tensor(arr):
    arr = np.asarray(arr, dtype=np.float64)
    out = struct.pack("<I", arr.ndim)
    out += b"".join(struct.pack("<Q", d) for d in arr.shape)
    return out + arr.astype("<f8").tobytes()


def _decode_tensor(payload, name):
    try:
        (ndim,) = struct.unpack_from("<I", payload, 0)
        dims = struct.unpack_from(f"<{ndim}Q", payload, 4)
        offset = 4 + 8 * ndim
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    except (struct.error, ValueError) as exc:
        raise DataError(f"corrupt tensor section {name!r}") from exc
    if offset + 8 * count != len(payload):
        raise DataError(f"tensor section {name!r} has trailing bytes")
    return data.astype(np.float64).reshape(dims)


def save(ckpt, path):
    sections = {}
    for name, arr in ckpt.params.items():
        sections[name] = _encode_tensor(arr)
    for name, arr in ckpt.opt_acc.items():
        sections[f"opt.{name}"] = _encode_tensor(arr)
    sections["meta.config"] = json.dumps(
        json.loads(ckpt.config.to_json()), sort_keys=True,
        separators=(",", ":")).encode()
    sections["meta.fingerprint"] = ckpt.config.fingerprint().encode()
    sections["meta.iteration"] = str(int(ckpt.iteration)).encode()
    if ckpt.rng_state is not None:
        sections["meta.rng"] = json.dumps(ckpt.rng_state, sort_keys=True,
                                          separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<I", len(sections)))
    for name in sorted(sections):
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        payload = sections[name]
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack_from("<I", blob, 8)
        offset = 12
        sections = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode()
            offset += name_len
            (payload_len,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            sections[name] = blob[offset:offset + payload_len]
            if len(sections[name]) != payload_len:
                raise DataError(f"{path}: truncated section {name!r}")
            offset += payload_len
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")

    required = ("meta.config", "meta.fingerprint", "meta.iteration")
    for key in required:
        if key not in sections:
            raise DataError(f"{path}: missing section {key!r}")
    cfg = config_mod.from_dict(json.loads(sections.pop("meta.config")))
    fingerprint = sections.pop("meta.fingerprint").decode()
    if fingerprint != cfg.fingerprint():
        raise DataError(f"{path}: fingerprint does not match embedded config")
    iteration = int(sections.pop("meta.iteration"))
    rng_state = None
    if "meta.rng" in sections:
        rng_state = json.loads(sections.pop("meta.rng"))
    params, opt_acc = {}, {}
    for name, payload in sections.items():
        if name.startswith("opt."):
            opt_acc[name[4:]] = _decode_tensor(payload, name)
        elif name.startswith("meta."):
            raise DataError(f"{path}: unknown metadata section {name!r}")
        else:
            params[name] = _decode_tensor(payload, name)
    return Checkpoint(config=cfg, params=params, opt_acc=opt_acc,
                      iteration=iteration, rng_state=rng_state)
