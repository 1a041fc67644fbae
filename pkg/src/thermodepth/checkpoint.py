"""Binary checkpoint container for model parameters.

Layout: an 8-byte magic, a little-endian uint32 header length, a JSON
header, then the raw little-endian float32 payload of every tensor
concatenated in header-table order. The header carries the model build
spec, an optional extra config dict, a hash of the canonical config
JSON, the per-group parameter census, and a sha256 of the payload.

Loading rebuilds the model from the stored spec and fills its tensors
by name, so a renamed or missing entry is caught against the expected
inventory, as are shape changes and a corrupted payload. Values are
stored as float32; the round trip is bitwise for the trainer's default
single-precision parameters.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .model import ModelParams, parameter_census, rebuild_model

MAGIC = b"TDCKPT1\n"


class CheckpointError(ValueError):
    pass


class CheckpointHashError(CheckpointError):
    """Payload or config hash does not match."""


class CheckpointMissingTensor(CheckpointError):
    """A tensor expected by the model spec is absent (or renamed)."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor's shape differs from the rebuilt model's."""


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_checkpoint(params: ModelParams, cfg, path) -> str:
    """Write params (+ optional config dict) to path; returns the
    payload sha256 so callers can log or compare runs."""
    if not params.build_spec:
        raise CheckpointError("params carry no build spec; use build_model")
    cfg = dict(cfg) if cfg else {}
    table = []
    chunks = []
    for name, t in params.tensors().items():
        raw = np.ascontiguousarray(t.data, dtype="<f4")
        table.append({"name": name, "shape": list(t.shape),
                      "trainable": bool(t.requires_grad)})
        chunks.append(raw.tobytes())
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    header = {
        "model": params.build_spec,
        "config": cfg,
        "config_hash": config_hash({"model": params.build_spec,
                                    "config": cfg}),
        "census": parameter_census(params)["counts"],
        "tensors": table,
        "payload_sha256": digest,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        f.write(payload)
    return digest


def load_checkpoint(path, expect_config_hash=None):
    """Read a checkpoint back as (ModelParams, config dict).

    Verifies the payload hash, the stored config hash (and the caller's
    expected one, if given), and that the stored tensor table exactly
    matches the inventory of a model rebuilt from the stored spec.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    hstart = len(MAGIC) + 4
    header = json.loads(blob[hstart:hstart + hlen].decode())
    payload = blob[hstart + hlen:]

    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointHashError(f"{path}: payload hash mismatch")
    want_hash = config_hash({"model": header["model"],
                             "config": header["config"]})
    if want_hash != header["config_hash"]:
        raise CheckpointHashError(f"{path}: config hash mismatch")
    if expect_config_hash is not None and \
            expect_config_hash != header["config_hash"]:
        raise CheckpointHashError(
            f"{path}: checkpoint config hash {header['config_hash'][:12]} "
            f"does not match expected {expect_config_hash[:12]}")

    params = rebuild_model(header["model"])
    live = params.tensors()

    stored = {e["name"]: e for e in header["tensors"]}
    for name in live:
        if name not in stored:
            raise CheckpointMissingTensor(f"{path}: missing tensor {name!r}")
    for name in stored:
        if name not in live:
            raise CheckpointMissingTensor(
                f"{path}: unexpected tensor {name!r} not in model spec")

    offset = 0
    for entry in header["tensors"]:
        name = entry["name"]
        t = live[name]
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise CheckpointShapeError(
                f"{path}: tensor {name!r} has shape {list(shape)}, "
                f"model expects {list(t.shape)}")
        if bool(entry["trainable"]) != t.requires_grad:
            raise CheckpointError(
                f"{path}: tensor {name!r} trainable flag mismatch")
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=offset)
        offset += count * 4
        t.data = raw.reshape(shape).astype(t.dtype)
    if offset != len(payload):
        raise CheckpointError(f"{path}: payload has {len(payload) - offset} "
                              f"trailing bytes")

    # census re-check on the filled model catches any drift between the
    # stored counts and what the spec actually builds
    counts = parameter_census(params)["counts"]
    if counts != header["census"]:
        raise CheckpointError(f"{path}: parameter census mismatch")
    return params, header["config"]
