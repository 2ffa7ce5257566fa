"""Versioned binary checkpoint container with a named-tensor table and checksum."""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..engine import Tensor
from .arch import arch_from_dict, arch_to_dict
from .nets import GeneratorParams, MaskDiscParams, PatchDiscParams

MAGIC = b"OVRECKPT"
FORMAT_VERSION = 1

_PARAM_CLASSES = {"generator": GeneratorParams, "patch_disc": PatchDiscParams,
                  "mask_disc": MaskDiscParams}


class CheckpointError(Exception):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    roles: dict                     # role name -> params object
    opt_arrays: dict = field(default_factory=dict)   # flat name -> ndarray
    counters: dict = field(default_factory=dict)     # name -> int
    config_fingerprint: str = ""
    format_version: int = FORMAT_VERSION


def _kind_of(params):
    for kind, cls in _PARAM_CLASSES.items():
        if isinstance(params, cls):
            return kind
    raise TypeError(f"unknown params type {type(params)!r}")


def save_checkpoint(ck: Checkpoint, path) -> None:
    tensors = {}
    roles_meta = {}
    for role, params in ck.roles.items():
        roles_meta[role] = {"kind": _kind_of(params),
                            "arch": arch_to_dict(params.arch),
                            "name": params.name}
        for tname, t in params.tensors.items():
            tensors[f"role/{role}/{tname}"] = t.data
    for aname, arr in ck.opt_arrays.items():
        tensors[f"opt/{aname}"] = arr

    table = []
    payload = bytearray()
    for key in sorted(tensors):
        arr = np.ascontiguousarray(tensors[key])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        table.append({"key": key, "dtype": arr.dtype.str,
                      "shape": list(arr.shape), "offset": len(payload),
                      "nbytes": arr.nbytes})
        payload += arr.tobytes()

    header = json.dumps({
        "config_fingerprint": ck.config_fingerprint,
        "counters": {k: int(v) for k, v in ck.counters.items()},
        "roles": roles_meta,
        "tensors": table,
    }, sort_keys=True).encode()

    blob = bytearray()
    blob += MAGIC
    blob += FORMAT_VERSION.to_bytes(4, "little")
    blob += len(header).to_bytes(8, "little")
    blob += header
    blob += payload
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 12 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    version = int.from_bytes(blob[8:12], "little")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, supported {FORMAT_VERSION}")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointCorruptError(f"{path}: checksum mismatch (truncated or corrupt)")
    hlen = int.from_bytes(blob[12:20], "little")
    header = json.loads(blob[20:20 + hlen].decode())
    payload = blob[20 + hlen:-32]

    arrays = {}
    for ent in header["tensors"]:
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise CheckpointCorruptError(f"{path}: tensor {ent['key']} truncated")
        arrays[ent["key"]] = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])) \
            .reshape(ent["shape"]).copy()

    roles = {}
    for role, meta in header["roles"].items():
        arch = arch_from_dict(meta["arch"])
        prefix = f"role/{role}/"
        tensors = {k[len(prefix):]: Tensor(v, requires_grad=True)
                   for k, v in arrays.items() if k.startswith(prefix)}
        roles[role] = _PARAM_CLASSES[meta["kind"]](arch, tensors, meta["name"])

    opt_arrays = {k[len("opt/"):]: v for k, v in arrays.items()
                  if k.startswith("opt/")}
    return Checkpoint(roles=roles, opt_arrays=opt_arrays,
                      counters=dict(header["counters"]),
                      config_fingerprint=header["config_fingerprint"],
                      format_version=version)


def checkpoints_equal(a: Checkpoint, b: Checkpoint) -> bool:
    if set(a.roles) != set(b.roles) or a.counters != b.counters \
            or a.config_fingerprint != b.config_fingerprint:
        return False
    for role in a.roles:
        pa, pb = a.roles[role], b.roles[role]
        if pa.arch != pb.arch or set(pa.tensors) != set(pb.tensors):
            return False
        for k in pa.tensors:
            if not np.array_equal(pa.tensors[k].data, pb.tensors[k].data):
                return False
    if set(a.opt_arrays) != set(b.opt_arrays):
        return False
    return all(np.array_equal(a.opt_arrays[k], b.opt_arrays[k])
               for k in a.opt_arrays)
