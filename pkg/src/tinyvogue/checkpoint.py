"""Self-describing binary checkpoints with end-to-end integrity checking.

Layout: 7-byte magic, u32 little-endian header length, a JSON header listing
every tensor (name, shape, dtype, kind), the raw little-endian tensor bytes
in header order, and a trailing sha256 over everything before it. A reader
on any platform can reconstruct the file from the header alone; a flipped
bit anywhere fails the checksum.
"""

import dataclasses
import hashlib
import json
import struct

import numpy as np

from . import policy as pol
from .errors import CheckpointError, ContractError
from .optim import AdamW
from .vogue import TrainState

MAGIC = b"VOGUE01"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}
TENSOR_KINDS = ("param", "old", "adam_m", "adam_v")


def _dtype_name(arr):
    name = arr.dtype.name
    if name not in _DTYPES:
        raise ContractError(f"unsupported tensor dtype {name!r}; expected one of {sorted(_DTYPES)}")
    return name


def save_checkpoint(path, state, policy_config, extra=None):
    """Write params, the old snapshot, and optimizer moments for a state."""
    tensors = []
    blobs = []

    def put(name, kind, arr):
        arr = np.ascontiguousarray(arr)
        dt = _dtype_name(arr)
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dt, "kind": kind})
        blobs.append(arr.astype(_DTYPES[dt], copy=False).tobytes())

    for name in sorted(state.params):
        put(name, "param", state.params[name].data)
    for name in sorted(state.old):
        put(name, "old", state.old[name])
    for name in sorted(state.opt.state.m):
        put(name, "adam_m", state.opt.state.m[name])
    for name in sorted(state.opt.state.v):
        put(name, "adam_v", state.opt.state.v[name])

    dtypes = {t["dtype"] for t in tensors}
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": dtypes.pop() if len(dtypes) == 1 else "mixed",
        "step": int(state.step),
        "opt_t": int(state.opt.state.t),
        "policy_config": dataclasses.asdict(policy_config),
        "tensors": tensors,
        "extra": dict(extra or {}),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(payload)) + payload + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


@dataclasses.dataclass
class CheckpointData:
    step: int
    opt_t: int
    dtype: str
    policy_config: dict
    extra: dict
    tensors: dict  # kind -> {name: array}


def load_checkpoint(path, expected_dtype=None):
    """Parse and verify a checkpoint; never silently casts precision.

    expected_dtype, when given, must match the stored dtype exactly; a
    mismatch is a refusal, because moments and snapshots rounded through a
    narrower float would not reproduce the saved run.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: truncated file ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    digest = hashlib.sha256(raw[:-32]).digest()
    if digest != raw[-32:]:
        raise CheckpointError(f"{path}: sha256 mismatch, file is corrupt")
    (header_len,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    if start + header_len > len(raw) - 32:
        raise CheckpointError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: header is not valid JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')!r} not supported "
            f"(expected {FORMAT_VERSION})")
    if expected_dtype is not None and header.get("dtype") != expected_dtype:
        raise CheckpointError(
            f"{path}: stored dtype {header.get('dtype')!r} != required {expected_dtype!r}; "
            "refusing to cast across precisions")

    tensors = {kind: {} for kind in TENSOR_KINDS}
    offset = start + header_len
    end = len(raw) - 32
    for entry in header["tensors"]:
        kind, name = entry["kind"], entry["name"]
        if kind not in tensors:
            raise CheckpointError(f"{path}: unknown tensor kind {kind!r}")
        if entry["dtype"] not in _DTYPES:
            raise CheckpointError(f"{path}: unknown tensor dtype {entry['dtype']!r}")
        dt = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dt.itemsize
        if offset + nbytes > end:
            raise CheckpointError(f"{path}: tensor {name!r} overruns the file")
        arr = np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize, offset=offset)
        tensors[kind][name] = arr.reshape(shape).astype(entry["dtype"], copy=True)
        offset += nbytes
    if offset != end:
        raise CheckpointError(f"{path}: {end - offset} trailing bytes after last tensor")
    return CheckpointData(
        step=int(header["step"]),
        opt_t=int(header["opt_t"]),
        dtype=header["dtype"],
        policy_config=header["policy_config"],
        extra=header.get("extra", {}),
        tensors=tensors,
    )


def restore_train_state(ckpt, optim_cfg):
    """Rebuild a live TrainState (params, old snapshot, optimizer moments)."""
    params = pol.restore(ckpt.tensors["param"])
    old = {k: v.copy() for k, v in ckpt.tensors["old"].items()}
    opt = AdamW(params, lr=optim_cfg.lr, betas=optim_cfg.betas, eps=optim_cfg.eps,
                weight_decay=optim_cfg.weight_decay)
    opt.state.t = ckpt.opt_t
    for name in params:
        if name not in ckpt.tensors["adam_m"] or name not in ckpt.tensors["adam_v"]:
            raise CheckpointError(f"checkpoint lacks optimizer moments for parameter {name!r}")
        opt.state.m[name] = ckpt.tensors["adam_m"][name].copy()
        opt.state.v[name] = ckpt.tensors["adam_v"][name].copy()
    return TrainState(params=params, old=old, opt=opt, step=ckpt.step)
