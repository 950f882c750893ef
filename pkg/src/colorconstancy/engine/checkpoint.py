"""Single-file binary checkpoints.

Layout: 8-byte magic, uint32 format version, uint64 header length, a UTF-8
JSON header, then raw little-endian float32 blobs at the offsets listed in
the header. The header carries parameter names and shapes, the optimizer
moments and step counter, the epoch and the training RNG state, which is
everything needed to resume a run bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .optim import AdamState

MAGIC = b"CCSSLCK\x00"
VERSION = 1


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    epoch: int = 0
    optimizer: AdamState | None = None
    rng_state: dict | None = None
    meta: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    blobs: list[bytes] = []
    offset = 0

    def put(arr: np.ndarray) -> dict:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entry = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
        return entry

    header: dict[str, Any] = {"epoch": ckpt.epoch, "meta": ckpt.meta, "rng_state": ckpt.rng_state}
    header["params"] = [{"name": k, **put(v)} for k, v in ckpt.params.items()]
    if ckpt.optimizer is not None:
        st = ckpt.optimizer
        header["optimizer"] = {
            "t": st.t, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
            "m": [put(m) for m in st.m], "v": [put(v) for v in st.v],
        }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen

    def get(entry) -> np.ndarray:
        start = base + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        if len(buf) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated blob")
        return np.frombuffer(buf, dtype="<f4").reshape(entry["shape"]).astype(np.float32)

    params = {e["name"]: get(e) for e in header["params"]}
    opt = None
    if "optimizer" in header:
        o = header["optimizer"]
        opt = AdamState([get(e) for e in o["m"]], [get(e) for e in o["v"]], t=o["t"], lr=o["lr"],
                        beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
    return Checkpoint(params, header["epoch"], opt, header.get("rng_state"), header.get("meta", {}))
