"""Single-file checkpoints: JSON header plus raw little-endian tensor blobs.

Layout:

    magic "LRSC" | u16 version | u16 reserved | u64 header length |
    header JSON (utf-8) | concatenated tensor payload

The header carries the resolved config text, the run seed, step counters,
the stage trace, a tensor index (name, dtype, shape, byte offset, length)
and a sha256 over the payload. Loading verifies magic, version, bounds and
the digest, and a round trip restores training bit-exactly: backbone,
initial weights, both adapter sets, optimizer moments, bookkeeping sums,
and the exact rng stream states.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import ExpertState, LoraPair
from .cascade import RunState
from .errors import CheckpointError
from .model import Backbone, default_targets
from .optim import LrPolicy, reinit_optimizer

MAGIC = b"LRSC"
VERSION = 1

_DTYPE_TAGS = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
               "<u8": np.dtype("<u8"), "<i8": np.dtype("<i8")}


@dataclass
class Checkpoint:
    version: int
    config_text: str
    config_digest: str
    seed: int
    epoch: int
    global_step: int
    opt_step: int
    trace: list[str]
    sigma_last: dict[str, float]
    tensors: dict[str, np.ndarray]

    def require(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        return self.tensors[name]


def _tensor_bytes(arr: np.ndarray) -> tuple[str, bytes]:
    if arr.dtype == np.float32:
        tag = "<f4"
    elif arr.dtype == np.float64:
        tag = "<f8"
    elif arr.dtype == np.uint64:
        tag = "<u8"
    elif arr.dtype == np.int64:
        tag = "<i8"
    else:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return tag, np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag], copy=False).tobytes()


def _collect_tensors(state: RunState) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for name, w in state.backbone.params.items():
        tensors[f"backbone.{name}"] = w
    for name, w in state.initial_params.items():
        tensors[f"initial.{name}"] = w
    for name, pair in state.expert.slow.items():
        tensors[f"slow.{name}.a"] = pair.a
        tensors[f"slow.{name}.b"] = pair.b
    for name, pair in state.expert.fast.items():
        tensors[f"fast.{name}.a"] = pair.a
        tensors[f"fast.{name}.b"] = pair.b
    for name, arr in state.ledger.noise_sum.items():
        tensors[f"ledger.noise.{name}"] = arr
    for name, arr in state.ledger.delta_sum.items():
        tensors[f"ledger.delta.{name}"] = arr
    if state.optimizer is not None:
        for name, arr in state.optimizer.m.items():
            tensors[f"opt.m.{name}"] = arr
        for name, arr in state.optimizer.v.items():
            tensors[f"opt.v.{name}"] = arr
    tensors["rng.init"] = state.rng_init.state_array()
    tensors["rng.noise"] = state.rng_noise.state_array()
    return tensors


def save_checkpoint(state: RunState, path, config_text: str = "",
                    config_digest: str = "") -> None:
    """Serialize the full run state; the write is atomic."""
    tensors = _collect_tensors(state)
    index = []
    payload = io.BytesIO()
    for name, arr in tensors.items():
        tag, raw = _tensor_bytes(arr)
        index.append({"name": name, "dtype": tag, "shape": list(arr.shape),
                      "offset": payload.tell(), "nbytes": len(raw)})
        payload.write(raw)
    blob = payload.getvalue()
    header = {
        "version": VERSION,
        "config_text": config_text,
        "config_digest": config_digest,
        "seed": state.config.seed,
        "epoch": state.epoch,
        "global_step": state.global_step,
        "opt_step": 0 if state.optimizer is None else state.optimizer.step_count,
        "trace": state.trace,
        "sigma_last": state.ledger.sigma_last,
        "tensors": index,
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(2, "little"))
        fh.write((0).to_bytes(2, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version = int.from_bytes(raw[4:6], "little")
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version} unsupported; this build reads version {VERSION}")
    header_len = int.from_bytes(raw[8:16], "little")
    if 16 + header_len > len(raw):
        raise CheckpointError(f"truncated checkpoint header at offset {len(raw)}")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    blob = raw[16 + header_len:]
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CheckpointError("checkpoint payload does not match its digest")
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        off, nbytes = entry["offset"], entry["nbytes"]
        if off + nbytes > len(blob):
            raise CheckpointError(
                f"truncated payload: tensor {entry['name']!r} ends at offset "
                f"{off + nbytes}, payload has {len(blob)} bytes")
        dtype = _DTYPE_TAGS.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"unknown tensor dtype tag {entry['dtype']!r}")
        arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                            offset=off).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    return Checkpoint(version=version, config_text=header["config_text"],
                      config_digest=header["config_digest"], seed=header["seed"],
                      epoch=header["epoch"], global_step=header["global_step"],
                      opt_step=header.get("opt_step", 0), trace=header["trace"],
                      sigma_last=header.get("sigma_last", {}), tensors=tensors)


# ---------------------------------------------------------------------------
# state reconstruction
# ---------------------------------------------------------------------------


def restore_run_state(ckpt: Checkpoint, cascade_config, model_config) -> RunState:
    """Rebuild a RunState so training continues from the checkpoint boundary."""
    params = {}
    for name in [k[len("backbone."):] for k in ckpt.tensors if k.startswith("backbone.")]:
        params[name] = ckpt.require(f"backbone.{name}")
    if not params:
        raise CheckpointError("checkpoint has no backbone tensors")
    backbone = Backbone(model_config, params, default_targets(model_config))
    state = RunState(cascade_config, backbone)
    state.initial_params = {name: ckpt.require(f"initial.{name}") for name in params}

    slow, fast = {}, {}
    for target in backbone.target_names:
        slow[target] = LoraPair(target, ckpt.require(f"slow.{target}.a"),
                                ckpt.require(f"slow.{target}.b"),
                                cascade_config.rank, cascade_config.scaling)
        fast[target] = LoraPair(target, ckpt.require(f"fast.{target}.a"),
                                ckpt.require(f"fast.{target}.b"),
                                cascade_config.rank, cascade_config.scaling)
    state.expert = ExpertState(slow=slow, fast=fast, epoch=ckpt.epoch)

    for target in backbone.target_names:
        state.ledger.noise_sum[target] = ckpt.require(f"ledger.noise.{target}")
        state.ledger.delta_sum[target] = ckpt.require(f"ledger.delta.{target}")
    state.ledger.sigma_last = dict(ckpt.sigma_last)

    opt_params = {}
    for name, pair in fast.items():
        opt_params[f"{name}.a"] = pair.a
        opt_params[f"{name}.b"] = pair.b
    if any(k.startswith("opt.m.") for k in ckpt.tensors):
        opt = reinit_optimizer(opt_params,
                               LrPolicy(cascade_config.effective_lr(),
                                        cascade_config.b_lr_ratio),
                               weight_decay=cascade_config.weight_decay)
        for name in opt_params:
            opt.m[name] = ckpt.require(f"opt.m.{name}")
            opt.v[name] = ckpt.require(f"opt.v.{name}")
        opt.step_count = ckpt.opt_step
        state.optimizer = opt

    state.rng_init.set_state_array(ckpt.require("rng.init"))
    state.rng_noise.set_state_array(ckpt.require("rng.noise"))
    state.epoch = ckpt.epoch
    state.global_step = ckpt.global_step
    state.trace = list(ckpt.trace)
    return state
