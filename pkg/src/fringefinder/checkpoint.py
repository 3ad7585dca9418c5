"""Self-describing checkpoint container (magic ``FCKP1``).

Layout: 5 magic bytes, uint32 header length, a canonical JSON header
(sorted keys, compact separators), then the raw little-endian tensor
payload in header order. Tensors are stored sorted by name, so
save -> load -> save reproduces the file byte for byte. The header
carries the stage tag, train state, config snapshots, optimizer
metadata, and JSON-able RNG states; the torch RNG state rides along as
a uint8 tensor.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .encoder import EncoderConfig
from .errors import ValidationError

CHECKPOINT_MAGIC = b"FCKP1"
CHECKPOINT_VERSION = 1

STAGES = ("pretrained", "finetuned")


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_metric: float | None = None
    best_epoch: int | None = None


@dataclass
class Checkpoint:
    stage: str
    encoder_config: EncoderConfig
    state: TrainState = field(default_factory=TrainState)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_meta: dict[str, Any] | None = None
    rng: dict[str, Any] = field(default_factory=dict)
    configs: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}, got {self.stage!r}")


def _jsonable(obj: Any) -> Any:
    """Coerce numpy scalars and tuples so the header dumps canonically."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    names = sorted(ckpt.tensors)
    index = []
    offset = 0
    payload = bytearray()
    for name in names:
        shape = list(ckpt.tensors[name].shape)  # ascontiguousarray promotes 0-d to 1-d
        arr = np.ascontiguousarray(ckpt.tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes(order="C")
        index.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": shape,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        payload += blob
        offset += len(blob)
    header = {
        "version": CHECKPOINT_VERSION,
        "stage": ckpt.stage,
        "state": dataclasses.asdict(ckpt.state),
        "encoder_config": _jsonable(dataclasses.asdict(ckpt.encoder_config)),
        "configs": _jsonable(ckpt.configs),
        "optimizer_meta": _jsonable(ckpt.optimizer_meta),
        "rng": _jsonable(ckpt.rng),
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 9 or blob[:5] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a FCKP1 checkpoint")
    (header_len,) = struct.unpack("<I", blob[5:9])
    try:
        header = json.loads(blob[9 : 9 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: corrupt checkpoint header ({exc})") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{path}: checkpoint version {header.get('version')} != supported {CHECKPOINT_VERSION}"
        )
    payload = blob[9 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return Checkpoint(
        stage=header["stage"],
        encoder_config=EncoderConfig(**header["encoder_config"]),
        state=TrainState(**header["state"]),
        tensors=tensors,
        optimizer_meta=header.get("optimizer_meta"),
        rng=header.get("rng", {}),
        configs=header.get("configs", {}),
    )


def _as_tensor(arr: np.ndarray) -> torch.Tensor:
    # ascontiguousarray promotes 0-d arrays to 1-d; restore the shape
    return torch.from_numpy(np.ascontiguousarray(arr).reshape(arr.shape))


def model_tensors(module: torch.nn.Module, prefix: str = "model") -> dict[str, np.ndarray]:
    """Flatten a module state dict into named numpy arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[f"{prefix}/{name}"] = tensor.detach().cpu().numpy().copy()
    return out


def load_model_tensors(
    module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "model"
) -> None:
    state = {}
    head = f"{prefix}/"
    for name, arr in tensors.items():
        if name.startswith(head):
            state[name[len(head) :]] = _as_tensor(arr)
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise ValidationError(f"checkpoint missing model tensors: {sorted(missing)[:5]}...")
    module.load_state_dict(state)


def optimizer_tensors(optim: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Split an optimizer state dict into tensors and JSON-able metadata."""
    sd = optim.state_dict()
    tensors: dict[str, np.ndarray] = {}
    scalar_state: dict[str, dict[str, Any]] = {}
    for idx, entry in sd["state"].items():
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim/{idx}/{key}"] = value.detach().cpu().numpy().copy()
            else:
                scalar_state.setdefault(str(idx), {})[key] = value
    meta = {"param_groups": sd["param_groups"], "scalar_state": scalar_state}
    return tensors, meta


def load_optimizer_tensors(
    optim: torch.optim.Optimizer, tensors: dict[str, np.ndarray], meta: dict[str, Any]
) -> None:
    state: dict[int, dict[str, Any]] = {}
    for name, arr in tensors.items():
        if not name.startswith("optim/"):
            continue
        _, idx, key = name.split("/", 2)
        state.setdefault(int(idx), {})[key] = _as_tensor(arr)
    for idx, entry in (meta.get("scalar_state") or {}).items():
        state.setdefault(int(idx), {}).update(entry)
    param_groups = []
    for group in meta["param_groups"]:
        group = dict(group)
        if isinstance(group.get("betas"), list):
            group["betas"] = tuple(group["betas"])
        param_groups.append(group)
    optim.load_state_dict({"state": state, "param_groups": param_groups})


def torch_rng_tensor() -> np.ndarray:
    return torch.get_rng_state().numpy().copy()


def restore_torch_rng(arr: np.ndarray) -> None:
    torch.set_rng_state(torch.from_numpy(np.ascontiguousarray(arr)))
