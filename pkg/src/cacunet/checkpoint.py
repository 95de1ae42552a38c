"""Self-describing checkpoint files.

Layout (all integers little-endian)::

    bytes 0-7     magic  b"CACUNET\\x00"
    bytes 8-11    uint32 format version (currently 1)
    bytes 12-19   uint64 manifest length M
    next M bytes  UTF-8 JSON manifest
    rest          array blob: each array stored as raw <f4, C order

The manifest holds ``config`` (ModelConfig dict), ``arrays`` (name, shape,
byte offset into the blob, byte count), ``int_buffers`` (integer-valued
state such as BN batch counters), and training metadata: ``step``,
``best_val_mse``, ``train_config``, ``rng_state`` and ``optimizer``
hyper-parameters.  Optimizer slot arrays are stored alongside the model
arrays under ``optim.<param name>.<slot>``.  Keys are written sorted and no
timestamps are recorded, so identical state gives identical bytes.
"""

from dataclasses import dataclass
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ._validation import InvalidInputError
from .unet import ModelConfig, build_model

__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"CACUNET\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    config: ModelConfig
    model: torch.nn.Module
    step: int = 0
    best_val_mse: float | None = None
    train_config: dict | None = None
    rng_state: dict | None = None
    optimizer: dict | None = None
    optimizer_slots: dict | None = None
    extra: dict | None = None

    def restore_optimizer(self, optimizer):
        """Load saved RMSprop slots into ``optimizer`` built over ``self.model``."""
        if not self.optimizer_slots:
            return optimizer
        names = {id(p): n for n, p in self.model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                name = names[id(p)]
                slots = self.optimizer_slots.get(name)
                if slots is None:
                    continue
                state = optimizer.state[p]
                for key, arr in slots.items():
                    state[key] = torch.from_numpy(arr.copy())
                state["step"] = torch.tensor(float(self.optimizer["steps"][name]))
        return optimizer


def _float_arrays(model, optimizer):
    arrays, int_buffers = {}, {}
    for name, t in model.state_dict().items():
        if t.is_floating_point():
            arrays[name] = t.detach().cpu().numpy()
        else:
            int_buffers[name] = int(t.item())
    steps = {}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                name = names[id(p)]
                for key, val in state.items():
                    if key == "step":
                        steps[name] = int(val.item() if torch.is_tensor(val) else val)
                    elif torch.is_tensor(val):
                        arrays[f"optim.{name}.{key}"] = val.detach().cpu().numpy()
    return arrays, int_buffers, steps


def save_checkpoint(path, model, optimizer=None, step=0, best_val_mse=None,
                    train_config=None, rng_state=None, extra=None):
    arrays, int_buffers, steps = _float_arrays(model, optimizer)
    index, blobs, offset = [], [], 0
    for name in sorted(arrays):
        raw = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arrays[name].shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": "cacunet-checkpoint",
        "version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "arrays": index,
        "int_buffers": int_buffers,
        "step": int(step),
        "best_val_mse": best_val_mse,
        "train_config": train_config,
        "rng_state": rng_state,
        "optimizer": None,
        "extra": extra,
    }
    if optimizer is not None:
        hyper = {k: v for k, v in optimizer.param_groups[0].items()
                 if k != "params" and isinstance(v, (int, float, bool, type(None)))}
        manifest["optimizer"] = {"type": type(optimizer).__name__, "hyper": hyper,
                                 "steps": steps}
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(text)))
        f.write(text)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)
    return path


def read_manifest(path):
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise InvalidInputError(f"{path} is too short to be a checkpoint")
        magic, version, size = _HEADER.unpack(head)
        if magic != MAGIC:
            raise InvalidInputError(f"{path} is not a cacunet checkpoint")
        if version != FORMAT_VERSION:
            raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
        manifest = json.loads(f.read(size).decode("utf-8"))
        blob = f.read()
    return manifest, blob


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    manifest, blob = read_manifest(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    model = build_model(cfg, seed=0)
    arrays = {}
    for entry in manifest["arrays"]:
        start = entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise InvalidInputError(f"{path}: array {entry['name']} is truncated")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
    state = {}
    for name, ref in model.state_dict().items():
        if name in arrays:
            state[name] = torch.from_numpy(arrays[name].astype(np.float32))
        elif name in manifest["int_buffers"]:
            state[name] = torch.tensor(manifest["int_buffers"][name], dtype=ref.dtype)
        else:
            raise InvalidInputError(f"{path}: missing array {name}")
    model.load_state_dict(state)
    slots = {}
    for name, arr in arrays.items():
        if name.startswith("optim."):
            param, key = name[len("optim."):].rsplit(".", 1)
            slots.setdefault(param, {})[key] = arr.astype(np.float32)
    return Checkpoint(
        config=cfg,
        model=model,
        step=manifest["step"],
        best_val_mse=manifest["best_val_mse"],
        train_config=manifest["train_config"],
        rng_state=manifest["rng_state"],
        optimizer=manifest["optimizer"],
        optimizer_slots=slots or None,
        extra=manifest.get("extra"),
    )
