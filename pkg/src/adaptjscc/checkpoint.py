"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive with these members:

``format``          format-version string (``adaptjscc-checkpoint/1``)
``meta``            UTF-8 JSON: config, stage, epoch, provenance, parameter counts
``param/<name>``    one float32 array per model state entry
``optim``           (optional) optimizer state, ``torch.save`` bytes as uint8
``rng``             (optional) training generator state as uint8

Writes go to a temporary file that is renamed into place.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .errors import CheckpointError, ConfigError
from .model import JSCCModel

FORMAT_VERSION = "adaptjscc-checkpoint/1"


@dataclass
class Checkpoint:
    config: ExperimentConfig
    state: dict[str, torch.Tensor]
    meta: dict = field(default_factory=dict)
    optimizer_state: dict | None = None
    rng_state: torch.Tensor | None = None

    def build_model(self) -> JSCCModel:
        model = JSCCModel(self.config)
        model.load_state_dict(self.state)
        model.eval()
        return model

    @classmethod
    def from_model(cls, model: JSCCModel, **meta) -> "Checkpoint":
        state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
        meta.setdefault("parameter_counts", model.parameter_counts())
        return cls(model.config, state, meta)


def _bytes_to_array(obj) -> np.ndarray:
    buf = io.BytesIO()
    torch.save(obj, buf)
    return np.frombuffer(buf.getvalue(), dtype=np.uint8)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(ckpt.meta, config=ckpt.config.to_dict())
    arrays = {
        "format": np.array(FORMAT_VERSION),
        "meta": np.array(json.dumps(meta, sort_keys=True)),
    }
    for name, tensor in ckpt.state.items():
        if not tensor.is_floating_point():
            raise CheckpointError(f"state entry {name} is not floating point")
        arrays[f"param/{name}"] = tensor.detach().cpu().to(torch.float32).numpy()
    if ckpt.optimizer_state is not None:
        arrays["optim"] = _bytes_to_array(ckpt.optimizer_state)
    if ckpt.rng_state is not None:
        arrays["rng"] = ckpt.rng_state.numpy()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            version = str(archive["format"])
            if version != FORMAT_VERSION:
                raise CheckpointError(f"unsupported checkpoint format {version!r}")
            meta = json.loads(str(archive["meta"]))
            state = {
                key[len("param/"):]: torch.from_numpy(archive[key].copy())
                for key in archive.files
                if key.startswith("param/")
            }
            optim = None
            if "optim" in archive.files:
                optim = torch.load(io.BytesIO(archive["optim"].tobytes()), weights_only=True)
            rng = torch.from_numpy(archive["rng"].copy()) if "rng" in archive.files else None
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        config = ExperimentConfig.from_dict(meta.pop("config"))
    except (KeyError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint {path} carries an invalid config: {exc}") from None
    return Checkpoint(config, state, meta, optim, rng)
