"""Versioned checkpoint container bundling backbone, guidance head, encoder
spec, and optional optimizer state for exact training resumption."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import torch

from .backbone import ModelConfig, RoutedUNet
from .encoders import build_encoder
from .guidance import GuidanceHead
from .tasks import TaskSet

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def config_hash(obj: dict) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def state_checksum(state_dict: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(state_dict):
        h.update(name.encode())
        h.update(state_dict[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _tensor_index(state_dict: dict) -> dict:
    return {name: {"shape": list(t.shape), "dtype": str(t.dtype)}
            for name, t in state_dict.items()}


@dataclass
class Checkpoint:
    backbone: RoutedUNet
    head: GuidanceHead
    encoder_spec: dict
    task_set: TaskSet
    step: int = 0
    epoch: int = 0
    train_config: dict | None = None
    optimizer_state: dict | None = None
    scheduler_state: dict | None = None
    torch_rng_state: torch.Tensor | None = None

    @property
    def model_config(self) -> ModelConfig:
        return self.backbone.config

    def manifest(self) -> dict:
        cfg = self.model_config.to_dict()
        return {
            "format_version": FORMAT_VERSION,
            "config_hash": config_hash({"model": cfg, "train": self.train_config or {}}),
            "task_set": self.task_set.name,
            "task_names": self.task_set.names,
            "task_count": self.task_set.task_count,
            "d_v": self.model_config.d_v,
            "d_t": self.head.d_t,
            "encoder": self.encoder_spec,
            "step": self.step,
            "epoch": self.epoch,
            "tensors": {
                **{f"backbone.{k}": v for k, v in _tensor_index(self.backbone.state_dict()).items()},
                **{f"head.{k}": v for k, v in _tensor_index(self.head.state_dict()).items()},
            },
        }

    def weights_hash(self) -> str:
        return state_checksum({**{f"b.{k}": v for k, v in self.backbone.state_dict().items()},
                               **{f"h.{k}": v for k, v in self.head.state_dict().items()}})


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    payload = {
        "manifest": ckpt.manifest(),
        "model_config": ckpt.model_config.to_dict(),
        "head_config": ckpt.head.config(),
        "train_config": ckpt.train_config,
        "backbone_state": ckpt.backbone.state_dict(),
        "head_state": ckpt.head.state_dict(),
        "optimizer_state": ckpt.optimizer_state,
        "scheduler_state": ckpt.scheduler_state,
        "torch_rng_state": ckpt.torch_rng_state,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    manifest = payload.get("manifest", {})
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})")
    model_config = ModelConfig.from_dict(payload["model_config"])
    backbone = RoutedUNet(model_config)
    backbone.load_state_dict(payload["backbone_state"])
    head = GuidanceHead(**payload["head_config"])
    head.load_state_dict(payload["head_state"])
    return Checkpoint(
        backbone=backbone,
        head=head,
        encoder_spec=manifest["encoder"],
        task_set=TaskSet(manifest["task_set"]),
        step=manifest.get("step", 0),
        epoch=manifest.get("epoch", 0),
        train_config=payload.get("train_config"),
        optimizer_state=payload.get("optimizer_state"),
        scheduler_state=payload.get("scheduler_state"),
        torch_rng_state=payload.get("torch_rng_state"),
    )


def build_encoder_for(ckpt: Checkpoint):
    return build_encoder(ckpt.encoder_spec)
