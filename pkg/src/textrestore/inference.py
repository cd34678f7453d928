"""Inference wrapper: restore numpy images (or encoded bytes) from a checkpoint."""
from __future__ import annotations

import io
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoints import Checkpoint, build_encoder_for, load_checkpoint
from .guidance import embed_instruction
from .tasks import TaskClass


@contextmanager
def _single_thread():
    # Bit-identical outputs regardless of caller (CLI, service workers), at the
    # cost of intra-op parallelism during inference only.
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


class Restorer:
    """Frozen checkpoint + encoder; restore() is pure and thread-safe."""

    def __init__(self, checkpoint: Checkpoint, encoder=None):
        self.checkpoint = checkpoint
        self.backbone = checkpoint.backbone.eval()
        self.head = checkpoint.head.eval()
        self.encoder = encoder if encoder is not None else build_encoder_for(checkpoint)
        self.task_set = checkpoint.task_set
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        for p in self.head.parameters():
            p.requires_grad_(False)

    @classmethod
    def from_path(cls, path) -> "Restorer":
        return cls(load_checkpoint(Path(path)))

    def embed(self, instruction: str):
        with torch.no_grad():
            return embed_instruction(self.head, self.encoder, instruction)

    def predict_task(self, instruction: str) -> tuple[TaskClass, float]:
        emb = self.embed(instruction)
        probs = torch.softmax(emb.logits, dim=-1)
        idx = int(probs.argmax().item())
        return self.task_set.tasks[idx], float(probs[idx].item())

    def restore(self, image: np.ndarray, instruction: str) -> np.ndarray:
        """HWC float image in [0,1] -> restored HWC float32, clamped to [0,1]."""
        if not instruction or not instruction.strip():
            raise ValueError("instruction must be non-empty")
        img = np.asarray(image, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
        with torch.no_grad(), _single_thread():
            emb = embed_instruction(self.head, self.encoder, instruction)
            x = torch.from_numpy(img.transpose(2, 0, 1).copy()).unsqueeze(0)
            out = self.backbone(x, emb.e)
            out = out.clamp(0.0, 1.0)
        return out.squeeze(0).numpy().transpose(1, 2, 0)


def decode_image_bytes(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        im.load()
        if im.mode != "RGB":
            im = im.convert("RGB")
        return (np.asarray(im, dtype=np.float32) / 255.0)


def encode_png(img: np.ndarray) -> bytes:
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


def restore_image_bytes(restorer: Restorer, data: bytes,
                        instruction: str) -> tuple[bytes, str, float]:
    """Decode -> restore -> PNG-encode; returns (png, predicted_task, confidence).

    This is the single implementation behind both the CLI and the HTTP service,
    so their outputs are byte-identical.
    """
    img = decode_image_bytes(data)
    out = restorer.restore(img, instruction)
    task, confidence = restorer.predict_task(instruction)
    return encode_png(out), task.name, confidence
