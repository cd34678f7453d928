"""Guidance head: projects frozen text embeddings to the routing space and
classifies the intended degradation task."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .prompts import PromptBank
from .tasks import TaskClass, TaskSet

ZERO_NORM_EPS = 1e-12


class DegenerateEmbeddingError(ValueError):
    """Projected embedding has (near-)zero norm and cannot be normalized."""


@dataclass
class GuidanceEmbedding:
    e: torch.Tensor        # unit-norm guidance vector, dim d_v
    logits: torch.Tensor   # intent logits, dim D
    predicted_task: int


class GuidanceHead(nn.Module):
    """Linear projection W (d_t -> d_v) plus a two-layer intent MLP.

    The classifier hidden width defaults to d_v // 8, which keeps the whole
    head near the 100k-parameter budget at d_t=384, d_v=256.
    """

    def __init__(self, d_t: int = 384, d_v: int = 256, task_count: int = 7,
                 hidden: int | None = None):
        super().__init__()
        if hidden is None:
            hidden = max(d_v // 8, 2)
        self.d_t = d_t
        self.d_v = d_v
        self.task_count = task_count
        self.hidden = hidden
        self.proj = nn.Linear(d_t, d_v, bias=False)
        self.classifier = nn.Sequential(
            nn.Linear(d_v, hidden),
            nn.GELU(),
            nn.Linear(hidden, task_count),
        )

    def project(self, raw: torch.Tensor) -> torch.Tensor:
        """L2-normalized projection of raw text embeddings (last dim d_t)."""
        z = self.proj(raw)
        norm = z.norm(dim=-1, keepdim=True)
        if bool((norm < ZERO_NORM_EPS).any()):
            raise DegenerateEmbeddingError(
                f"projected embedding norm below {ZERO_NORM_EPS}; "
                "check encoder output and projection weights")
        return z / norm

    def forward(self, raw: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        e = self.project(raw)
        return e, self.classifier(e)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def config(self) -> dict:
        return {"d_t": self.d_t, "d_v": self.d_v,
                "task_count": self.task_count, "hidden": self.hidden}


def embed_instruction(head: GuidanceHead, encoder, text: str) -> GuidanceEmbedding:
    """e = norm(W * E(text)); gradients reach W and the classifier only."""
    if not text.strip():
        raise ValueError("instruction text is empty")
    raw = torch.from_numpy(np.asarray(encoder.encode(text), dtype=np.float32))
    e, logits = head(raw)
    return GuidanceEmbedding(e=e, logits=logits,
                             predicted_task=int(logits.argmax().item()))


def embed_batch(head: GuidanceHead, encoder, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
    raw = torch.from_numpy(encoder.encode_batch(texts).astype(np.float32, copy=False))
    return head(raw)


def intent_loss(logits: torch.Tensor, target: TaskClass | int) -> torch.Tensor:
    """Cross-entropy of softmax(logits) at the target class id."""
    if not torch.isfinite(logits).all():
        raise ValueError("intent logits contain non-finite values")
    target_id = target.id if isinstance(target, TaskClass) else int(target)
    if logits.dim() == 1:
        if not 0 <= target_id < logits.shape[0]:
            raise ValueError(f"target id {target_id} out of range for D={logits.shape[0]}")
        return F.cross_entropy(logits.unsqueeze(0),
                               torch.tensor([target_id], dtype=torch.long))
    return F.cross_entropy(logits, torch.as_tensor(target_id, dtype=torch.long))


def classify_intent(head: GuidanceHead, encoder, text: str,
                    task_set: TaskSet) -> tuple[TaskClass, float]:
    with torch.no_grad():
        emb = embed_instruction(head, encoder, text)
        probs = F.softmax(emb.logits, dim=-1)
    idx = int(probs.argmax().item())
    return task_set.tasks[idx], float(probs[idx].item())


def train_guidance_head(head: GuidanceHead, encoder, bank: PromptBank,
                        task_set: TaskSet, epochs: int = 20, batch_size: int = 256,
                        lr: float = 1e-3, holdout_fraction: float = 0.1,
                        seed: int = 0) -> dict:
    """Fit W and the classifier with cross-entropy on (prompt, task) pairs.

    Uses the bank's train split, holding out a fraction for accuracy reporting.
    Returns {"train_size", "holdout_size", "holdout_accuracy", "epoch_losses"}.
    """
    records = [r for r in bank.filter(split="train") if r.task in task_set]
    if not records:
        raise ValueError("prompt bank has no train records for the task set")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_hold = int(round(len(records) * holdout_fraction))
    hold_idx = set(order[:n_hold].tolist())
    train_recs = [records[i] for i in range(len(records)) if i not in hold_idx]
    hold_recs = [records[i] for i in range(len(records)) if i in hold_idx]

    raw_train = torch.from_numpy(encoder.encode_batch([r.text for r in train_recs]))
    y_train = torch.tensor([task_set.by_name(r.task).id for r in train_recs], dtype=torch.long)

    opt = torch.optim.Adam(head.parameters(), lr=lr)
    torch_rng = torch.Generator().manual_seed(seed)
    epoch_losses = []
    for _ in range(epochs):
        perm = torch.randperm(len(train_recs), generator=torch_rng)
        total, count = 0.0, 0
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            e, logits = head(raw_train[idx])
            loss = F.cross_entropy(logits, y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.item()) * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)

    correct = 0
    if hold_recs:
        with torch.no_grad():
            raw_hold = torch.from_numpy(encoder.encode_batch([r.text for r in hold_recs]))
            _, logits = head(raw_hold)
            pred = logits.argmax(dim=-1)
            y_hold = torch.tensor([task_set.by_name(r.task).id for r in hold_recs])
            correct = int((pred == y_hold).sum().item())
    return {
        "train_size": len(train_recs),
        "holdout_size": len(hold_recs),
        "holdout_accuracy": correct / len(hold_recs) if hold_recs else float("nan"),
        "epoch_losses": epoch_losses,
    }


def export_embeddings(head: GuidanceHead, encoder, bank: PromptBank,
                      task_set: TaskSet, path) -> int:
    """Write one row per prompt: "task_id v1 ... v_{d_v}". Returns the row count."""
    records = [r for r in bank.records if r.task in task_set]
    if not records:
        raise ValueError("prompt bank holds no records for the task set")
    with torch.no_grad(), open(path, "w", encoding="utf-8") as f:
        for r in records:
            e, _ = head(torch.from_numpy(np.asarray(encoder.encode(r.text))))
            task_id = task_set.by_name(r.task).id
            values = " ".join(f"{v:.8e}" for v in e.tolist())
            f.write(f"{task_id} {values}\n")
    return len(records)
