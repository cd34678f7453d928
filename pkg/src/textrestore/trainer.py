"""Joint training of the backbone and guidance head: L = L1 + CE, AdamW with
cosine annealing, deterministic data order, exact checkpoint resume."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import ModelConfig, RoutedUNet
from .checkpoints import Checkpoint, save_checkpoint
from .degradations import DatasetManifest, TrainSample, load_pair, make_train_sample
from .encoders import build_encoder
from .guidance import GuidanceHead, embed_batch
from .metrics import psnr
from .prompts import PromptBank, sample_prompt
from .tasks import TaskSet


class ConfigurationError(Exception):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 5e-4
    epochs: int = 500
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.9)
    eps: float = 1e-8
    task_set: str = "5D"
    seed: int = 0
    crop_size: int = 256
    augment: bool = True
    grad_clip: float | None = None
    max_steps: int | None = None          # early stop; the LR schedule ignores it
    val_per_task: int = 16
    checkpoint_every_epochs: int = 0      # 0 = final checkpoint only
    encoder: dict = field(default_factory=lambda: {
        "kind": "hashing", "d_t": 384, "vocab_slots": 4096, "seed": 0})
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def loss_terms(restored: torch.Tensor, clean: torch.Tensor,
               logits: torch.Tensor, target_ids: torch.Tensor):
    """(total, l1, lce) with total = l1 + lce; raises on shape or finiteness."""
    if restored.shape != clean.shape:
        raise ValueError(f"shape mismatch: {tuple(restored.shape)} vs {tuple(clean.shape)}")
    l1 = (restored - clean).abs().mean()
    lce = F.cross_entropy(logits, target_ids)
    total = l1 + lce
    if not torch.isfinite(total):
        raise FloatingPointError(
            f"non-finite loss: l1={l1.detach().item()}, lce={lce.detach().item()}")
    return total, l1, lce


@dataclass
class TrainState:
    config: TrainConfig
    task_set: TaskSet
    encoder: object
    backbone: RoutedUNet
    head: GuidanceHead
    optimizer: torch.optim.Optimizer
    scheduler: torch.optim.lr_scheduler.LRScheduler
    step: int = 0
    epoch: int = 0

    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            backbone=self.backbone, head=self.head,
            encoder_spec=self.encoder.spec(), task_set=self.task_set,
            step=self.step, epoch=self.epoch,
            train_config=self.config.to_dict(),
            optimizer_state=self.optimizer.state_dict(),
            scheduler_state=self.scheduler.state_dict(),
            torch_rng_state=torch.get_rng_state(),
        )


def build_state(config: TrainConfig, total_steps: int,
                resume_from: Checkpoint | None = None) -> TrainState:
    task_set = TaskSet(config.task_set)
    torch.manual_seed(config.seed)
    if resume_from is None:
        model_cfg = dataclasses.replace(config.model, task_count=task_set.task_count)
        backbone = RoutedUNet(model_cfg)
        encoder = build_encoder(config.encoder)
        head = GuidanceHead(d_t=encoder.d_t, d_v=model_cfg.d_v,
                            task_count=task_set.task_count)
    else:
        backbone = resume_from.backbone
        head = resume_from.head
        encoder = build_encoder(resume_from.encoder_spec)
        if resume_from.task_set.name != config.task_set:
            raise ConfigurationError(
                f"checkpoint task set {resume_from.task_set.name} != config {config.task_set}")
    params = list(backbone.parameters()) + list(head.parameters())
    optimizer = torch.optim.AdamW(params, lr=config.lr, betas=config.betas,
                                  eps=config.eps, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=total_steps, eta_min=0.0)
    state = TrainState(config=config, task_set=task_set, encoder=encoder,
                       backbone=backbone, head=head,
                       optimizer=optimizer, scheduler=scheduler)
    if resume_from is not None:
        if resume_from.optimizer_state is not None:
            optimizer.load_state_dict(resume_from.optimizer_state)
        if resume_from.scheduler_state is not None:
            scheduler.load_state_dict(resume_from.scheduler_state)
        if resume_from.torch_rng_state is not None:
            torch.set_rng_state(resume_from.torch_rng_state)
        state.step = resume_from.step
        state.epoch = resume_from.epoch
    return state


def _collate(samples: list[TrainSample], task_set: TaskSet):
    degraded = torch.stack([s.degraded for s in samples])
    clean = torch.stack([s.clean for s in samples])
    targets = torch.tensor([task_set.by_name(s.task).id for s in samples],
                           dtype=torch.long)
    texts = [s.prompt for s in samples]
    return degraded, clean, targets, texts


def train_step(state: TrainState, samples: list[TrainSample]) -> dict:
    """One optimization step; returns the logged losses."""
    degraded, clean, targets, texts = _collate(samples, state.task_set)
    e, logits = embed_batch(state.head, state.encoder, texts)
    restored = state.backbone(degraded, e)
    try:
        total, l1, lce = loss_terms(restored, clean, logits, targets)
    except FloatingPointError as err:
        raise FloatingPointError(
            f"{err} at step {state.step}; batch tasks={[s.task for s in samples]}, "
            f"prompts={texts}") from err
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    if state.config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(
            list(state.backbone.parameters()) + list(state.head.parameters()),
            state.config.grad_clip)
    state.optimizer.step()
    state.scheduler.step()
    state.step += 1
    return {"total": float(total.item()), "l1": float(l1.item()),
            "lce": float(lce.item())}


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 7919, epoch]).permutation(n)


def _sample_rng(seed: int, epoch: int, record_idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, record_idx])


def _split_validation(manifest: DatasetManifest, val_per_task: int,
                      seed: int) -> tuple[list[int], list[int]]:
    """Indices of (train, val) records; at most val_per_task (and at most half
    of a task's records) go to validation."""
    val_idx: list[int] = []
    by_task: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_task.setdefault(r.task, []).append(i)
    for task in sorted(by_task):
        idxs = by_task[task]
        n_val = min(val_per_task, len(idxs) // 2)
        if n_val > 0:
            rng = np.random.default_rng([seed, 104729, sorted(by_task).index(task)])
            chosen = rng.choice(len(idxs), size=n_val, replace=False)
            val_idx.extend(idxs[int(c)] for c in chosen)
    val_set = set(val_idx)
    train_idx = [i for i in range(len(manifest.records)) if i not in val_set]
    return train_idx, sorted(val_idx)


def _validate(state: TrainState, manifest: DatasetManifest, val_idx: list[int],
              bank: PromptBank) -> float:
    state.backbone.eval()
    psnrs = []
    with torch.no_grad():
        for i in val_idx:
            rec = manifest.records[i]
            rng = _sample_rng(state.config.seed, 999_983, i)
            degraded, clean = load_pair(rec, manifest.root, rng)
            prompt = sample_prompt(bank, rec.task, "train", rng)
            e, _ = embed_batch(state.head, state.encoder, [prompt.text])
            x = torch.from_numpy(degraded.transpose(2, 0, 1).copy()).unsqueeze(0)
            out = state.backbone(x, e).clamp(0, 1).squeeze(0).numpy().transpose(1, 2, 0)
            p = psnr(out, clean)
            if math.isfinite(p):
                psnrs.append(p)
    state.backbone.train()
    return float(np.mean(psnrs)) if psnrs else math.nan


def fit(config: TrainConfig, manifest: DatasetManifest, bank: PromptBank,
        out_dir, resume_from: Checkpoint | None = None) -> Checkpoint:
    """Run the training schedule; writes train_log.jsonl and checkpoints under
    out_dir and returns the final checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    task_set = TaskSet(config.task_set)

    extra = manifest.tasks() - set(task_set.names)
    if extra:
        raise ConfigurationError(
            f"manifest contains tasks {sorted(extra)} absent from task set {config.task_set}")
    for task in sorted(manifest.tasks()):
        if not bank.filter(task=task, split="train"):
            raise ConfigurationError(f"prompt bank has no train prompts for {task!r}")

    train_idx, val_idx = _split_validation(manifest, config.val_per_task, config.seed)
    if not train_idx:
        raise ConfigurationError("no training records after validation split")
    steps_per_epoch = math.ceil(len(train_idx) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    stop_at = min(total_steps, config.max_steps) if config.max_steps else total_steps

    state = build_state(config, total_steps, resume_from)
    state.backbone.train()
    state.head.train()

    config.save(out_dir / "train_config.json")
    log_path = out_dir / "train_log.jsonl"
    log_f = open(log_path, "a" if resume_from is not None else "w",
                 encoding="utf-8")

    try:
        while state.step < stop_at:
            epoch = state.step // steps_per_epoch
            state.epoch = epoch
            order = _epoch_order(config.seed, epoch, len(train_idx))
            start_pos = state.step % steps_per_epoch
            for pos in range(start_pos, steps_per_epoch):
                if state.step >= stop_at:
                    break
                chosen = order[pos * config.batch_size:(pos + 1) * config.batch_size]
                samples = []
                for c in chosen:
                    rec_idx = train_idx[int(c)]
                    rng = _sample_rng(config.seed, epoch, rec_idx)
                    samples.append(make_train_sample(
                        manifest.records[rec_idx], bank, rng, manifest.root,
                        crop_size=config.crop_size, augment=config.augment))
                lr_before = state.lr()
                losses = train_step(state, samples)
                line = {"step": state.step, "lr": lr_before, **losses}
                end_of_epoch = (pos == steps_per_epoch - 1) or state.step >= stop_at
                if end_of_epoch and val_idx:
                    line["val_psnr"] = _validate(state, manifest, val_idx, bank)
                log_f.write(json.dumps(line) + "\n")
            log_f.flush()
            done_epoch = state.step // steps_per_epoch
            if (config.checkpoint_every_epochs
                    and done_epoch % config.checkpoint_every_epochs == 0
                    and state.step % steps_per_epoch == 0):
                save_checkpoint(state.to_checkpoint(),
                                out_dir / f"checkpoint_epoch{done_epoch}.pt")
    finally:
        log_f.close()

    ckpt = state.to_checkpoint()
    save_checkpoint(ckpt, out_dir / "checkpoint_final.pt")
    return ckpt


def read_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def finetune_variant(checkpoint: Checkpoint, new_task_set: str,
                     config: TrainConfig | None = None) -> Checkpoint:
    """Warm-start a larger task set: classifier rows for retained classes are
    copied bit-exactly, new rows keep their fresh initialization; every other
    parameter is carried over unchanged."""
    old_set = checkpoint.task_set
    new_set = TaskSet(new_task_set)
    if new_set.task_count < old_set.task_count:
        raise ConfigurationError(
            f"cannot shrink task set {old_set.name} -> {new_set.name}")
    if old_set.names != new_set.names[:old_set.task_count]:
        raise ConfigurationError(
            f"task sets do not nest: {old_set.names} vs {new_set.names}")

    old_head = checkpoint.head
    seed = (config.seed if config is not None else 0)
    torch.manual_seed(seed)
    new_head = GuidanceHead(d_t=old_head.d_t, d_v=old_head.d_v,
                            task_count=new_set.task_count, hidden=old_head.hidden)
    with torch.no_grad():
        new_head.proj.weight.copy_(old_head.proj.weight)
        new_head.classifier[0].weight.copy_(old_head.classifier[0].weight)
        new_head.classifier[0].bias.copy_(old_head.classifier[0].bias)
        d = old_set.task_count
        new_head.classifier[2].weight[:d].copy_(old_head.classifier[2].weight)
        new_head.classifier[2].bias[:d].copy_(old_head.classifier[2].bias)

    model_cfg = dataclasses.replace(checkpoint.model_config,
                                    task_count=new_set.task_count)
    backbone = RoutedUNet(model_cfg)
    backbone.load_state_dict(checkpoint.backbone.state_dict())

    train_config = config.to_dict() if config is not None else checkpoint.train_config
    return Checkpoint(backbone=backbone, head=new_head,
                      encoder_spec=checkpoint.encoder_spec, task_set=new_set,
                      step=0, epoch=0, train_config=train_config)
