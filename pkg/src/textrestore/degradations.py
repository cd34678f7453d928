"""Degradation synthesis, paired-dataset manifests, and training sample assembly."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .prompts import PromptBank, sample_prompt
from .tasks import TASK_NAMES

STANDARD_NOISE_SIGMAS = (15.0, 25.0, 50.0)
STANDARD_SR_SCALES = (2, 3, 4)


class DatasetError(Exception):
    pass


class ImageDecodeError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class ManifestParseError(DatasetError):
    pass


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Image IO: float32 HWC in [0, 1], always 3 channels.
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file missing: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode == "F":
                arr = np.asarray(im, dtype=np.float64)
            else:
                if mode not in ("RGB", "L"):
                    im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageDecodeError(f"cannot decode {path}: {e}") from e
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def save_image(arr: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


# ---------------------------------------------------------------------------
# Synthesized degradations
# ---------------------------------------------------------------------------

def add_gaussian_noise(clean: np.ndarray, sigma: float, rng) -> np.ndarray:
    """clip(clean + n, 0, 1) with n ~ Normal(0, (sigma/255)^2) i.i.d. per pixel."""
    clean = np.asarray(clean)
    if not np.isfinite(clean).all():
        raise ValueError("clean image contains non-finite values")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma and float(sigma) not in STANDARD_NOISE_SIGMAS:
        warnings.warn(f"non-standard noise sigma {sigma} (standard: {STANDARD_NOISE_SIGMAS})")
    rng = _as_rng(rng)
    noise = rng.normal(0.0, sigma / 255.0, size=clean.shape)
    return np.clip(clean.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel (Catmull-Rom at a=-0.5); zero for |x| >= 2."""
    ax = np.abs(x)
    out = np.zeros_like(ax)
    near = ax <= 1.0
    far = (ax > 1.0) & (ax < 2.0)
    out[near] = (a + 2.0) * ax[near] ** 3 - (a + 3.0) * ax[near] ** 2 + 1.0
    out[far] = a * (ax[far] ** 3 - 5.0 * ax[far] ** 2 + 8.0 * ax[far] - 4.0)
    return out


def _resample_weights(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray]:
    """(indices, weights) of shape (out_size, taps); kernel stretched by the
    scale when downsampling, out-of-range taps clamped to the edge (replication)."""
    scale = in_size / out_size
    kscale = max(scale, 1.0)
    support = 2.0 * kscale
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    lo = np.ceil(centers - support).astype(np.int64)
    taps = int(np.floor(2.0 * support)) + 2
    idx = lo[:, None] + np.arange(taps)[None, :]
    w = _cubic_kernel((centers[:, None] - idx) / kscale)
    idx = np.clip(idx, 0, in_size - 1)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def _resample_axis0(img: np.ndarray, out_size: int) -> np.ndarray:
    idx, w = _resample_weights(img.shape[0], out_size)
    out = np.zeros((out_size,) + img.shape[1:], dtype=np.float64)
    for t in range(idx.shape[1]):
        out += w[:, t].reshape(-1, *([1] * (img.ndim - 1))) * img[idx[:, t]]
    return out


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable cubic resize (a=-0.5, edge replication), float64 internally."""
    x = np.asarray(img, dtype=np.float64)
    if x.shape[0] != out_h:
        x = _resample_axis0(x, out_h)
    if x.shape[1] != out_w:
        x = np.swapaxes(_resample_axis0(np.swapaxes(x, 0, 1), out_w), 0, 1)
    return x


def bicubic_degrade(clean: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic downsample by ``scale`` then upsample back to the input size."""
    clean = np.asarray(clean)
    h, w = clean.shape[:2]
    if scale < 2 or int(scale) != scale:
        raise ValueError(f"scale must be an integer >= 2, got {scale}")
    if h < scale or w < scale:
        raise ValueError(f"image {h}x{w} smaller than scale {scale}")
    low = resize_bicubic(clean, max(1, h // scale), max(1, w // scale))
    up = resize_bicubic(low, h, w)
    return np.clip(up, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters for a synthesized degradation."""

    kind: str  # "gaussian_noise" | "bicubic"
    sigma: float | None = None
    scale: int | None = None

    def __post_init__(self):
        if self.kind == "gaussian_noise":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("gaussian_noise spec needs sigma > 0")
        elif self.kind == "bicubic":
            if self.scale is None or int(self.scale) != self.scale or self.scale < 2:
                raise ValueError("bicubic spec needs integer scale >= 2")
        else:
            raise ValueError(f"unknown degradation kind {self.kind!r}")

    def apply(self, clean: np.ndarray, rng) -> np.ndarray:
        if self.kind == "gaussian_noise":
            return add_gaussian_noise(clean, self.sigma, rng)
        return bicubic_degrade(clean, int(self.scale))

    def to_dict(self) -> dict:
        if self.kind == "gaussian_noise":
            return {"type": "gaussian_noise", "sigma": self.sigma}
        return {"type": "bicubic", "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        kind = d.get("type")
        if kind == "gaussian_noise":
            return cls("gaussian_noise", sigma=float(d["sigma"]))
        if kind == "bicubic":
            return cls("bicubic", scale=int(d["scale"]))
        raise ValueError(f"unknown degradation type {kind!r}")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    clean_path: str
    task: str
    degraded_path: str | None = None
    spec: DegradationSpec | None = None

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ManifestParseError(f"unknown task {self.task!r}")
        if (self.degraded_path is None) == (self.spec is None):
            raise ManifestParseError(
                "record needs exactly one of degraded_path or spec "
                f"(clean_path={self.clean_path!r})")

    def to_dict(self) -> dict:
        out: dict = {"clean_path": self.clean_path, "task": self.task}
        if self.degraded_path is not None:
            out["degraded_path"] = self.degraded_path
        else:
            out["spec"] = self.spec.to_dict()
        return out


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path

    def __len__(self):
        return len(self.records)

    def tasks(self) -> set[str]:
        return {r.task for r in self.records}

    def by_task(self, task: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.task == task]

    def verify_paths(self):
        for r in self.records:
            for p in (r.clean_path, r.degraded_path):
                if p is not None and not (self.root / p).exists():
                    raise FileNotFoundError(f"manifest path missing: {self.root / p}")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def load_manifest(path, root=None, verify: bool = True) -> DatasetManifest:
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    records = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestParseError(f"{path}:{i}: invalid JSON ({e})") from e
            try:
                spec = DegradationSpec.from_dict(obj["spec"]) if "spec" in obj else None
                records.append(ManifestRecord(obj["clean_path"], obj["task"],
                                              obj.get("degraded_path"), spec))
            except (KeyError, ValueError, ManifestParseError) as e:
                raise ManifestParseError(f"{path}:{i}: {e}") from e
    manifest = DatasetManifest(records, root)
    if verify:
        manifest.verify_paths()
    return manifest


def scan_pairs(root, task: str, clean_dir: str,
               degraded_dir: str | None = None,
               spec: DegradationSpec | None = None) -> DatasetManifest:
    """Build a manifest from a directory of clean images, optionally matched
    to a degraded directory by sorted filename."""
    root = Path(root)
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
    cleans = sorted(p for p in (root / clean_dir).iterdir()
                    if p.suffix.lower() in exts)
    if not cleans:
        raise DatasetError(f"no images found under {root / clean_dir}")
    records = []
    if degraded_dir is not None:
        degradeds = sorted(p for p in (root / degraded_dir).iterdir()
                           if p.suffix.lower() in exts)
        if len(degradeds) != len(cleans):
            raise DatasetError(
                f"{len(cleans)} clean vs {len(degradeds)} degraded images")
        for c, d in zip(cleans, degradeds):
            records.append(ManifestRecord(str(c.relative_to(root)), task,
                                          degraded_path=str(d.relative_to(root))))
    else:
        if spec is None:
            raise DatasetError("need either degraded_dir or a degradation spec")
        for c in cleans:
            records.append(ManifestRecord(str(c.relative_to(root)), task, spec=spec))
    return DatasetManifest(records, root)


def balance_tasks(manifests: list[DatasetManifest], caps: dict[str, int] | None,
                  seed: int = 0) -> DatasetManifest:
    """Concatenate manifests, subsampling any task above its cap (seeded)."""
    if not manifests:
        raise DatasetError("need at least one manifest")
    caps = caps or {}
    root = manifests[0].root
    for m in manifests[1:]:
        if m.root != root:
            raise DatasetError(f"manifest roots differ: {root} vs {m.root}")
    merged = [r for m in manifests for r in m.records]
    by_task: dict[str, list[ManifestRecord]] = {}
    for r in merged:
        by_task.setdefault(r.task, []).append(r)
    out: list[ManifestRecord] = []
    for task in sorted(by_task):
        recs = by_task[task]
        cap = caps.get(task)
        if cap is not None and cap < len(recs):
            rng = np.random.default_rng([seed, TASK_NAMES.index(task)])
            keep = np.sort(rng.choice(len(recs), size=cap, replace=False))
            recs = [recs[int(i)] for i in keep]
        elif cap is not None and cap > len(recs):
            warnings.warn(f"cap {cap} for {task!r} exceeds available {len(recs)}; using all")
        out.extend(recs)
    return DatasetManifest(out, root)


# ---------------------------------------------------------------------------
# Training samples
# ---------------------------------------------------------------------------

@dataclass
class TrainSample:
    degraded: torch.Tensor  # (3, H, W) float32 in [0, 1]
    clean: torch.Tensor     # (3, H, W) float32 in [0, 1]
    task: str
    prompt: str


def load_pair(record: ManifestRecord, root, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Load (degraded, clean) as float32 [0,1] HWC; synthesizes when spec'd."""
    root = Path(root)
    clean = load_image(root / record.clean_path)
    if record.degraded_path is not None:
        degraded = load_image(root / record.degraded_path)
        if degraded.shape != clean.shape:
            raise DimensionMismatchError(
                f"degraded {degraded.shape} vs clean {clean.shape} "
                f"for {record.clean_path!r}")
    else:
        degraded = record.spec.apply(clean, _as_rng(rng))
    return degraded, clean


def reflect_pad_to(img: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    """Reflect-pad (repeatedly, for tiny images) until at least min_h x min_w."""
    while img.shape[0] < min_h or img.shape[1] < min_w:
        ph = min(max(min_h - img.shape[0], 0), img.shape[0] - 1) if img.shape[0] > 1 else min_h - img.shape[0]
        pw = min(max(min_w - img.shape[1], 0), img.shape[1] - 1) if img.shape[1] > 1 else min_w - img.shape[1]
        mode = "reflect" if img.shape[0] > 1 and img.shape[1] > 1 else "edge"
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode)
    return img


def _to_chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def make_train_sample(record: ManifestRecord, bank: PromptBank, rng, root,
                      crop_size: int = 256, augment: bool = True) -> TrainSample:
    """One (degraded, clean, task, prompt) tuple: joint random crop, joint
    random flips, and a train-split prompt for the record's task."""
    rng = _as_rng(rng)
    degraded, clean = load_pair(record, root, rng)
    if clean.shape[0] < crop_size or clean.shape[1] < crop_size:
        warnings.warn(
            f"image {clean.shape[:2]} smaller than crop {crop_size}; reflect-padding")
        clean = reflect_pad_to(clean, crop_size, crop_size)
        degraded = reflect_pad_to(degraded, crop_size, crop_size)
    top = int(rng.integers(clean.shape[0] - crop_size + 1))
    left = int(rng.integers(clean.shape[1] - crop_size + 1))
    clean = clean[top:top + crop_size, left:left + crop_size]
    degraded = degraded[top:top + crop_size, left:left + crop_size]
    if augment:
        if int(rng.integers(2)):
            clean, degraded = clean[:, ::-1], degraded[:, ::-1]
        if int(rng.integers(2)):
            clean, degraded = clean[::-1], degraded[::-1]
    prompt = sample_prompt(bank, record.task, "train", rng)
    return TrainSample(degraded=_to_chw(degraded), clean=_to_chw(clean),
                       task=record.task, prompt=prompt.text)
