"""Image quality metrics (PSNR, SSIM, CIELAB delta-E) and the repeated-prompt
evaluation protocol."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .degradations import DatasetManifest, load_pair
from .prompts import PromptBank, sample_prompt

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# sRGB -> XYZ matrix (IEC 61966-2-1); the D65 white point uses the matrix row
# sums so that pure white lands exactly on L*=100, a*=b*=0.
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = _SRGB_TO_XYZ.sum(axis=1)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("metric inputs contain non-finite values")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE) over all pixels and channels; inf when a == b."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def to_luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    raise ValueError(f"expected HxW or HxWx3 image, got shape {img.shape}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on luminance; Gaussian 11x11 sigma=1.5 window,
    C1=(0.01)^2, C2=(0.03)^2 at max 1.0, valid windows only."""
    a, b = _check_pair(a, b)
    x = to_luminance(a)
    y = to_luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = gaussian_window()
    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    xx = convolve2d(x * x, w, mode="valid") - mu_x ** 2
    yy = convolve2d(y * y, w, mode="valid") - mu_y ** 2
    xy = convolve2d(x * y, w, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2)
    return float(np.mean(num / den))


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB in [0,1] -> CIELAB (D65), vectorized over leading dims."""
    c = np.asarray(img, dtype=np.float64)
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _WHITE_D65
    delta = 6.0 / 29.0
    f = np.where(t > delta ** 3, np.cbrt(t), t / (3.0 * delta ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e_ab(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-pixel Euclidean distance in CIELAB."""
    a, b = _check_pair(a, b)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected HxWx3 sRGB images, got shape {a.shape}")
    clipped = np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)
    if not (np.array_equal(clipped[0], a) and np.array_equal(clipped[1], b)):
        warnings.warn("delta_e_ab inputs outside [0,1] were clipped")
    dist = np.linalg.norm(srgb_to_lab(clipped[0]) - srgb_to_lab(clipped[1]), axis=-1)
    return float(np.mean(dist))


# ---------------------------------------------------------------------------
# Evaluation protocol: repeat each test set R times with freshly sampled prompts.
# ---------------------------------------------------------------------------

@dataclass
class EvalProtocol:
    repetitions: int = 10
    language_level: str | None = "basic_precise"
    split: str = "test"
    seed: int = 0
    compute_delta_e: bool = True


@dataclass
class TaskMetrics:
    task: str
    n_images: int
    n_repetitions: int
    psnr_values: list[float] = field(default_factory=list)  # finite values only
    n_infinite_psnr: int = 0
    ssim_values: list[float] = field(default_factory=list)
    delta_e_values: list[float] = field(default_factory=list)
    per_repetition_psnr: list[float] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_values)) if self.psnr_values else math.nan

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else math.nan

    @property
    def delta_e_mean(self) -> float:
        return float(np.mean(self.delta_e_values)) if self.delta_e_values else math.nan


@dataclass
class MetricReport:
    protocol: EvalProtocol
    per_task: dict[str, TaskMetrics]

    @property
    def overall_psnr(self) -> float:
        vals = [v for t in self.per_task.values() for v in t.psnr_values]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def overall_ssim(self) -> float:
        vals = [v for t in self.per_task.values() for v in t.ssim_values]
        return float(np.mean(vals)) if vals else math.nan

    def to_text(self) -> str:
        lines = [
            "# evaluation report",
            f"repetitions: {self.protocol.repetitions}",
            f"language_level: {self.protocol.language_level}",
            f"seed: {self.protocol.seed}",
            "",
            f"{'task':<18}{'images':>7}{'reps':>6}{'PSNR':>9}{'SSIM':>8}{'dE_ab':>8}{'inf':>5}",
        ]
        for task in sorted(self.per_task):
            t = self.per_task[task]
            de = f"{t.delta_e_mean:8.4f}" if t.delta_e_values else "       -"
            lines.append(
                f"{task:<18}{t.n_images:>7}{t.n_repetitions:>6}"
                f"{t.psnr_mean:9.4f}{t.ssim_mean:8.4f}{de}{t.n_infinite_psnr:>5}")
        lines.append("")
        lines.append(f"overall PSNR: {self.overall_psnr:.4f}  SSIM: {self.overall_ssim:.4f}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        rows = []
        for task in sorted(self.per_task):
            t = self.per_task[task]
            rows.append(json.dumps({
                "task": task, "n_images": t.n_images, "n_repetitions": t.n_repetitions,
                "psnr_mean": round(t.psnr_mean, 6), "ssim_mean": round(t.ssim_mean, 6),
                "delta_e_mean": round(t.delta_e_mean, 6) if t.delta_e_values else None,
                "n_infinite_psnr": t.n_infinite_psnr,
                "per_repetition_psnr": [round(v, 6) for v in t.per_repetition_psnr],
            }, ensure_ascii=False))
        rows.append(json.dumps({
            "task": "__overall__",
            "psnr_mean": round(self.overall_psnr, 6),
            "ssim_mean": round(self.overall_ssim, 6),
        }, ensure_ascii=False))
        return "\n".join(rows) + "\n"


def _prompt_rng(seed: int, clean_path: str, repetition: int) -> np.random.Generator:
    # keyed on the record identity, not its position, so image order is irrelevant
    digest = hashlib.blake2b(clean_path.encode("utf-8"), digest_size=4).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little"), repetition])


def evaluate(restorer, manifest: DatasetManifest, bank: PromptBank,
             protocol: EvalProtocol | None = None) -> MetricReport:
    """Score the restorer on every manifest record, ``repetitions`` times with
    independently sampled prompts; deterministic for a fixed protocol seed."""
    protocol = protocol or EvalProtocol()
    level = protocol.language_level
    for task in sorted(manifest.tasks()):
        if not bank.filter(task=task, split=protocol.split, language_level=level):
            raise ValueError(
                f"no prompts for task {task!r} at level {level!r} in split {protocol.split!r}")

    per_task: dict[str, TaskMetrics] = {}
    for task in sorted(manifest.tasks()):
        records = manifest.by_task(task)
        tm = TaskMetrics(task=task, n_images=len(records),
                         n_repetitions=protocol.repetitions)
        for rep in range(protocol.repetitions):
            rep_psnrs = []
            for rec in records:
                rng = _prompt_rng(protocol.seed, rec.clean_path, rep)
                degraded, clean = load_pair(rec, manifest.root, rng)
                prompt = sample_prompt(bank, task, protocol.split, rng,
                                       language_level=level)
                restored = restorer.restore(degraded, prompt.text)
                p = psnr(restored, clean)
                if math.isinf(p):
                    tm.n_infinite_psnr += 1
                else:
                    tm.psnr_values.append(p)
                    rep_psnrs.append(p)
                tm.ssim_values.append(ssim(restored, clean))
                if protocol.compute_delta_e:
                    tm.delta_e_values.append(delta_e_ab(restored, clean))
            tm.per_repetition_psnr.append(
                float(np.mean(rep_psnrs)) if rep_psnrs else math.nan)
        per_task[task] = tm
    return MetricReport(protocol=protocol, per_task=per_task)


def chain_restore(restorer, image: np.ndarray, prompts: list[str]) -> list[np.ndarray]:
    """Apply the restorer sequentially; returns every intermediate output."""
    if not prompts:
        raise ValueError("chain needs at least one prompt")
    for i, p in enumerate(prompts):
        if not p or not p.strip():
            raise ValueError(f"chain step {i}: empty instruction")
    outputs = []
    current = image
    for i, p in enumerate(prompts):
        try:
            current = restorer.restore(current, p)
        except Exception as e:
            raise RuntimeError(f"chain step {i} failed: {e}") from e
        outputs.append(current)
    return outputs
