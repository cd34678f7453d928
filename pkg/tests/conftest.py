import numpy as np
import pytest

from textrestore.degradations import (DatasetManifest, DegradationSpec,
                                      ManifestRecord, save_image)
from textrestore.prompts import expand_prompts, load_seed_prompts

# filled by tests/test_acceptance.py, echoed after the test summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def smooth_image(seed: int, size: int = 64) -> np.ndarray:
    """Low-frequency synthetic RGB image in [0.05, 0.95]."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        img[..., c] = 0.35 + 0.3 * np.sin(
            2 * np.pi * (r.uniform(0.5, 2) * xx + r.uniform(0.5, 2) * yy + r.uniform()))
        for _ in range(3):
            cy, cx, rad = r.uniform(0, 1, 3)
            blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2)) / (0.02 + 0.08 * rad))
            img[..., c] += r.uniform(-0.3, 0.3) * blob
    return np.clip(img, 0.05, 0.95).astype(np.float32)


def add_rain_streaks(img: np.ndarray, seed: int, n_streaks: int = 40) -> np.ndarray:
    """Bright diagonal streaks, a stand-in for paired rainy data."""
    r = np.random.default_rng(seed)
    out = img.copy()
    size = img.shape[0]
    for _ in range(n_streaks):
        x0, y0 = r.integers(0, size, 2)
        length = int(r.integers(8, 20))
        for t in range(length):
            y, x = y0 + t, x0 + t // 3
            if y < size and x < size:
                out[y, x] = np.clip(out[y, x] + 0.45, 0, 1)
    return out.astype(np.float32)


def build_toy_manifest(root, size: int = 64) -> DatasetManifest:
    """2 denoising records (sigma 25/50) + 2 paired deraining records."""
    records = []
    for i, sigma in enumerate([25.0, 50.0]):
        clean = smooth_image(100 + i, size)
        save_image(clean, root / f"clean_n{i}.png")
        records.append(ManifestRecord(f"clean_n{i}.png", "denoising",
                                      spec=DegradationSpec("gaussian_noise", sigma=sigma)))
    for i in range(2):
        clean = smooth_image(200 + i, size)
        rainy = add_rain_streaks(clean, 300 + i)
        save_image(clean, root / f"clean_r{i}.png")
        save_image(rainy, root / f"rain_r{i}.png")
        records.append(ManifestRecord(f"clean_r{i}.png", "deraining",
                                      degraded_path=f"rain_r{i}.png"))
    return DatasetManifest(records, root)


@pytest.fixture(scope="session")
def seed_bank():
    return load_seed_prompts()


@pytest.fixture(scope="session")
def small_bank(seed_bank):
    return expand_prompts(seed_bank, 400, rng_seed=3)


@pytest.fixture(scope="session")
def full_bank(seed_bank):
    return expand_prompts(seed_bank, 10500, rng_seed=7)


@pytest.fixture()
def toy_manifest(tmp_path):
    return build_toy_manifest(tmp_path)
