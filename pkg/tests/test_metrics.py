import math

import numpy as np
import pytest

from textrestore.metrics import (SSIM_C1, SSIM_C2, EvalProtocol, chain_restore,
                                 delta_e_ab, evaluate, gaussian_window, psnr,
                                 srgb_to_lab, ssim, to_luminance)
from tests.conftest import smooth_image


# ---------------------------------------------------------------------------
# Brute-force oracles: naive loops, independent of the library implementations.
# ---------------------------------------------------------------------------

def psnr_oracle(a, b):
    total, count = 0.0, 0
    for idx in np.ndindex(a.shape):
        total += (float(a[idx]) - float(b[idx])) ** 2
        count += 1
    mse = total / count
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def ssim_oracle(a, b):
    x = to_luminance(np.asarray(a, dtype=np.float64))
    y = to_luminance(np.asarray(b, dtype=np.float64))
    w = gaussian_window()
    h, wd = x.shape
    values = []
    for i in range(h - 10):
        for j in range(wd - 10):
            px = x[i:i + 11, j:j + 11]
            py = y[i:i + 11, j:j + 11]
            mx = float((w * px).sum())
            my = float((w * py).sum())
            vx = float((w * px * px).sum()) - mx * mx
            vy = float((w * py * py).sum()) - my * my
            cov = float((w * px * py).sum()) - mx * my
            values.append(((2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2))
                          / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)))
    return float(np.mean(values))


def _srgb_scalar_to_lab(r, g, b):
    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl
    # white point = matrix row sums (pure white -> L*=100 exactly)
    xn = 0.4124564 + 0.3575761 + 0.1804375
    yn = 0.2126729 + 0.7151522 + 0.0721750
    zn = 0.0193339 + 0.1191920 + 0.9503041

    def f(t):
        d = 6.0 / 29.0
        return t ** (1.0 / 3.0) if t > d ** 3 else t / (3 * d * d) + 4.0 / 29.0

    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def delta_e_oracle(a, b):
    total, count = 0.0, 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            la = _srgb_scalar_to_lab(*(float(v) for v in a[i, j]))
            lb = _srgb_scalar_to_lab(*(float(v) for v in b[i, j]))
            total += math.sqrt(sum((x - y) ** 2 for x, y in zip(la, lb)))
            count += 1
    return total / count


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

def test_psnr_known_value():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_identical_is_infinite():
    a = smooth_image(0, 16)
    assert math.isinf(psnr(a, a))


def test_psnr_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)


def test_psnr_symmetry_and_errors():
    rng = np.random.default_rng(2)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, b[:4])


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def test_ssim_self_is_one():
    a = smooth_image(3, 16)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(3):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)


def test_ssim_inverted_is_low():
    rng = np.random.default_rng(6)
    a = rng.random((16, 16))
    value = ssim(a, 1.0 - a)
    assert value == pytest.approx(ssim_oracle(a, 1.0 - a), abs=1e-9)
    assert value < 0.3


def test_ssim_constant_pair_closed_form():
    mu1, mu2 = 0.4, 0.5
    a = np.full((16, 16), mu1)
    b = np.full((16, 16), mu2)
    expected = (2 * mu1 * mu2 + SSIM_C1) / (mu1 ** 2 + mu2 ** 2 + SSIM_C1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_window_too_small():
    a = np.zeros((8, 8))
    with pytest.raises(ValueError):
        ssim(a, a)


# ---------------------------------------------------------------------------
# Delta E
# ---------------------------------------------------------------------------

def test_delta_e_self_zero():
    a = smooth_image(7, 8)
    assert delta_e_ab(a, a) == 0.0


def test_delta_e_white_vs_black():
    white = np.ones((4, 4, 3))
    black = np.zeros((4, 4, 3))
    assert delta_e_ab(white, black) == pytest.approx(100.0, abs=1e-6)
    lab = srgb_to_lab(np.ones((1, 1, 3)))
    assert lab[0, 0, 0] == pytest.approx(100.0, abs=1e-6)
    assert abs(lab[0, 0, 1]) < 1e-6 and abs(lab[0, 0, 2]) < 1e-6


def test_delta_e_matches_oracle():
    rng = np.random.default_rng(8)
    for _ in range(3):
        a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        assert delta_e_ab(a, b) == pytest.approx(delta_e_oracle(a, b), abs=1e-6)


def test_delta_e_clips_with_warning():
    a = np.full((2, 2, 3), 1.2)
    b = np.zeros((2, 2, 3))
    with pytest.warns(UserWarning):
        val = delta_e_ab(a, b)
    assert val == pytest.approx(100.0, abs=1e-6)


# ---------------------------------------------------------------------------
# Evaluation protocol on a pass-through restorer
# ---------------------------------------------------------------------------

class PassThroughRestorer:
    def restore(self, image, instruction):
        assert instruction.strip()
        return np.asarray(image, dtype=np.float32)


def test_evaluate_identity_baseline(toy_manifest, small_bank):
    protocol = EvalProtocol(repetitions=1, language_level=None, split="train", seed=0)
    report = evaluate(PassThroughRestorer(), toy_manifest, small_bank, protocol)
    assert set(report.per_task) == {"denoising", "deraining"}
    for task, tm in report.per_task.items():
        assert tm.n_images == 2 and tm.n_repetitions == 1
        assert math.isfinite(tm.psnr_mean)
        # pass-through scores exactly the degraded-vs-clean baseline
        from textrestore.degradations import load_pair
        from textrestore.metrics import _prompt_rng
        expected = []
        for rec in toy_manifest.by_task(task):
            rng = _prompt_rng(0, rec.clean_path, 0)
            degraded, clean = load_pair(rec, toy_manifest.root, rng)
            expected.append(psnr(degraded, clean))
        assert tm.psnr_mean == pytest.approx(float(np.mean(expected)), abs=1e-9)


def test_evaluate_untrained_model_scores_degraded_baseline(toy_manifest, small_bank):
    # the freshly built network is the identity map, so evaluating it equals
    # scoring the degraded inputs directly
    import torch

    from textrestore.backbone import ModelConfig, RoutedUNet
    from textrestore.checkpoints import Checkpoint
    from textrestore.guidance import GuidanceHead
    from textrestore.inference import Restorer
    from textrestore.tasks import TaskSet

    torch.manual_seed(0)
    ckpt = Checkpoint(
        backbone=RoutedUNet(ModelConfig.toy(base_width=4, d_v=16, task_count=3)),
        head=GuidanceHead(d_t=64, d_v=16, task_count=3),
        encoder_spec={"kind": "hashing", "d_t": 64, "vocab_slots": 512, "seed": 0},
        task_set=TaskSet("3D"))
    protocol = EvalProtocol(repetitions=1, language_level=None, split="train", seed=0)
    got = evaluate(Restorer(ckpt), toy_manifest, small_bank, protocol)
    baseline = evaluate(PassThroughRestorer(), toy_manifest, small_bank, protocol)
    for task in got.per_task:
        assert got.per_task[task].psnr_mean == pytest.approx(
            baseline.per_task[task].psnr_mean, abs=1e-9)


def test_evaluate_deterministic_and_order_invariant(toy_manifest, small_bank):
    protocol = EvalProtocol(repetitions=3, language_level=None, split="train", seed=5)
    r1 = evaluate(PassThroughRestorer(), toy_manifest, small_bank, protocol)
    r2 = evaluate(PassThroughRestorer(), toy_manifest, small_bank, protocol)
    assert r1.to_jsonl() == r2.to_jsonl()
    assert r1.to_text() == r2.to_text()

    from textrestore.degradations import DatasetManifest
    shuffled = DatasetManifest(list(reversed(toy_manifest.records)), toy_manifest.root)
    r3 = evaluate(PassThroughRestorer(), shuffled, small_bank, protocol)
    for task in r1.per_task:
        assert r3.per_task[task].psnr_mean == pytest.approx(
            r1.per_task[task].psnr_mean, abs=1e-12)


def test_evaluate_missing_level_errors(toy_manifest, small_bank):
    protocol = EvalProtocol(repetitions=1, language_level="real_user", split="train")
    with pytest.raises(ValueError):
        evaluate(PassThroughRestorer(), toy_manifest, small_bank, protocol)


def test_chain_restore_composition():
    class PlusRestorer:
        def restore(self, image, instruction):
            return np.asarray(image) + (0.1 if "noise" in instruction else 0.01)

    r = PlusRestorer()
    x = np.zeros((4, 4, 3))
    outs = chain_restore(r, x, ["remove noise", "fix blur"])
    assert len(outs) == 2
    assert outs[0] == pytest.approx(x + 0.1)
    assert outs[1] == pytest.approx(x + 0.11)
    single = chain_restore(r, x, ["remove noise"])
    assert single[0] == pytest.approx(outs[0])


def test_chain_restore_rejects_blank_prompts():
    with pytest.raises(ValueError):
        chain_restore(PassThroughRestorer(), np.zeros((4, 4, 3)), ["ok", "   "])
    with pytest.raises(ValueError):
        chain_restore(PassThroughRestorer(), np.zeros((4, 4, 3)), [])


def test_chain_restore_error_carries_index():
    class FailingRestorer:
        def __init__(self):
            self.calls = 0

        def restore(self, image, instruction):
            self.calls += 1
            if self.calls == 2:
                raise RuntimeError("boom")
            return image

    with pytest.raises(RuntimeError) as exc:
        chain_restore(FailingRestorer(), np.zeros((4, 4, 3)), ["a", "b", "c"])
    assert "step 1" in str(exc.value)
