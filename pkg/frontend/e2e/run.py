#!/usr/bin/env python3
"""End-to-end driver for the studio: trains (or reuses) a toy checkpoint,
starts the inference service, produces the CLI reference image, then runs the
vitest live suite against the running service.

Usage: python3 frontend/e2e/run.py [--checkpoint PATH] [--port 8787]
"""
import argparse
import json
import os
import shutil
import subprocess
import sys
import tempfile
import time
import urllib.request
from pathlib import Path

FRONTEND = Path(__file__).resolve().parent.parent
REPO = FRONTEND.parent
ARTIFACTS = REPO / "artifacts"

PROMPT_1 = "Remove the noise from my picture"
PROMPT_2 = "Clear the rain from my picture"


def ensure_checkpoint(path_arg: str | None, workdir: Path) -> tuple[Path, Path]:
    """Returns (checkpoint, input image). Prefers the acceptance-run artifact."""
    if path_arg:
        ckpt = Path(path_arg)
        image = ARTIFACTS / "p4_data" / "rain_r0.png"
    else:
        ckpt = ARTIFACTS / "toy_p4.pt"
        image = ARTIFACTS / "p4_data" / "rain_r0.png"
    if ckpt.exists() and image.exists():
        return ckpt, image

    print("no toy checkpoint found; training a short fallback (~1 min)")
    sys.path.insert(0, str(REPO / "tests"))
    from conftest import build_toy_manifest  # noqa: E402

    from textrestore.backbone import ModelConfig
    from textrestore.prompts import expand_prompts, load_seed_prompts
    from textrestore.trainer import TrainConfig, fit

    data = workdir / "data"
    data.mkdir(parents=True)
    manifest = build_toy_manifest(data)
    bank = expand_prompts(load_seed_prompts(), 400, rng_seed=3)
    config = TrainConfig(
        batch_size=4, epochs=300, task_set="3D", seed=1, crop_size=64,
        augment=False, val_per_task=0,
        model=ModelConfig(base_width=8, encoder_depths=[1, 1, 1, 1],
                          decoder_depths=[1, 1, 1, 1], middle_blocks=1,
                          d_v=256, task_count=3))
    fit(config, manifest, bank, workdir / "run")
    return workdir / "run" / "checkpoint_final.pt", data / "rain_r0.png"


def wait_health(url: str, timeout: float = 30.0) -> dict:
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            with urllib.request.urlopen(f"{url}/health", timeout=2) as r:
                return json.load(r)
        except Exception:
            time.sleep(0.3)
    raise RuntimeError(f"service at {url} did not become healthy")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint")
    parser.add_argument("--port", type=int, default=8787)
    args = parser.parse_args()

    workdir = Path(tempfile.mkdtemp(prefix="studio_e2e_"))
    try:
        ckpt, image = ensure_checkpoint(args.checkpoint, workdir)
        print(f"checkpoint: {ckpt}\ninput image: {image}")

        cli_out = workdir / "cli_step2.png"
        subprocess.run(
            [sys.executable, "-m", "textrestore.cli", "restore",
             "--checkpoint", str(ckpt), "--image", str(image),
             "--chain", PROMPT_1, PROMPT_2, "--out", str(cli_out)],
            check=True, cwd=REPO)

        url = f"http://127.0.0.1:{args.port}"
        service = subprocess.Popen(
            [sys.executable, "-m", "textrestore.cli", "serve",
             "--checkpoint", str(ckpt), "--host", "127.0.0.1",
             "--port", str(args.port)],
            cwd=REPO)
        try:
            health = wait_health(url)
            print(f"service healthy: {health}")
            env = dict(os.environ,
                       STUDIO_SERVICE_URL=url,
                       STUDIO_IMAGE=str(image),
                       STUDIO_CLI_STEP2=str(cli_out))
            result = subprocess.run(["npm", "run", "e2e"], cwd=FRONTEND, env=env)
            return result.returncode
        finally:
            service.terminate()
            service.wait(timeout=10)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
