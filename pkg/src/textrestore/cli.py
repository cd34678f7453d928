"""Command-line entry points for every pipeline stage."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

CHECKPOINT_ENV = "TEXTRESTORE_CHECKPOINT"


def _add_checkpoint_flag(parser):
    default = os.environ.get(CHECKPOINT_ENV)
    parser.add_argument("--checkpoint", default=default, required=default is None,
                        help=f"checkpoint path (default: ${CHECKPOINT_ENV})")


def _cmd_generate_prompts(args) -> int:
    from .prompts import expand_prompts, load_seed_prompts, save_bank

    bank = expand_prompts(load_seed_prompts(), args.count, args.seed)
    save_bank(bank, args.out)
    print(f"wrote {len(bank)} prompts to {args.out}")
    return 0


def _cmd_build_manifest(args) -> int:
    from .degradations import DegradationSpec, scan_pairs

    spec = None
    if args.noise_sigma is not None:
        spec = DegradationSpec("gaussian_noise", sigma=args.noise_sigma)
    elif args.sr_scale is not None:
        spec = DegradationSpec("bicubic", scale=args.sr_scale)
    manifest = scan_pairs(args.root, args.task, args.clean_dir,
                          degraded_dir=args.degraded_dir, spec=spec)
    manifest.save(args.out)
    print(f"wrote {len(manifest)} records to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .degradations import load_manifest
    from .prompts import load_bank
    from .trainer import TrainConfig, fit

    config = TrainConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.bank)
    resume = None
    if args.resume:
        from .checkpoints import load_checkpoint
        resume = load_checkpoint(args.resume)
    ckpt = fit(config, manifest, bank, args.out, resume_from=resume)
    print(f"finished at step {ckpt.step}; checkpoint in {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    from .checkpoints import load_checkpoint, save_checkpoint
    from .degradations import load_manifest
    from .prompts import load_bank
    from .trainer import TrainConfig, finetune_variant, fit

    base = load_checkpoint(args.checkpoint)
    config = TrainConfig.load(args.config) if args.config else None
    warm = finetune_variant(base, args.task_set, config)
    if args.manifest:
        if config is None:
            print("error: --manifest requires --config", file=sys.stderr)
            return 2
        config.task_set = args.task_set
        manifest = load_manifest(args.manifest)
        bank = load_bank(args.bank)
        save_checkpoint(warm, Path(args.out) / "checkpoint_warmstart.pt")
        ckpt = fit(config, manifest, bank, args.out, resume_from=warm)
        print(f"finetuned to {args.task_set}; checkpoint in {args.out}")
        _ = ckpt
    else:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        save_checkpoint(warm, Path(args.out) / "checkpoint_warmstart.pt")
        print(f"wrote warm-start {args.task_set} checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .degradations import load_manifest
    from .inference import Restorer
    from .metrics import EvalProtocol, evaluate
    from .prompts import load_bank

    restorer = Restorer.from_path(args.checkpoint)
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.bank)
    protocol = EvalProtocol(repetitions=args.repetitions,
                            language_level=args.level, split=args.split,
                            seed=args.seed)
    report = evaluate(restorer, manifest, bank, protocol)
    out = Path(args.out)
    out.write_text(report.to_text(), encoding="utf-8")
    out.with_suffix(out.suffix + ".jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    print(report.to_text())
    return 0


def _cmd_restore(args) -> int:
    from .inference import Restorer, restore_image_bytes

    restorer = Restorer.from_path(args.checkpoint)
    prompts = args.chain if args.chain else [args.prompt]
    if not prompts or any(p is None or not p.strip() for p in prompts):
        print("error: need --prompt or a non-empty --chain", file=sys.stderr)
        return 2
    data = Path(args.image).read_bytes()
    for i, p in enumerate(prompts):
        data, task, conf = restore_image_bytes(restorer, data, p)
        print(f"step {i}: intent={task} confidence={conf:.4f}")
    Path(args.out).write_bytes(data)
    print(f"wrote {args.out}")
    return 0


def _cmd_export_embeddings(args) -> int:
    from .checkpoints import build_encoder_for, load_checkpoint
    from .guidance import export_embeddings
    from .prompts import load_bank

    ckpt = load_checkpoint(args.checkpoint)
    encoder = build_encoder_for(ckpt)
    bank = load_bank(args.bank)
    n = export_embeddings(ckpt.head, encoder, bank, ckpt.task_set, args.out)
    print(f"wrote {n} embedding rows to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .inference import Restorer
    from .service import create_app

    restorer = Restorer.from_path(args.checkpoint)
    app = create_app(restorer, max_side=args.max_side, workers=args.workers)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textrestore",
        description="Instruction-guided all-in-one image restoration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-prompts", help="expand the seed prompts into a bank file")
    p.add_argument("--count", type=int, default=10500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_prompts)

    p = sub.add_parser("build-manifest", help="scan image directories into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--degraded-dir")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--sr-scale", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_manifest)

    p = sub.add_parser("train", help="train from a config, manifest, and prompt bank")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="expand a checkpoint to a larger task set")
    _add_checkpoint_flag(p)
    p.add_argument("--task-set", required=True, choices=["3D", "5D", "6D", "7D"])
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--bank")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("eval", help="run the repeated-prompt evaluation protocol")
    _add_checkpoint_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--level", default="basic_precise")
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("restore", help="restore one image, optionally chaining prompts")
    _add_checkpoint_flag(p)
    p.add_argument("--image", required=True)
    p.add_argument("--prompt")
    p.add_argument("--chain", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_restore)

    p = sub.add_parser("export-embeddings", help="dump guidance embeddings for a bank")
    _add_checkpoint_flag(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_embeddings)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    _add_checkpoint_flag(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--max-side", type=int, default=2048)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
