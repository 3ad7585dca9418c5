"""Command-line surface for the full pipeline.

Subcommands: synth, convert, pretrain, finetune, evaluate, monitor, cam.
Training and evaluation commands read one YAML run config (defaults are
the desk profile); any ``--section.key value`` pair overrides a config
entry, and the FRINGE_SEED environment variable overrides the top-level
seed. Every invocation gets its own run directory (timestamp + seed)
under ``<workdir>/runs`` containing the resolved config snapshot.

Exit codes: 0 success, 1 I/O error, 2 validation or configuration error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from pathlib import Path

import yaml

from .config import RunConfig, apply_override, config_from_dict, save_config
from .data.manifest import load_manifest
from .data.patches import InterferogramPatch, image_to_phase, read_patch_file, render_channels, write_patch_file
from .data.synthetic import SyntheticFringeSpec, write_synthetic_dataset
from .encoder import cam as compute_cam, predict_labels
from .errors import ConfigurationError, ValidationError
from .evaluate import (
    evaluate,
    evaluate_sequence,
    load_eval_model,
    save_cam_png,
    write_report,
    write_sequence_report,
)
from .train import finetune, pretrain, resume

SEED_ENV_VAR = "FRINGE_SEED"


def _parse_overrides(extras: list[str]) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise ConfigurationError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigurationError(f"override {token!r} is missing a value")
            value = extras[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def _resolve_config(config_path: str | Path | None, overrides: list[tuple[str, str]]) -> RunConfig:
    raw: dict = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigurationError(f"{config_path}: invalid YAML ({exc})") from exc
    for key, value in overrides:
        apply_override(raw, key, value)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    return config_from_dict(raw)


def _make_run_dir(workdir: str, command: str, seed: int) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run_dir = Path(workdir) / "runs" / f"{command}-{stamp}-seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def _under_workdir(workdir: str, path: str | None) -> Path | None:
    """Relative paths resolve against --workdir; absolute paths pass through."""
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _start_run(args, overrides, command: str) -> tuple[RunConfig, Path]:
    config_path = _under_workdir(args.workdir, args.config)
    cfg = _resolve_config(config_path, overrides)
    run_dir = _make_run_dir(args.workdir, command, cfg.seed)
    save_config(cfg, run_dir / "config.yaml")
    return cfg, run_dir


def cmd_synth(args, overrides) -> int:
    if overrides:
        raise ConfigurationError("synth takes no config overrides")
    common = dict(
        side=args.side,
        deformation_fraction=args.fraction,
        fringe_cycles=(args.cycles_lo, args.cycles_hi),
        noise_sigma=args.noise_sigma,
    )
    train_spec = SyntheticFringeSpec(n_samples=args.n, seed=args.seed, **common)
    test_spec = None
    if args.n_test:
        test_spec = SyntheticFringeSpec(n_samples=args.n_test, seed=args.seed + 1, **common)
    manifest_path = write_synthetic_dataset(args.out, train_spec, test_spec)
    manifest = load_manifest(manifest_path)
    stats = manifest.stats
    print(
        f"wrote {len(manifest.entries)} patches to {args.out} "
        f"({stats.n_positive} positive / {stats.n_negative} negative / {stats.n_unlabeled} unlabeled)"
    )
    return 0


def cmd_convert(args, overrides) -> int:
    if overrides:
        raise ConfigurationError("convert takes no config overrides")
    phase = image_to_phase(args.input)
    write_patch_file(args.out, phase)
    print(f"wrote {args.out} (side {phase.shape[0]})")
    return 0


def cmd_pretrain(args, overrides) -> int:
    cfg, run_dir = _start_run(args, overrides, "pretrain")
    manifest = load_manifest(_under_workdir(args.workdir, args.manifest))
    if args.resume:
        ckpt_path = resume(_under_workdir(args.workdir, args.resume), manifest, cfg.pretrain, run_dir)
    else:
        ckpt_path = pretrain(
            manifest, cfg.encoder_config(), cfg.augment, cfg.loss, cfg.pretrain, run_dir
        )
    print(f"pretrained checkpoint: {ckpt_path}")
    return 0


def cmd_finetune(args, overrides) -> int:
    cfg, run_dir = _start_run(args, overrides, "finetune")
    manifest = load_manifest(_under_workdir(args.workdir, args.manifest))
    if args.resume:
        ckpt_path = resume(_under_workdir(args.workdir, args.resume), manifest, cfg.finetune, run_dir)
    else:
        ckpt_path = finetune(
            _under_workdir(args.workdir, args.checkpoint), manifest, cfg.finetune, run_dir
        )
    print(f"finetuned checkpoint: {ckpt_path}")
    return 0


def cmd_evaluate(args, overrides) -> int:
    cfg, run_dir = _start_run(args, overrides, "evaluate")
    manifest = load_manifest(_under_workdir(args.workdir, args.manifest))
    report = evaluate(_under_workdir(args.workdir, args.checkpoint), manifest, cfg.evaluate.batch_size)
    report_path = run_dir / "report.json"
    write_report(report, report_path)
    c = report.counts
    print(
        f"ACC {report.accuracy:.4f}  P {report.precision:.4f}  R {report.recall:.4f}  "
        f"F1 {report.f1:.4f}  (TP {c.tp} FP {c.fp} TN {c.tn} FN {c.fn})"
    )
    print(f"report: {report_path}")
    return 0


def cmd_monitor(args, overrides) -> int:
    cfg, run_dir = _start_run(args, overrides, "monitor")
    manifest = load_manifest(_under_workdir(args.workdir, args.manifest))
    expert = None
    if args.expert_labels:
        with open(_under_workdir(args.workdir, args.expert_labels), "r", encoding="utf-8") as fh:
            lines = [line.strip() for line in fh if line.strip()]
        if not all(line in ("0", "1") for line in lines):
            raise ValidationError(f"{args.expert_labels}: expert labels must be 0 or 1, one per line")
        expert = [int(line) for line in lines]
    report = evaluate_sequence(
        _under_workdir(args.workdir, args.checkpoint),
        manifest,
        expert_labels=expert,
        cam_dir=run_dir / "cams",
    )
    report_path = run_dir / "sequence_report.json"
    write_sequence_report(report, report_path)
    if report.first_alarm_index is None:
        print("no alarm: every timestep predicted non-deformation")
    else:
        print(f"first alarm at position {report.first_alarm_index} (key {report.first_alarm_key})")
    if report.agreement is not None:
        print(f"agreement with expert labels: {report.agreement:.4f}")
    print(f"report: {report_path}")
    return 0


def cmd_cam(args, overrides) -> int:
    if overrides:
        raise ConfigurationError("cam takes no config overrides")
    model, ckpt = load_eval_model(args.checkpoint)
    phase = read_patch_file(args.input)
    patch = render_channels(InterferogramPatch(phase=phase), ckpt.encoder_config.input_channels)
    if args.class_index is None:
        import torch

        with torch.no_grad():
            x = torch.from_numpy(patch.channels).unsqueeze(0)
            cls = int(predict_labels(model.classifier(model.backbone(x)))[0])
    else:
        cls = args.class_index
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{Path(args.input).stem}_cam_{cls}.png"
    save_cam_png(compute_cam(model, patch.channels, cls), out_path)
    print(f"wrote {out_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fringefinder",
        description="Contrastive pretraining and deformation detection for interferogram patches",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic fringe dataset")
    synth.add_argument("--n", type=int, required=True, help="number of train patches")
    synth.add_argument("--n-test", type=int, default=0, help="additional test-split patches")
    synth.add_argument("--side", type=int, default=32)
    synth.add_argument("--fraction", type=float, default=0.5, help="deformation fraction")
    synth.add_argument("--cycles-lo", type=float, default=1.5)
    synth.add_argument("--cycles-hi", type=float, default=2.5)
    synth.add_argument("--noise-sigma", type=float, default=0.3)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(func=cmd_synth)

    convert = sub.add_parser("convert", help="convert a grayscale image to an IPH1 patch")
    convert.add_argument("--input", required=True)
    convert.add_argument("--out", required=True)
    convert.set_defaults(func=cmd_convert)

    for name, func, needs_ckpt in (
        ("pretrain", cmd_pretrain, False),
        ("finetune", cmd_finetune, True),
    ):
        p = sub.add_parser(name, help=f"{name} stage")
        p.add_argument("--config", default=None, help="run config YAML (defaults: desk profile)")
        p.add_argument("--manifest", required=True)
        p.add_argument("--workdir", default=".")
        p.add_argument("--resume", default=None, help="checkpoint to resume from")
        if needs_ckpt:
            p.add_argument("--checkpoint", default=None, help="pretrained checkpoint")
        p.set_defaults(func=func)

    ev = sub.add_parser("evaluate", help="evaluate a finetuned checkpoint on the test split")
    ev.add_argument("--config", default=None)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--workdir", default=".")
    ev.set_defaults(func=cmd_evaluate)

    mon = sub.add_parser("monitor", help="classify a chronological sequence and emit CAMs")
    mon.add_argument("--config", default=None)
    mon.add_argument("--manifest", required=True)
    mon.add_argument("--checkpoint", required=True)
    mon.add_argument("--expert-labels", default=None, help="one 0/1 label per line")
    mon.add_argument("--workdir", default=".")
    mon.set_defaults(func=cmd_monitor)

    cam_p = sub.add_parser("cam", help="export one class activation map")
    cam_p.add_argument("--checkpoint", required=True)
    cam_p.add_argument("--input", required=True, help="IPH1 patch file")
    cam_p.add_argument("--class", dest="class_index", type=int, choices=(0, 1), default=None)
    cam_p.add_argument("--out", default=".")
    cam_p.set_defaults(func=cmd_cam)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        overrides = _parse_overrides(extras)
        if getattr(args, "command", None) == "finetune" and not args.resume and not args.checkpoint:
            raise ConfigurationError("finetune needs --checkpoint (or --resume)")
        return args.func(args, overrides)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
