"""Single entry point: synth, pretrain, finetune, evaluate, ablate, grad-check.

Each subcommand reads an optional JSON config file plus flag overrides
(flags win), validates everything before touching the filesystem, and
writes a manifest recording the effective config and seeds next to its
outputs.  Exit codes: 0 success, 2 config/usage error, 3 runtime failure.
Set GNMAP_LOG to error/info/debug to control verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .errors import ConfigError, GNMapError
from .evalkit import (
    DEFAULT_THRESHOLD,
    evaluate_model,
    evaluate_rasters,
    render_csv,
    render_json,
    render_text,
)
from .gnmap_net import (
    DEFAULT_FINETUNE_STEPS,
    DEFAULT_PRETRAIN_STEPS,
    NetConfig,
    TrainConfig,
    finetune_run,
    load_checkpoint,
    masked_completion_mse,
    pretrain_run,
    save_checkpoint,
    write_loss_curve,
)
from .synth import RasterParams, SynthConfig, gen_dataset, load_split, write_dataset

log = logging.getLogger("gnmap.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _setup_logging() -> None:
    level_name = os.environ.get("GNMAP_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"GNMAP_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(
        level=levels[level_name], format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _merged(file_cfg: dict, section: str, overrides: dict) -> dict:
    """Section of the config file updated with non-None flag overrides."""
    out = dict(file_cfg.get(section, {}))
    for key, value in overrides.items():
        if value is not None:
            out[key] = value
    return out


def _build_dataclass(cls, doc: dict, what: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError, GNMapError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from exc


def _net_config(file_cfg: dict) -> NetConfig:
    doc = file_cfg.get("net", {})
    try:
        merged = NetConfig().to_dict()
        for section, values in doc.items():
            if section not in merged:
                raise ConfigError(f"unknown net config section {section!r}")
            unknown = set(values) - set(merged[section])
            if unknown:
                raise ConfigError(f"unknown net.{section} keys: {sorted(unknown)}")
            merged[section].update(values)
        return NetConfig.from_dict(merged)
    except GNMapError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid net config: {exc}") from exc


def _write_manifest(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    overrides = {
        "train_tiles": args.tiles,
        "tours_per_tile": args.tours,
        "coverage": args.coverage,
        "jitter_sigma": args.jitter,
        "seed": args.seed,
    }
    doc = _merged(file_cfg, "synth", overrides)
    if args.tiles is not None:
        # --tiles sets the train split; valid/test scale to an eighth each
        doc.setdefault("valid_tiles", max(1, args.tiles // 8))
        doc.setdefault("test_tiles", max(1, args.tiles // 8))
    for nested, cls in (("raster", RasterParams),):
        if nested in doc and isinstance(doc[nested], dict):
            doc[nested] = _build_dataclass(cls, doc[nested], nested)
    if "style" in doc and isinstance(doc["style"], dict):
        from .synth import StyleParams

        doc["style"] = {k: tuple(v) if isinstance(v, list) else v for k, v in doc["style"].items()}
        doc["style"] = _build_dataclass(StyleParams, doc["style"], "style")
    if "extent" in doc and isinstance(doc["extent"], list):
        doc["extent"] = tuple(doc["extent"])
    config = _build_dataclass(SynthConfig, doc, "synth")
    dataset = gen_dataset(config)
    write_dataset(dataset, args.out)
    counts = {k: len(v) for k, v in dataset.splits.items()}
    log.info("wrote dataset to %s: %s", args.out, counts)
    print(f"dataset written to {args.out} ({sum(counts.values())} tiles)")
    return EXIT_OK


def _train_config(args: argparse.Namespace, file_cfg: dict, default_steps: int) -> TrainConfig:
    overrides = {
        "steps": args.steps,
        "lr": args.lr,
        "seed": args.seed,
        "batch_size": args.batch,
        "mask_ratio": getattr(args, "mask_ratio", None),
    }
    doc = _merged(file_cfg, "training", overrides)
    doc.setdefault("steps", default_steps)
    return _build_dataclass(TrainConfig, doc, "training")


def cmd_pretrain(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    net = _net_config(file_cfg)
    cfg = _train_config(args, file_cfg, default_steps=DEFAULT_PRETRAIN_STEPS)
    samples = load_split(args.data, "train")
    result = pretrain_run(samples, net, cfg)
    save_checkpoint(result.params, args.out, phase="pretrain", step=cfg.steps)
    write_loss_curve(result.loss_curve, args.out + ".loss.csv")
    _write_manifest(
        args.out + ".manifest.json",
        {"command": "pretrain", "data": args.data, "net": net.to_dict(),
         "training": dataclasses.asdict(cfg)},
    )
    print(f"pretrain finished: final loss {result.final_loss:.6f} -> {args.out}")
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    net = _net_config(file_cfg)
    cfg = _train_config(args, file_cfg, default_steps=DEFAULT_FINETUNE_STEPS)
    samples = load_split(args.data, "train")
    init = None
    init_meta = None
    if args.init:
        init, init_meta = load_checkpoint(args.init)
        if init.net != net:
            raise ConfigError(
                f"checkpoint {args.init} was built for a different net config"
            )
    result = finetune_run(samples, net, cfg, init=init)
    if init is not None:
        print(f"carried {len(result.carried)} shared tensors from {args.init}")
    save_checkpoint(result.params, args.out, phase="finetune", step=cfg.steps)
    write_loss_curve(result.loss_curve, args.out + ".loss.csv")
    _write_manifest(
        args.out + ".manifest.json",
        {"command": "finetune", "data": args.data, "init": args.init,
         "init_meta": init_meta, "net": net.to_dict(), "training": dataclasses.asdict(cfg)},
    )
    print(f"finetune finished: final loss {result.final_loss:.6f} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    samples = load_split(args.data, args.split)
    if args.oracle_gt:
        gts = [s.gt_class for s in samples]
        report = evaluate_rasters(gts, gts, args.threshold)
        label = "oracle-gt"
    else:
        if not args.ckpt:
            raise ConfigError("evaluate needs --ckpt (or --oracle-gt)")
        mp, _meta = load_checkpoint(args.ckpt)
        report = evaluate_model(mp, samples, args.threshold)
        label = os.path.basename(args.ckpt)
    out_json = args.out
    with open(out_json, "w", encoding="utf-8") as f:
        f.write(render_json(report))
    base = out_json[: -len(".json")] if out_json.endswith(".json") else out_json
    with open(base + ".table.txt", "w", encoding="utf-8") as f:
        f.write(render_text([(label, report)]))
    with open(base + ".csv", "w", encoding="utf-8") as f:
        f.write(render_csv(report))
    _write_manifest(
        base + ".manifest.json",
        {"command": "evaluate", "data": args.data, "split": args.split,
         "ckpt": args.ckpt, "oracle_gt": bool(args.oracle_gt),
         "threshold": args.threshold},
    )
    print(render_text([(label, report)]))
    print(f"report written to {out_json}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    net = _net_config(file_cfg)
    cfg = _train_config(args, file_cfg, default_steps=DEFAULT_FINETUNE_STEPS)
    pre, _meta = load_checkpoint(args.init)
    if pre.net != net:
        raise ConfigError(f"checkpoint {args.init} was built for a different net config")
    train = load_split(args.data, "train")
    test = load_split(args.data, "test")
    os.makedirs(args.out_dir, exist_ok=True)

    fresh = finetune_run(train, net, cfg, init=None)
    warm = finetune_run(train, net, cfg, init=pre)
    rep_fresh = evaluate_model(fresh.params, test, args.threshold)
    rep_warm = evaluate_model(warm.params, test, args.threshold)
    save_checkpoint(fresh.params, os.path.join(args.out_dir, "finetune_fresh.ckpt"),
                    phase="finetune", step=cfg.steps)
    save_checkpoint(warm.params, os.path.join(args.out_dir, "finetune_pretrained.ckpt"),
                    phase="finetune", step=cfg.steps)

    rows = [("w/o Pre.", rep_fresh), ("w/ Pre.", rep_warm)]
    delta = rep_warm.F1 - rep_fresh.F1
    table = render_text(rows)
    table += f"\nF1 delta (w/ - w/o): {delta * 100.0:+.1f}\n"
    table_path = os.path.join(args.out_dir, "ablation.txt")
    with open(table_path, "w", encoding="utf-8") as f:
        f.write(table)
    _write_manifest(
        os.path.join(args.out_dir, "ablation.manifest.json"),
        {
            "command": "ablate",
            "data": args.data,
            "init": args.init,
            "net": net.to_dict(),
            "training": dataclasses.asdict(cfg),
            "threshold": args.threshold,
            "F1_without_pretrain": rep_fresh.F1,
            "F1_with_pretrain": rep_warm.F1,
            "F1_delta": delta,
        },
    )
    print(table)
    print(f"ablation written to {table_path}")
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    from .neural_core import run_named_check
    from .neural_core.gradcheck import STANDARD_CHECKS

    names = sorted(STANDARD_CHECKS) + ["pretrain", "fuse"]
    if args.module not in names:
        raise ConfigError(f"unknown module {args.module!r}; choices: {names}")
    if args.module in ("pretrain", "fuse"):
        from .gnmap_net.gradchecks import run_end_to_end_check

        report = run_end_to_end_check(args.module, args.seed)
    else:
        report = run_named_check(args.module, args.seed)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    print(text)
    return EXIT_OK if report.passed else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnmap", description="map tile fusion pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic tile dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--tiles", type=int, help="train tiles (valid/test get 1/8 each)")
    p.add_argument("--tours", type=int, help="mean tours per tile")
    p.add_argument("--coverage", type=float, help="per-tour element retention probability")
    p.add_argument("--jitter", type=float, help="per-point Gaussian noise sigma (m)")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    for phase in ("pretrain", "finetune"):
        p = sub.add_parser(phase, help=f"{phase} the shared autoencoder")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--out", required=True, help="output checkpoint path")
        p.add_argument("--steps", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--seed", type=int)
        if phase == "pretrain":
            p.add_argument("--mask-ratio", dest="mask_ratio", type=float)
            p.set_defaults(func=cmd_pretrain)
        else:
            p.add_argument("--init", help="pretrained checkpoint to start from")
            p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", default="report.json", help="report JSON path")
    p.add_argument("--oracle-gt", action="store_true",
                   help="score ground truth against itself (sanity mode)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="finetune with and without pretrained init")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--init", required=True, help="pretrained checkpoint")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of one module")
    p.add_argument("--module", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GNMapError as exc:
        log.error("runtime failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        log.error("io failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
