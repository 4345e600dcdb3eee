"""Command-line interface.

Subcommands map onto the experiment stages and share one artifact layout
under --out:

    gen-data    synthesize the dataset        -> <out>/dataset/
    train       train the model roster        -> <out>/models/
    attack      run attacks over the pool     -> <out>/attacks/
                (or a single --image)
    evaluate    build the report              -> <out>/report.json
    report      print a stored report as text

Running the four stages in order reproduces `run_experiment` output exactly.
Exit codes: 0 success, 1 runtime error (diagnostic on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import harness, metrics, models as models_mod
from ._version import __version__
from .attacks import ATTACKS, write_trace_csv
from .errors import ConfigError, FreqAdvError
from .imaging import load_png, save_png


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON file")
    p.add_argument("--seed", type=int, default=None,
                   help="root seed override: dataset seed, model seeds "
                        "(+1000 per roster slot), attack base seeds")
    p.add_argument("--out", help="experiment directory for artifacts")


def _load_cfg(args) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.load_config_file(args.config)
    else:
        cfg = harness.default_config()
    if args.seed is not None:
        cfg = harness.config_with_seed(cfg, args.seed)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def _need_out(cfg: harness.ExperimentConfig) -> str:
    if not cfg.out_dir:
        raise ConfigError("an output directory is required (--out or config out_dir)")
    return cfg.out_dir


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _need_out(cfg)
    ds = harness.stage_gen_data(cfg, out)
    print(f"wrote {len(ds)} images to {os.path.join(out, harness.DATASET_DIR)}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _need_out(cfg)
    _, summary = harness.stage_train(cfg, out)
    for name, m in summary.items():
        ev = m["accuracy"]["eval"]
        print(f"trained {name} ({m['kind']}): eval accuracy "
              f"{ev['accuracy']:.3f} ({ev['correct']}/{ev['total']}), "
              f"final loss {m['final_loss']:.4g}")
    print(f"checkpoints in {os.path.join(out, harness.MODELS_DIR)}")
    return 0


def _resolve_model(cfg: harness.ExperimentConfig, out: str, spec: str):
    """A checkpoint path, or a roster name resolved under <out>/models."""
    if os.path.isfile(spec):
        return spec, models_mod.load_checkpoint(spec)
    path = os.path.join(out, harness.MODELS_DIR, f"{spec}.ckpt")
    if os.path.isfile(path):
        return path, models_mod.load_checkpoint(path)
    raise FileNotFoundError(f"no model checkpoint at {spec!r} or {path!r}")


def _attack_single(args, cfg: harness.ExperimentConfig, out: str) -> int:
    img = load_png(args.image)
    _, model = _resolve_model(cfg, out, args.model)
    names = list(cfg.attacks) if args.attack == "all" else [args.attack]
    for name in names:
        if name not in cfg.attacks:
            raise ConfigError(f"attack {name!r} is not in the configured roster "
                              f"{sorted(cfg.attacks)}")
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    for name in names:
        acfg = cfg.attacks[name]
        res = ATTACKS[name](model, img, args.label, acfg)
        adv_png = os.path.join(out, f"{stem}_{name}_adv.png")
        save_png(res.adv, adv_png)
        record = {
            "attack": name,
            "image": os.path.basename(args.image),
            "label": args.label,
            "success": bool(res.success),
            "iterations_used": int(res.iterations_used),
            "grad_calls": int(res.grad_calls),
            "final_loss": float(res.final_loss),
            "mse": metrics.mse(img, res.adv),
            "psnr": metrics.psnr(img, res.adv),
            "ssim": metrics.ssim(img, res.adv),
            "adv_png": os.path.basename(adv_png),
            "config": harness._attack_config_to_dict(acfg),
        }
        with open(os.path.join(out, f"{stem}_{name}_record.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, indent=2) + "\n")
        if args.trace or cfg.dump_traces:
            write_trace_csv(os.path.join(out, f"{stem}_{name}_trace.csv"), res.trace)
        print(f"{name}: success={res.success} iterations={res.iterations_used} "
              f"psnr={record['psnr']:.2f} -> {adv_png}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    out = _need_out(cfg)
    if args.image:
        if not args.model:
            raise ConfigError("--image mode needs --model (checkpoint path or "
                              "roster name)")
        return _attack_single(args, cfg, out)
    pool, attack_data = harness.stage_attack(cfg, out)
    print(f"attack pool: {len(pool)} images")
    for attack_name, per_model in attack_data.items():
        for model_name, cell in per_model.items():
            if "error" in cell:
                print(f"{attack_name} vs {model_name}: ERROR {cell['error']}")
                continue
            n_ok = sum(r["success"] for r in cell["records"])
            print(f"{attack_name} vs {model_name}: {n_ok}/{len(cell['records'])} "
                  f"flipped")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _need_out(cfg)
    report = harness.stage_evaluate(cfg, out)
    print(f"wrote {os.path.join(out, harness.REPORT_FILE)}")
    print(f"report hash (timestamp excluded): {report.content_hash()}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    path = args.report or os.path.join(_need_out(cfg), harness.REPORT_FILE)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no report at {path}")
    print(harness.report_to_text(harness.ExperimentReport.load(path)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqadv",
        description="Frequency-domain adversarial attacks on forgery "
                    "classifiers: dataset synthesis, training, attacks, "
                    "evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="synthesize the paired real/fake dataset")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the model roster on the dataset")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run attacks over the pool, or one image")
    _add_common(p)
    p.add_argument("--image", help="attack a single PNG instead of the pool")
    p.add_argument("--model", help="model for --image mode: checkpoint path or "
                                   "roster name under <out>/models")
    p.add_argument("--attack", default="all",
                   help="attack name for --image mode, or 'all' (default)")
    p.add_argument("--label", type=int, default=1, choices=(0, 1),
                   help="true label of the single image (default 1, fake)")
    p.add_argument("--trace", action="store_true",
                   help="dump per-iteration trace CSVs in --image mode")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="build report.json from stage artifacts")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a stored report as text")
    _add_common(p)
    p.add_argument("--report", help="path to a report.json (default "
                                    "<out>/report.json)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (FreqAdvError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
