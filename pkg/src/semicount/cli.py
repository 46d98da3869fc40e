"""Command-line workflows: synth, split, train, eval, probe, ablate."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .config import TrainConfig, config_to_dict, resolve_config, save_config
from .data import SplitSpec, discover_scenes, materialize_split, save_split, load_split
from .synth import SceneSpec, gen_dataset
from .trainer import load_checkpoint, split_train_data, train

# Ablation grids, matching the reference experiment plans.
MASK_GRID_SIZES = (8, 16, 32, 64)
MASK_GRID_RATIOS = (0.1, 0.3, 0.5, 0.7)
LAMBDA_GRID = (0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 1.5, 2.0)
HEAD_VARIANTS = {
    "reg_only": {"lambda_s_cls": 0.0, "lambda_u": 0.0},
    "sup_both": {"lambda_u": 0.0},
    "unsup_reg": {"unsup_cls_weight": 0.0},
    "unsup_cls": {"unsup_reg_weight": 0.0},
    "unsup_both": {},
}


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_input(path: Path) -> str:
    if path.is_file():
        return _hash_file(path)
    digest = hashlib.sha256()
    for sub in sorted(p for p in path.rglob("*") if p.is_file()):
        digest.update(str(sub.relative_to(path)).encode("utf-8"))
        digest.update(bytes.fromhex(_hash_file(sub)))
    return digest.hexdigest()


def _write_provenance(out_dir: Path, args: argparse.Namespace, inputs: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": args.command,
        "argv": args._argv,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _hash_input(p) for p in inputs if p is not None and p.exists()},
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="TOML/JSON config file")
    sub.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config field (repeatable)",
    )
    sub.add_argument("--out", type=Path, required=True, help="run directory")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--deterministic", action="store_true", default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semicount")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-images", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--count-min", type=int, default=20)
    p.add_argument("--count-max", type=int, default=80)
    p.add_argument("--gradient", default="down", choices=["none", "down", "up", "left", "right"])
    p.add_argument("--gradient-strength", type=float, default=0.7)
    p.add_argument("--clutter", type=float, default=0.3)
    p.add_argument("--radius-min", type=float, default=3.0)
    p.add_argument("--radius-max", type=float, default=8.0)
    p.add_argument("--variety", type=float, default=0.0)
    p.add_argument("--prefix", default="scene")

    p = subs.add_parser("split", help="materialize a labeled/unlabeled split manifest")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = subs.add_parser("train", help="run mean-teacher training")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="training image directory")
    p.add_argument("--split", type=Path, default=None, help="split manifest JSON")
    p.add_argument("--fraction", type=float, default=None, help="make a split on the fly")
    p.add_argument("--test", type=Path, default=None, help="optional test directory")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume")

    p = subs.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--flip", action="store_true", help="flip-averaged counts")
    p.add_argument("--teacher", action="store_true", help="evaluate the EMA teacher")

    p = subs.add_parser("probe", help="run robustness probes on a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kind", choices=["blur", "mask", "both"], default="both")
    p.add_argument("--fractions", default="0,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--teacher", action="store_true")

    p = subs.add_parser("ablate", help="run a declared experiment grid")
    _add_common(p)
    p.add_argument("--experiment", choices=["mask", "lambda_u", "heads"], required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", type=Path, default=None)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--test", type=Path, required=True)
    return parser


def _cmd_synth(args) -> int:
    spec = SceneSpec(
        size=args.size,
        count_range=(args.count_min, args.count_max),
        gradient_direction=args.gradient,
        gradient_strength=args.gradient_strength,
        head_radius_range=(args.radius_min, args.radius_max),
        clutter_level=args.clutter,
        variety=args.variety,
    )
    gen_dataset(spec, args.n_images, args.seed, args.out, prefix=args.prefix)
    _write_provenance(args.out, args, [])
    print(f"wrote {args.n_images} scenes to {args.out}")
    return 0


def _cmd_split(args) -> int:
    ids = [r.id for r in discover_scenes(args.data)]
    spec = materialize_split(ids, SplitSpec(labeled_fraction=args.fraction, seed=args.seed))
    out = args.out / "split.json" if args.out.is_dir() else args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    save_split(out, spec)
    print(f"{len(spec.labeled_ids)} labeled / {len(spec.unlabeled_ids)} unlabeled -> {out}")
    return 0


def _resolve_split(args, config: TrainConfig, out_dir: Path) -> SplitSpec:
    if args.split is not None:
        return load_split(args.split)
    fraction = args.fraction if args.fraction is not None else 0.1
    ids = [r.id for r in discover_scenes(args.data)]
    spec = materialize_split(ids, SplitSpec(labeled_fraction=fraction, seed=config.seed))
    save_split(out_dir / "split.json", spec)
    return spec


def _run_train(args, config: TrainConfig, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(out_dir / "resolved_config.json", config)
    split = _resolve_split(args, config, out_dir)
    records = [r for r in discover_scenes(args.data)]
    data = split_train_data(records, split, config.val_fraction, config.seed)
    state, history = train(config, data, out_dir=out_dir, resume_from=args.resume)
    summary = {"epochs": len(history), "global_step": state.global_step}
    if args.test is not None:
        test_records = discover_scenes(args.test)
        result = ev.evaluate_records(state.student, test_records)
        ev.report(result, {}, out_dir / "test_report")
        summary["test_mae"] = result.mae
        summary["test_mse"] = result.mse
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def _cmd_train(args) -> int:
    config = resolve_config(args.config, args.overrides, args.seed, args.deterministic)
    _write_provenance(args.out, args, [args.config, args.data, args.split])
    summary = _run_train(args, config, args.out)
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    model = state.teacher if args.teacher else state.student
    records = discover_scenes(args.data)
    result = ev.evaluate_records(model, records, flip_average=args.flip)
    ev.report(result, {}, args.out)
    _write_provenance(args.out, args, [args.checkpoint, args.data])
    print(json.dumps({"n": len(result.rows), "mae": result.mae, "mse": result.mse}))
    return 0


def _cmd_probe(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    model = state.teacher if args.teacher else state.student
    records = discover_scenes(args.data)
    fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    curves = {}
    if args.kind in ("blur", "both"):
        curves["blur"] = ev.blur_probe(
            model, records, fractions, patch=args.patch, seed=args.probe_seed
        )
    if args.kind in ("mask", "both"):
        curves["mask"] = ev.mask_probe(
            model, records, fractions, patch=args.patch, seed=args.probe_seed
        )
    result = ev.evaluate_records(model, records)
    ev.report(result, curves, args.out)
    _write_provenance(args.out, args, [args.checkpoint, args.data])
    print(json.dumps({name: curve for name, curve in curves.items()}))
    return 0


def _ablate_cells(args, base: TrainConfig):
    if args.experiment == "mask":
        for size in MASK_GRID_SIZES:
            for ratio in MASK_GRID_RATIOS:
                if base.crop_size % size:
                    raise ValueError(f"crop {base.crop_size} not divisible by mask size {size}")
                yield (
                    f"mask{size}_r{ratio}",
                    {"mask_size": size, "mask_ratio": ratio},
                    [f"trainer.mask_patch_size={size}", f"trainer.mask_ratio={ratio}"],
                )
    elif args.experiment == "lambda_u":
        for lam in LAMBDA_GRID:
            yield f"lambda{lam}", {"lambda_u": lam}, [f"trainer.loss.lambda_u={lam}"]
    else:
        for name, weights in HEAD_VARIANTS.items():
            yield (
                name,
                {"variant": name},
                [f"trainer.loss.{key}={value}" for key, value in weights.items()],
            )


def _cmd_ablate(args) -> int:
    base = resolve_config(args.config, args.overrides, args.seed, args.deterministic)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_provenance(args.out, args, [args.config, args.data, args.split, args.test])
    rows = []
    for name, params, extra_overrides in _ablate_cells(args, base):
        cell_config = resolve_config(
            args.config, args.overrides + extra_overrides, args.seed, args.deterministic
        )
        cell_args = argparse.Namespace(**vars(args))
        cell_args.resume = None
        summary = _run_train(cell_args, cell_config, args.out / name)
        rows.append({**params, "mae": summary.get("test_mae"), "mse": summary.get("test_mse")})
        print(f"[{name}] mae={summary.get('test_mae'):.3f} mse={summary.get('test_mse'):.3f}")
    columns = sorted({key for row in rows for key in row})
    with (args.out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out / 'ablation.csv'}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "probe": _cmd_probe,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = argv
    try:
        return _COMMANDS[args.command](args)
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
