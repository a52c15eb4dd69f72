"""``dvib`` command line: generate | train | eval | gradcheck.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import container, data, evaluation, gradcheck
from .model import NonFiniteLossError, build_model
from .train import CheckpointDimError, TrainConfig, checkpoint_load, checkpoint_save, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
PRESETS = ("factor", "glyph", "idx")

GENERATE_DEFAULTS = {
    "preset": "factor", "n": 5000, "k_shared": 10, "k_px": 5, "k_py": 4, "d_x": 64, "d_y": 64,
    "noise_sd": 0.1, "seed": 0, "images": None, "labels": None, "corrupt_x": None, "corrupt_y": None,
    "name": None,
}
TRAIN_EXTRA_DEFAULTS = {"data": None, "split_seed": 0, "corrupt_x": None, "corrupt_y": None, "timings": False}
EVAL_DEFAULTS = {"checkpoint": None, "data": None, "split_seed": 0, "corrupt_x": None, "corrupt_y": None,
                 "probe_epochs": 500, "seed": 0}


class ConfigError(ValueError):
    pass


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def resolve(defaults: dict, args: argparse.Namespace) -> dict:
    """Built-in defaults, overridden by config-file keys, overridden by explicit flags."""
    cfg = dict(defaults)
    file_cfg = _load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; valid keys: {sorted(defaults)}")
    cfg.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_sidecar(out: Path, command: str, cfg: dict) -> None:
    (out / f"{command}.config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


def _corruption(text):
    if text in (None, "", "none"):
        return None
    try:
        return data.CorruptionSpec.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = resolve(GENERATE_DEFAULTS, args)
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}; valid presets: {', '.join(PRESETS)}")
    out = _out_dir(args)
    _write_sidecar(out, "generate", cfg)
    try:
        if cfg["preset"] == "factor":
            ds = data.gen_factor_dataset(cfg["n"], cfg["k_shared"], cfg["k_px"], cfg["k_py"], cfg["d_x"],
                                         cfg["d_y"], cfg["noise_sd"], cfg["seed"])
        elif cfg["preset"] == "glyph":
            ds = data.gen_glyph_twoview(cfg["n"], cfg["seed"])
        else:
            if not cfg["images"] or not cfg["labels"]:
                raise ConfigError("preset idx needs --images and --labels")
            images, labels = data.load_idx(cfg["images"], cfg["labels"])
            ds = data.gen_twoview_transform(images, labels, cfg["seed"])
            ds.meta.update({"generator": "idx", "images": str(cfg["images"]), "labels": str(cfg["labels"])})
    except (ValueError, TypeError) as exc:
        if isinstance(exc, (ConfigError, data.IdxError)):
            raise
        raise ConfigError(str(exc)) from exc
    spec_x, spec_y = _corruption(cfg["corrupt_x"]), _corruption(cfg["corrupt_y"])
    if spec_x or spec_y:
        ds = data.corrupt_dataset(ds, spec_x, spec_y, cfg["seed"])
    name = cfg["name"] or f"{cfg['preset']}.dvds"
    path = out / name
    data.save_dataset(ds, path)
    (out / f"{Path(name).stem}.json").write_text(json.dumps(ds.meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path} ({len(ds)} samples, d_x={ds.d_x}, d_y={ds.d_y})")
    return EXIT_OK


def _train_defaults() -> dict:
    d = TrainConfig().as_dict()
    d.update(TRAIN_EXTRA_DEFAULTS)
    return d


def _split(ds, seed):
    return data.train_test_split(len(ds), seed)


def _grid(model, ds, split, probe_epochs, probe_seed, test_ds=None):
    return evaluation.disentanglement_grid(model, ds, split=split, probe_epochs=probe_epochs,
                                           probe_seed=probe_seed, test_dataset=test_ds)


def _load_data(path):
    if not path:
        raise ConfigError("--data is required")
    return data.load_dataset(path)


def cmd_train(args) -> int:
    cfg = resolve(_train_defaults(), args)
    out = _out_dir(args)
    _write_sidecar(out, "train", cfg)
    train_keys = {f.name for f in fields(TrainConfig)}
    try:
        config = TrainConfig.from_dict({k: v for k, v in cfg.items() if k in train_keys})
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    ds = _load_data(cfg["data"])
    spec_x, spec_y = _corruption(cfg["corrupt_x"]), _corruption(cfg["corrupt_y"])
    if spec_x or spec_y:
        ds = data.corrupt_dataset(ds, spec_x, spec_y, config.seed)
    split = _split(ds, cfg["split_seed"])
    model = build_model(config.model, config.model_dims(ds.d_x, ds.d_y), np.random.default_rng(config.seed))
    model, history = train(model, ds.subset(split[0]), config)
    checkpoint_save(model, out / "model.dvck", config)
    (out / "train_log.csv").write_text(history.to_csv(include_time=cfg["timings"]))
    grid = _grid(model, ds, split, config.probe_epochs, config.seed)
    (out / "grid.csv").write_text(evaluation.grid_to_csv(grid))
    last = history.records[-1].breakdown.total if history.records else float("nan")
    print(f"trained {config.model} for {config.epochs} epochs; final objective {last:.4f}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve(EVAL_DEFAULTS, args)
    out = _out_dir(args)
    _write_sidecar(out, "eval", cfg)
    if not cfg["checkpoint"]:
        raise ConfigError("--checkpoint is required")
    if not Path(cfg["checkpoint"]).exists():
        raise FileNotFoundError(f"checkpoint {cfg['checkpoint']} not found")
    model, train_cfg = checkpoint_load(cfg["checkpoint"])
    ds = _load_data(cfg["data"])
    if (ds.d_x, ds.d_y) != (model.dims.d_x, model.dims.d_y):
        raise CheckpointDimError(
            f"dataset dims ({ds.d_x}, {ds.d_y}) do not match checkpoint ({model.dims.d_x}, {model.dims.d_y})"
        )
    split = _split(ds, cfg["split_seed"])
    spec_x, spec_y = _corruption(cfg["corrupt_x"]), _corruption(cfg["corrupt_y"])
    test_ds = data.corrupt_dataset(ds, spec_x, spec_y, cfg["seed"]) if (spec_x or spec_y) else None
    probe_epochs = train_cfg.get("probe_epochs", cfg["probe_epochs"])
    probe_seed = train_cfg.get("seed", cfg["seed"])
    grid = _grid(model, ds, split, probe_epochs, probe_seed, test_ds)
    (out / "grid.csv").write_text(evaluation.grid_to_csv(grid))
    summary = {
        "model": model.kind,
        "best_label_set": evaluation.best_label_sets(grid),
        "cells": len(grid),
        "corruption": {"x": str(spec_x) if spec_x else None, "y": str(spec_y) if spec_y else None},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for r in grid:
        print(f"{r.representation:6s} {r.label_set:10s} acc={r.accuracy:.3f} ari={r.ari:.3f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = gradcheck.run_gradcheck(seed, perturb=args.perturb)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.term:34s} max rel error {r.max_rel_error:.3e} (tol {r.tolerance:.0e})")
    if failed:
        print("gradient check failed: " + ", ".join(r.term for r in failed), file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _shared(p):
    p.add_argument("--config", help="JSON file whose keys override built-in defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory (created if absent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvib", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a two-view dataset container")
    _shared(g)
    g.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    g.add_argument("--n", type=int)
    g.add_argument("--k-shared", type=int)
    g.add_argument("--k-px", type=int)
    g.add_argument("--k-py", type=int)
    g.add_argument("--d-x", type=int)
    g.add_argument("--d-y", type=int)
    g.add_argument("--noise-sd", type=float)
    g.add_argument("--images", help="IDX image file (preset idx)")
    g.add_argument("--labels", help="IDX label file (preset idx)")
    g.add_argument("--corrupt-x", help="kind:level, e.g. gaussian_noise:3")
    g.add_argument("--corrupt-y", help="kind:level, e.g. blur:2")
    g.add_argument("--name", help="output file name")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write checkpoint, log and grid")
    _shared(t)
    t.add_argument("--data")
    t.add_argument("--model", choices=("dvib", "vib", "vae"))
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--d-s", type=int)
    t.add_argument("--d-p", type=int)
    t.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",")), help="e.g. 256,256")
    t.add_argument("--activation", choices=("tanh", "relu", "identity"))
    t.add_argument("--likelihood", choices=("gaussian", "bernoulli"))
    t.add_argument("--eval-every", type=int)
    t.add_argument("--probe-epochs", type=int)
    t.add_argument("--split-seed", type=int)
    t.add_argument("--corrupt-x")
    t.add_argument("--corrupt-y")
    t.add_argument("--timings", action="store_true", default=None,
                   help="record wall-clock seconds in the log (breaks byte-identical reruns)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="probe a checkpoint and write the disentanglement grid")
    _shared(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--split-seed", type=int)
    e.add_argument("--corrupt-x")
    e.add_argument("--corrupt-y")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    c.add_argument("--seed", type=int)
    c.add_argument("--perturb", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointDimError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, container.ContainerError, data.IdxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
