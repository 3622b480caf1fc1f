"""Command-line driver: gen-data, train, infer, eval, sweep, selftest.

Every output is a pure function of the effective config and input files,
and carries that config.  Exit codes: 0 success, 1 other failure (missing
input, incompatible checkpoint), 2 config error, 3 numeric failure,
4 fixture or self-check mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, FixtureMismatch, GradCheckError, NumericError, OVVISError
from .experiments import SWEEP_AXES, evaluate_results, infer_split, plot_sweep, run_sweep, sweep_csv
from .model import Model
from .selftest import run_selftest
from .tracker import validate_result
from .training import train
from .world import EVAL, World, generate, load_dataset, save_dataset

log = logging.getLogger("ovvis")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FIXTURE = 0, 1, 2, 3, 4


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _world(args, cfg: ExperimentConfig) -> tuple[World, ExperimentConfig]:
    """Load the dataset given by --data, else generate it from the config."""
    if args.data:
        world = load_dataset(args.data)
        return world, dataclasses.replace(cfg, world=world.config)
    return generate(cfg.world), cfg


def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir) / "dataset"
    save_dataset(generate(cfg.world), out)
    log.info("dataset written to %s", out)
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    world, cfg = _world(args, cfg)
    out = Path(cfg.out_dir)
    result = train(cfg, world, log_every=args.log_every)
    result.model.save(out / "checkpoint", {"config": cfg.echo(), "steps": cfg.train.steps})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss", "lr"])
    for i, (loss, lr) in enumerate(zip(result.losses, result.learning_rates)):
        writer.writerow([i, repr(loss), repr(lr)])
    _write(out / "train_log.csv", buf.getvalue())
    _write(out / "config.json", _dump(cfg.echo()))
    return EXIT_OK


def _checkpoint_dir(args, cfg) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out_dir) / "checkpoint"


def cmd_infer(args, cfg: ExperimentConfig) -> int:
    world, cfg = _world(args, cfg)
    ckpt = _checkpoint_dir(args, cfg)
    if not (ckpt / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt}")
    model = Model.load(ckpt, cfg.model, cfg.world)
    ids = [int(v) for v in args.videos.split(",")] if args.videos else None
    docs = infer_split(model, world, cfg.infer, EVAL, cfg.echo(), ids)
    out = Path(cfg.out_dir) / "results"
    for doc in docs:
        validate_result(doc)
        _write(out / f"video_{doc['video_id']:04d}.json", _dump(doc))
    return EXIT_OK


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    world, cfg = _world(args, cfg)
    results = Path(args.results) if args.results else Path(cfg.out_dir) / "results"
    files = sorted(results.glob("video_*.json"))
    if not files:
        raise FileNotFoundError(f"no result files in {results}")
    docs = []
    for f in files:
        doc = json.loads(f.read_text())
        validate_result(doc)
        docs.append(doc)
    report = evaluate_results(docs, world, cfg.model.stride, EVAL, cfg.echo())
    out = Path(cfg.out_dir)
    _write(out / "eval_report.json", report.dumps())
    _write(out / "eval_per_category.csv", report.to_csv())
    print(f"mAP {report.mAP}  mAP_b {report.mAP_b}  mAP_n {report.mAP_n}  "
          f"id_switches {report.id_switches}  id_consistency {report.id_consistency:.4f}")
    return EXIT_OK


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    world, cfg = _world(args, cfg)
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; choose from {SWEEP_AXES}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one value")
    rows = run_sweep(cfg, args.axis, values, world)
    out = Path(cfg.out_dir)
    stem = f"sweep_{args.axis}"
    _write(out / f"{stem}.csv", sweep_csv(rows))
    _write(out / f"{stem}.json", _dump({"axis": args.axis, "config": cfg.echo(), "rows": rows}))
    out.mkdir(parents=True, exist_ok=True)
    plot_sweep(rows, args.axis, out / f"{stem}.png", cfg.echo())
    print(sweep_csv(rows), end="")
    return EXIT_OK


def cmd_selftest(args, cfg: ExperimentConfig) -> int:
    results = run_selftest(args.seeds)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    if not all(r.ok for r in results):
        raise FixtureMismatch("self-check failed: " + ", ".join(r.name for r in results if not r.ok))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer,
    "eval": cmd_eval, "sweep": cmd_sweep, "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--seed", type=int, help="seed for data generation and training")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. --set model.uea_enabled=false (repeatable)")
    common.add_argument("--data", help="dataset directory written by gen-data (default: regenerate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ovvis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train a model and save a checkpoint")
    p.add_argument("--log-every", type=int, default=0)
    p = sub.add_parser("infer", parents=[common], help="run inference on the eval split")
    p.add_argument("--checkpoint", help="checkpoint directory (default OUT/checkpoint)")
    p.add_argument("--videos", help="comma-separated eval video ids (default: all)")
    p = sub.add_parser("eval", parents=[common], help="score result files")
    p.add_argument("--results", help="results directory (default OUT/results)")
    p = sub.add_parser("sweep", parents=[common], help="ablation sweep over one axis")
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 1,2,5,10")
    p = sub.add_parser("selftest", parents=[common], help="oracle checks and evaluator fixtures")
    p.add_argument("--seeds", type=int, default=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FixtureMismatch, GradCheckError) as exc:
        print(f"fixture mismatch: {exc}", file=sys.stderr)
        return EXIT_FIXTURE
    except (OVVISError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
