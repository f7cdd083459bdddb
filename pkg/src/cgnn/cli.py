"""Command-line entry point.

Subcommands: train, eval, sweep-time, verify, mem-report, gen-synth.
Run configuration is a flat JSON object (TrainConfig fields plus
dataset_path and output_dir); unknown keys are rejected and paths are
resolved relative to the config file. Exit codes: 0 success, 1 validation
failure, 2 numeric abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from cgnn import memtrack
from cgnn.closed_form import OracleError, OracleReport
from cgnn.datasets import DataError, Dataset, SbmSpec, generate_sbm, load_dataset, save_dataset
from cgnn.dynamics import NumericsError
from cgnn.graph import GraphError
from cgnn.model import (
    ConfigError,
    TrainConfig,
    evaluate,
    gradients,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from cgnn.verify import run_all

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_CONFIG_FIELDS = _TRAIN_FIELDS | {"dataset_path", "output_dir"}


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def load_run_config(path: str | Path) -> tuple[TrainConfig, Path, Path]:
    """Parse a run-config file into (TrainConfig, dataset_path, output_dir)."""
    cfg_path = Path(path)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    with open(cfg_path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{cfg_path}: config must be a JSON object")
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"{cfg_path}: unknown config keys: {', '.join(unknown)}")
    if "dataset_path" not in raw:
        raise ConfigError(f"{cfg_path}: missing required key 'dataset_path'")
    base = cfg_path.parent
    dataset_path = (base / raw["dataset_path"]).resolve()
    output_dir = (base / raw.get("output_dir", "runs")).resolve()
    train_kwargs = {k: v for k, v in raw.items() if k in _TRAIN_FIELDS}
    cfg = TrainConfig(**train_kwargs)
    return cfg, dataset_path, output_dir


def _load_data(dataset_path: Path) -> Dataset:
    if not dataset_path.exists():
        raise DataError(f"dataset path does not exist: {dataset_path}")
    return load_dataset(dataset_path)


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        updates["variant"] = args.variant
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _config_echo(cfg: TrainConfig, dataset_path: Path, output_dir: Path) -> dict:
    echo = dataclasses.asdict(cfg)
    echo["dataset_path"] = str(dataset_path)
    echo["output_dir"] = str(output_dir)
    return echo


def cmd_train(args) -> int:
    cfg, dataset_path, output_dir = load_run_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if args.out is not None:
        output_dir = Path(args.out).resolve()
    cfg.validate()
    data = _load_data(dataset_path)
    result = train(data, cfg)

    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,train_acc,val_acc,test_acc\n")
        for m in result.history:
            fh.write(
                f"{m.epoch},{_fmt(m.train_loss)},{_fmt(m.train_acc)},"
                f"{_fmt(m.val_acc)},{_fmt(m.test_acc)}\n"
            )
    save_checkpoint(output_dir, result.best_params)
    summary = {
        "best_val_acc": result.best_val_acc,
        "test_acc_at_best_val": result.test_acc_at_best_val,
        "best_epoch": result.best_epoch,
        "seed": cfg.seed,
        "config": _config_echo(cfg, dataset_path, output_dir),
    }
    with open(output_dir / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    from cgnn.plots import save_metrics_plot

    save_metrics_plot(result.history, output_dir / "metrics.png")
    print(
        f"train: best_val_acc={_fmt(result.best_val_acc)} "
        f"test_acc_at_best_val={_fmt(result.test_acc_at_best_val)} -> {output_dir}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg, dataset_path, output_dir = load_run_config(args.config)
    cfg = _apply_overrides(cfg, args)
    cfg.validate()
    data = _load_data(dataset_path)
    ckpt_dir = Path(args.checkpoint) if args.checkpoint else output_dir
    params = load_checkpoint(ckpt_dir)
    for split in ("train", "val", "test"):
        acc = evaluate(params, data, cfg, data.mask(split))
        print(f"split={split} accuracy={_fmt(acc)}")
    return 0


def _sweep_point(payload) -> float:
    config_path, variant, t1, seed = payload
    cfg, dataset_path, _ = load_run_config(config_path)
    cfg = dataclasses.replace(cfg, variant=variant, seed=seed)
    if variant == "cgnn-discrete":
        cfg = dataclasses.replace(cfg, discrete_steps=max(1, round(t1)))
    else:
        cfg = dataclasses.replace(cfg, t1=float(t1))
    data = _load_data(dataset_path)
    return train(data, cfg).test_acc_at_best_val


def cmd_sweep_time(args) -> int:
    cfg, dataset_path, output_dir = load_run_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if args.out is not None:
        output_dir = Path(args.out).resolve()
    cfg.validate()
    t_list = _parse_t_list(args.t_list)
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    _load_data(dataset_path)  # fail fast before spawning work

    payloads = [
        (str(Path(args.config).resolve()), variant, t1, cfg.seed)
        for variant in variants
        for t1 in t_list
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            accs = list(pool.map(_sweep_point, payloads))
    else:
        accs = [_sweep_point(p) for p in payloads]

    output_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(output_dir / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant,t1,seed,test_acc\n")
        for (_, variant, t1, seed), acc in zip(payloads, accs):
            fh.write(f"{variant},{_fmt(t1)},{seed},{_fmt(acc)}\n")
            rows.append({"variant": variant, "t1": t1, "test_acc": acc})
    from cgnn.plots import save_sweep_plot

    save_sweep_plot(rows, output_dir / "sweep.png")
    print(f"sweep-time: {len(rows)} runs -> {output_dir / 'sweep.csv'}")
    return 0


def cmd_verify(args) -> int:
    reports: list[OracleReport] = run_all(zero_tolerance=args.zero_tolerance)
    print(OracleReport.CSV_HEADER)
    for r in reports:
        print(r.csv_row())
    return 0 if all(r.passed for r in reports) else 1


def cmd_mem_report(args) -> int:
    cfg, dataset_path, output_dir = load_run_config(args.config)
    cfg = _apply_overrides(cfg, args)
    if args.out is not None:
        output_dir = Path(args.out).resolve()
    t_list = _parse_t_list(args.t_list)
    if not t_list:
        raise ConfigError("mem-report needs a nonempty --t-list")
    data = _load_data(dataset_path)
    step = cfg.step_size if cfg.step_size is not None else 1.0

    rows = []
    for t1 in t_list:
        steps = max(1, math.ceil(t1 / step))
        for variant in ("cgnn", "cgnn-discrete"):
            if variant == "cgnn":
                run_cfg = dataclasses.replace(
                    cfg, variant=variant, t1=float(t1), step_size=step
                )
            else:
                run_cfg = dataclasses.replace(cfg, variant=variant, discrete_steps=steps)
            run_cfg.validate()
            rng = np.random.default_rng(run_cfg.seed)
            params = init_params(
                data.num_nodes, data.num_features, data.num_classes, run_cfg, rng
            )
            with memtrack.tracking() as tracker:
                gradients(params, data, run_cfg)
            rows.append(
                {"variant": variant, "t1": t1, "steps": steps, "peak_live": tracker.peak}
            )

    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "mem.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant,t1,steps,peak_live\n")
        for row in rows:
            fh.write(
                f"{row['variant']},{_fmt(row['t1'])},{row['steps']},{row['peak_live']}\n"
            )
    from cgnn.plots import save_mem_plot

    save_mem_plot(rows, output_dir / "mem.png")
    print(f"mem-report: {len(rows)} rows -> {output_dir / 'mem.csv'}")
    return 0


def cmd_gen_synth(args) -> int:
    spec = SbmSpec(
        blocks=args.blocks,
        nodes_per_block=args.nodes_per_block,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        signal=args.signal,
        seed=args.seed if args.seed is not None else 7,
    )
    ds = generate_sbm(spec)
    save_dataset(ds, args.out)
    print(
        f"gen-synth: {ds.num_nodes} nodes, {len(ds.graph.edges)} edges, "
        f"{ds.num_classes} classes -> {args.out}"
    )
    return 0


def _parse_t_list(raw: str) -> list[float]:
    if not raw.strip():
        return []
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --t-list value: {raw!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgnn", description="Continuous graph neural network experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run-config JSON path")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--variant", help="variant override")

    p_train = sub.add_parser("train", help="train one model and write metrics/checkpoint")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on every split")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint directory (default: output_dir)")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep-time", help="train across a list of ending times")
    add_common(p_sweep)
    p_sweep.add_argument("--t-list", required=True, help="comma-separated ending times")
    p_sweep.add_argument("--variants", help="comma-separated variants (default: config variant)")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_sweep.set_defaults(func=cmd_sweep_time)

    p_verify = sub.add_parser("verify", help="run the closed-form oracle suite")
    p_verify.add_argument(
        "--zero-tolerance",
        action="store_true",
        help="fault injection: force all tolerances to 0 (self-test, must fail)",
    )
    p_verify.set_defaults(func=cmd_verify)

    p_mem = sub.add_parser("mem-report", help="peak live-buffer counts per step count")
    add_common(p_mem)
    p_mem.add_argument("--t-list", required=True, help="comma-separated ending times")
    p_mem.set_defaults(func=cmd_mem_report)

    p_gen = sub.add_parser("gen-synth", help="write a synthetic block-model dataset")
    p_gen.add_argument("--blocks", type=int, default=4)
    p_gen.add_argument("--nodes-per-block", type=int, default=100)
    p_gen.add_argument("--p-in", type=float, default=0.05)
    p_gen.add_argument("--p-out", type=float, default=0.005)
    p_gen.add_argument("--feature-dim", type=int, default=16)
    p_gen.add_argument("--signal", type=float, default=0.3)
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.set_defaults(func=cmd_gen_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, GraphError, OracleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
