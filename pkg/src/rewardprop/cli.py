"""Command-line front end: gen, infer, eval, and sweep subcommands.

Configuration resolves in fixed precedence: built-in defaults, then a flat
``key = value`` config file (``--config``), then ``REWARDPROP_*`` environment
variables, then explicit flags. The fully resolved configuration is echoed
into every report so artifacts are self-describing.

Exit codes are a stable contract: 0 success, 2 parse/validation failure,
3 slice or contractivity failure, 4 training failure, 5 evaluation
misalignment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import data as dataio
from .distance import DistanceConfig
from .errors import (
    DegenerateSlice,
    DivergenceDetected,
    EmptyDataset,
    EmptyInput,
    InfeasibleSpec,
    InsufficientFactors,
    IoFailure,
    LengthMismatch,
    MalformedHeader,
    MaxItersExceeded,
    NoLabeledNodes,
    NonFiniteValue,
    NotContractive,
    NoUnlabeledNodes,
    RewardPropError,
    SchemaMismatch,
    SingularSystem,
    SliceWithoutLabels,
    TooFewLabels,
)
from .inference import InferenceConfig, infer_rewards
from .synthbench import (
    PipelineSettings,
    SyntheticTaskSpec,
    evaluate_mse,
    generate_synthetic,
    run_factorization_ablation,
    run_norm_sweep,
    run_ratio_sweep,
)
from .training import TrainConfig

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SLICE = 3
EXIT_TRAIN = 4
EXIT_EVAL = 5

ENV_PREFIX = "REWARDPROP_"

_PARSE_ERRORS = (
    MalformedHeader,
    SchemaMismatch,
    NonFiniteValue,
    EmptyDataset,
    IoFailure,
    InfeasibleSpec,
    InsufficientFactors,
    LengthMismatch,
    EmptyInput,
    ValueError,
    json.JSONDecodeError,
    OSError,
)
_SLICE_ERRORS = (
    SliceWithoutLabels,
    NotContractive,
    DegenerateSlice,
    NoLabeledNodes,
    NoUnlabeledNodes,
    MaxItersExceeded,
    SingularSystem,
)
_TRAIN_ERRORS = (TooFewLabels, DivergenceDetected)


@dataclass
class RunConfig:
    """Resolved knobs shared by infer and sweep runs."""

    slice_size: int = 1000
    label_borrow: int = 0
    p_norm: float = 2.0
    method: str = "auto"
    tol: float = 1e-10
    max_iters: int = 10000
    lr: float = 1.0
    jobs: int = 1
    seed: int = 0
    strict_eq3: bool = False
    train_max_iters: int = 500
    grad_tol: float = 1e-6
    init_theta: float = 1.0
    num_batches: int = 5

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr,
            max_iters=self.train_max_iters,
            grad_tol=self.grad_tol,
            init_theta=self.init_theta,
            seed=self.seed,
            renormalize_peers=not self.strict_eq3,
        )

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(method=self.method, max_iters=self.max_iters, tol=self.tol)

    def distance_config(self) -> DistanceConfig:
        return DistanceConfig(self.p_norm)

    def to_json_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(raw: str, target_type):
    if target_type is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return target_type(raw)


def _parse_flat_config(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_config(config_path: str | None, args: argparse.Namespace) -> RunConfig:
    """defaults < config file < environment < explicit flags."""
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    type_map = {"int": int, "float": float, "bool": bool, "str": str}

    def apply(key: str, raw):
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        t = types[key]
        t = type_map.get(t, t) if isinstance(t, str) else t
        setattr(cfg, key, _coerce(raw, t) if isinstance(raw, str) else raw)

    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            for key, raw in _parse_flat_config(fh.read()).items():
                apply(key, raw)
    for key in types:
        env_val = os.environ.get(ENV_PREFIX + key.upper())
        if env_val is not None:
            apply(key, env_val)
    for key in types:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            apply(key, flag_val)
    return cfg


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--slice-size", dest="slice_size", type=int, default=None)
    parser.add_argument("--label-borrow", dest="label_borrow", type=int, default=None,
                        metavar="K", help="borrow K nearest labeled records into label-free slices")
    parser.add_argument("--p-norm", dest="p_norm", type=float, default=None)
    parser.add_argument("--method", choices=["iterative", "direct", "auto"], default=None)
    parser.add_argument("--tol", type=float, default=None)
    parser.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--strict-eq3", dest="strict_eq3", action="store_const", const=True,
                        default=None, help="use raw propagation weights for labeled peers "
                        "(no renormalization) during training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rewardprop",
                                     description="Transductive reward inference on propagation graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic benchmark dataset")
    p_gen.add_argument("spec", help="task spec JSON file")
    p_gen.add_argument("out", help="output dataset path")
    p_gen.add_argument("--truth", help="ground-truth output path (default: OUT.truth.json)")
    p_gen.add_argument("--format", choices=["jsonl", "binary"], default="jsonl")
    p_gen.add_argument("--seed", type=int, default=None, help="override the spec's seed")

    p_infer = sub.add_parser("infer", help="fill in missing rewards")
    p_infer.add_argument("data", help="input dataset (jsonl or binary)")
    p_infer.add_argument("out", help="output dataset path")
    p_infer.add_argument("--report", help="per-slice report path (default: OUT.report.json)")
    p_infer.add_argument("--format", choices=["jsonl", "binary"], default=None,
                         help="output format (default: same as input)")
    p_infer.add_argument("--figures", action="store_true",
                         help="render per-slice loss traces next to the report")
    _add_run_flags(p_infer)

    p_eval = sub.add_parser("eval", help="score inferred rewards against ground truth")
    p_eval.add_argument("inferred", help="fully labeled dataset")
    p_eval.add_argument("truth", help="ground-truth JSON written by gen")
    p_eval.add_argument("--batches", type=int, default=5)

    p_sweep = sub.add_parser("sweep", help="run an MSE sweep grid")
    p_sweep.add_argument("kind", choices=["ratio", "norm", "ablation"])
    p_sweep.add_argument("spec", help="task spec JSON (one object or a list)")
    p_sweep.add_argument("outdir", help="directory for CSV/JSON/figure outputs")
    p_sweep.add_argument("--ratios", default="0.05,0.10,0.15,0.20",
                         help="comma-separated label ratios (ratio sweep)")
    p_sweep.add_argument("--p-values", dest="p_values", default="1,1.5,2,2.5",
                         help="comma-separated norm exponents (norm sweep)")
    p_sweep.add_argument("--num-seeds", dest="num_seeds", type=int, default=5)
    p_sweep.add_argument("--no-figures", dest="figures", action="store_false", default=True)
    _add_run_flags(p_sweep)

    return parser


def _load_task_specs(path) -> list[SyntheticTaskSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        obj = [obj]
    if not isinstance(obj, list) or not obj:
        raise ValueError(f"{path}: expected a task object or non-empty list of tasks")
    return [SyntheticTaskSpec.from_json_dict(item) for item in obj]


def _write_truth(path, spec: SyntheticTaskSpec, dataset, truth) -> None:
    doc = {
        "task": spec.name,
        "spec": spec.to_json_dict(),
        "num_records": dataset.num_records,
        "labeled_indices": [int(i) for i in dataset.labeled_indices],
        "rewards": [float(v) for v in truth],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def cmd_gen(args) -> int:
    specs = _load_task_specs(args.spec)
    spec = specs[0]
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    dataset, truth = generate_synthetic(spec)
    dataio.save_dataset(dataset, args.out, format=args.format)
    _write_truth(args.truth or f"{args.out}.truth.json", spec, dataset, truth)
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = resolve_config(args.config, args)
    in_format = dataio.detect_format(args.data)
    dataset = dataio.load_dataset(args.data, format=in_format)
    result, reports = infer_rewards(
        dataset,
        slice_size=cfg.slice_size,
        train_config=cfg.train_config(),
        distance_config=cfg.distance_config(),
        inference_config=cfg.inference_config(),
        borrow_k=cfg.label_borrow,
        jobs=cfg.jobs,
    )
    out_format = args.format or in_format
    dataio.save_dataset(result, args.out, format=out_format)
    report_path = args.report or f"{args.out}.report.json"
    totals = {
        "num_slices": len(reports),
        "num_records": dataset.num_records,
        "num_inferred": int(dataset.num_unlabeled),
        "build_s": sum(r.timings.get("build_s", 0.0) for r in reports),
        "train_s": sum(r.timings.get("train_s", 0.0) for r in reports),
        "solve_s": sum(r.timings.get("solve_s", 0.0) for r in reports),
    }
    doc = {
        "config": cfg.to_json_dict(),
        "totals": totals,
        "slices": [r.to_json_dict() for r in reports],
    }
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    if args.figures:
        from .reporting import save_loss_trace_figure

        save_loss_trace_figure(reports, f"{report_path.removesuffix('.json')}.png")
    return EXIT_OK


def cmd_eval(args) -> int:
    inferred = dataio.load_dataset(args.inferred)
    with open(args.truth, "r", encoding="utf-8") as fh:
        truth_doc = json.load(fh)
    rewards = np.asarray(truth_doc["rewards"], dtype=np.float64)
    labeled = set(int(i) for i in truth_doc["labeled_indices"])
    if inferred.num_records != len(rewards):
        print(
            f"error: inferred has {inferred.num_records} records, truth has {len(rewards)}",
            file=sys.stderr,
        )
        return EXIT_EVAL
    eval_indices = [i for i in range(len(rewards)) if i not in labeled]
    missing = [i for i in eval_indices if inferred.records[i].reward is None]
    if missing:
        print(f"error: {len(missing)} unlabeled records lack rewards (first: {missing[0]})",
              file=sys.stderr)
        return EXIT_EVAL
    if not eval_indices:
        print("0")
        return EXIT_OK
    values = np.array([inferred.records[i].reward for i in eval_indices])
    mse = evaluate_mse(values, rewards[eval_indices], num_batches=args.batches)
    print(f"{mse:.12g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from dataclasses import replace

    from .reporting import save_sweep_figure, write_sweep_csv

    cfg = resolve_config(args.config, args)
    specs = _load_task_specs(args.spec)
    if args.seed is not None:
        specs = [replace(s, seed=args.seed) for s in specs]
    settings = PipelineSettings(
        p=cfg.p_norm,
        slice_size=cfg.slice_size if cfg.slice_size > 0 else None,
        train_config=cfg.train_config(),
        inference_config=cfg.inference_config(),
        borrow_k=cfg.label_borrow,
        num_batches=cfg.num_batches,
        jobs=cfg.jobs,
    )
    if args.kind == "ratio":
        ratios = [float(v) for v in args.ratios.split(",")]
        report = run_ratio_sweep(specs, ratios, settings, num_seeds=args.num_seeds)
    elif args.kind == "norm":
        p_values = [float(v) for v in args.p_values.split(",")]
        report = run_norm_sweep(specs, p_values, settings, num_seeds=args.num_seeds)
    else:
        merged = None
        for spec in specs:
            rep = run_factorization_ablation(spec, settings, num_seeds=args.num_seeds)
            if merged is None:
                merged = rep
            else:
                merged.cells.extend(rep.cells)
        report = merged
    report.summary["config"] = cfg.to_json_dict()
    report.summary["num_seeds"] = args.num_seeds

    os.makedirs(args.outdir, exist_ok=True)
    base = os.path.join(args.outdir, f"sweep_{args.kind}")
    write_sweep_csv(report, base + ".csv")
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
    if args.figures:
        save_sweep_figure(report, base + ".png")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    handler = {"gen": cmd_gen, "infer": cmd_infer, "eval": cmd_eval, "sweep": cmd_sweep}[
        args.command
    ]
    try:
        return handler(args)
    except _SLICE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SLICE
    except _TRAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except RewardPropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
