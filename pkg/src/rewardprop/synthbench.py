"""Synthetic ground-truth benchmarks for the reward-inference pipeline.

Policy-return experiments need full RL environments; at desk scale the
benchmark instead generates datasets from known reward functions and scores
inference by mean squared error against the withheld ground truth. Three
reward models cover the interesting regimes:

* ``weighted_quadratic``: i.i.d. Gaussian payloads, reward = sum_d w_d ||x_d||^2.
* ``cluster_piecewise``: Gaussian-mixture payloads; factors with nonzero weight
  carry the cluster structure and set a per-cluster constant reward, factors
  with zero weight are pure structureless noise.
* ``trajectory_chain``: a small-increment random walk mimicking chained MDP
  transitions, with the quadratic reward evaluated along the path.

Sweeps over label ratio, norm exponent, and the four factorization methods
(full factorization, states-only, actions-only, fully collapsed) aggregate the
batch-averaged MSE over seeds into a grid report.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Factor, FactorSchema, PartiallyLabeledDataset, StateActionRecord
from .distance import DistanceConfig
from .errors import EmptyInput, InfeasibleSpec, InsufficientFactors, LengthMismatch
from .inference import InferenceConfig, infer_rewards
from .training import TrainConfig

REWARD_MODELS = ("weighted_quadratic", "cluster_piecewise", "trajectory_chain")

ABLATION_METHODS = {
    "method_1": (False, False),  # states and actions fully factored
    "method_2": (False, True),  # states factored, action one block
    "method_3": (True, False),  # state one block, actions factored
    "method_4": (True, True),  # one state factor + one action factor
}


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Everything needed to deterministically synthesize one benchmark dataset."""

    name: str
    schema: FactorSchema
    reward_model: str
    factor_weights: tuple[float, ...]
    num_records: int
    label_ratio: float
    noise_std: float = 0.0
    seed: int = 0
    num_clusters: int = 4
    center_scale: float = 3.0
    within_scale: float = 0.3
    noise_feature_scale: float = 1.0
    step_scale: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "factor_weights", tuple(float(w) for w in self.factor_weights))
        if self.reward_model not in REWARD_MODELS:
            raise ValueError(f"unknown reward_model {self.reward_model!r}")
        if len(self.factor_weights) != self.schema.num_factors:
            raise LengthMismatch(
                f"{len(self.factor_weights)} weights for {self.schema.num_factors} factors"
            )
        if not 0 < self.label_ratio <= 1:
            raise ValueError(f"label_ratio must be in (0, 1], got {self.label_ratio}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.num_records < 1:
            raise ValueError("num_records must be >= 1")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "schema": self.schema.to_json_dict(),
            "reward_model": self.reward_model,
            "factor_weights": list(self.factor_weights),
            "num_records": self.num_records,
            "label_ratio": self.label_ratio,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "num_clusters": self.num_clusters,
            "center_scale": self.center_scale,
            "within_scale": self.within_scale,
            "noise_feature_scale": self.noise_feature_scale,
            "step_scale": self.step_scale,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SyntheticTaskSpec":
        known = {
            "name",
            "reward_model",
            "factor_weights",
            "num_records",
            "label_ratio",
            "noise_std",
            "seed",
            "num_clusters",
            "center_scale",
            "within_scale",
            "noise_feature_scale",
            "step_scale",
        }
        kwargs = {k: v for k, v in obj.items() if k in known}
        kwargs["schema"] = FactorSchema.from_json_dict(obj["schema"])
        kwargs["factor_weights"] = tuple(obj["factor_weights"])
        return cls(**kwargs)


def generate_synthetic(spec: SyntheticTaskSpec) -> tuple[PartiallyLabeledDataset, np.ndarray]:
    """Build the dataset and its full ground-truth reward vector.

    Labeled records reveal their ground-truth reward exactly; ``noise_std``
    adds an unpredictable component to the rewards themselves. A fixed seed
    reproduces the dataset byte for byte.
    """
    z = spec.num_records
    z_l = z if spec.label_ratio == 1.0 else int(round(spec.label_ratio * z))
    if z_l < 2:
        raise InfeasibleSpec(
            f"label_ratio {spec.label_ratio} of {z} records gives {z_l} labels, need >= 2"
        )
    rng = np.random.default_rng(spec.seed)
    schema = spec.schema
    total = schema.state_dim + schema.action_dim
    blocks = schema.factor_slices()
    weights = np.asarray(spec.factor_weights)

    x = np.empty((z, total))
    if spec.reward_model == "weighted_quadratic":
        x[:] = rng.normal(size=(z, total))
        base = _weighted_quadratic(x, blocks, weights)
    elif spec.reward_model == "cluster_piecewise":
        assignment = rng.integers(0, spec.num_clusters, size=z)
        base = np.zeros(z)
        for d, block in enumerate(blocks):
            dim = block.stop - block.start
            if weights[d] != 0.0:
                centers = rng.normal(0.0, spec.center_scale, size=(spec.num_clusters, dim))
                x[:, block] = centers[assignment] + rng.normal(
                    0.0, spec.within_scale, size=(z, dim)
                )
                base += weights[d] * (centers[assignment] ** 2).sum(axis=1)
            else:
                x[:, block] = rng.normal(0.0, spec.noise_feature_scale, size=(z, dim))
    else:  # trajectory_chain
        origin = rng.normal(size=total)
        steps = rng.normal(0.0, spec.step_scale, size=(z, total))
        steps[0] = 0.0
        x[:] = origin + np.cumsum(steps, axis=0)
        for d, block in enumerate(blocks):
            if weights[d] == 0.0:
                # zero-weight factors are structureless noise, not part of the walk
                dim = block.stop - block.start
                x[:, block] = rng.normal(0.0, spec.noise_feature_scale, size=(z, dim))
        base = _weighted_quadratic(x, blocks, weights)

    truth = base
    if spec.noise_std > 0:
        truth = base + spec.noise_std * rng.normal(size=z)

    labeled = np.sort(rng.choice(z, size=z_l, replace=False))
    labeled_set = set(int(i) for i in labeled)
    sdim = schema.state_dim
    records = tuple(
        StateActionRecord(
            x[i, :sdim], x[i, sdim:], float(truth[i]) if i in labeled_set else None
        )
        for i in range(z)
    )
    return PartiallyLabeledDataset(schema, records), truth


def _weighted_quadratic(x, blocks, weights) -> np.ndarray:
    out = np.zeros(x.shape[0])
    for d, block in enumerate(blocks):
        if weights[d] != 0.0:
            out += weights[d] * (x[:, block] ** 2).sum(axis=1)
    return out


def standardize_dataset(dataset: PartiallyLabeledDataset) -> PartiallyLabeledDataset:
    """Z-score every payload coordinate across the dataset (rewards untouched).

    Optional preprocessing; the distance model itself applies no normalization.
    Constant coordinates map to zero.
    """
    m = dataset.matrix
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    std[std == 0] = 1.0
    scaled = (m - mean) / std
    sdim = dataset.schema.state_dim
    records = tuple(
        StateActionRecord(scaled[i, :sdim], scaled[i, sdim:], rec.reward)
        for i, rec in enumerate(dataset.records)
    )
    return PartiallyLabeledDataset(dataset.schema, records)


# --- evaluation ------------------------------------------------------------------


def evaluate_mse(inferred, truth, num_batches: int = 1) -> float:
    """Mean squared error, averaged over ``num_batches`` contiguous batches.

    With a single batch this is the plain mean of squared differences; the
    batched form mirrors how the benchmark reports grid cells.
    """
    inferred = np.asarray(inferred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if inferred.shape != truth.shape:
        raise LengthMismatch(f"length mismatch: {inferred.shape} vs {truth.shape}")
    if inferred.size == 0:
        raise EmptyInput("cannot evaluate MSE of empty vectors")
    if num_batches < 1:
        raise ValueError("num_batches must be >= 1")
    sq = (inferred - truth) ** 2
    batches = np.array_split(sq, min(num_batches, sq.size))
    return float(np.mean([b.mean() for b in batches]))


@dataclass
class PipelineSettings:
    """Pipeline knobs shared by every sweep cell."""

    p: float = 2.0
    slice_size: int | None = None  # None = whole dataset as one slice
    train_config: TrainConfig = field(default_factory=TrainConfig)
    inference_config: InferenceConfig = field(default_factory=InferenceConfig)
    borrow_k: int = 0
    num_batches: int = 5
    standardize: bool = False
    jobs: int = 1


def run_pipeline_mse(spec: SyntheticTaskSpec, settings: PipelineSettings) -> tuple[float, bool]:
    """Generate, infer, and score one task; returns (mse, vacuous_flag).

    A fully labeled task has no unlabeled records to score; its cell is
    reported as exactly zero with the vacuous flag set.
    """
    dataset, truth = generate_synthetic(spec)
    if dataset.num_unlabeled == 0:
        return 0.0, True
    work = standardize_dataset(dataset) if settings.standardize else dataset
    slice_size = settings.slice_size or dataset.num_records
    result, _ = infer_rewards(
        work,
        slice_size=max(2, slice_size),
        train_config=settings.train_config,
        distance_config=DistanceConfig(settings.p),
        inference_config=settings.inference_config,
        borrow_k=settings.borrow_k,
        jobs=settings.jobs,
    )
    unlabeled = dataset.unlabeled_indices
    inferred = np.array([result.records[i].reward for i in unlabeled])
    return evaluate_mse(inferred, truth[unlabeled], settings.num_batches), False


# --- sweep grids ------------------------------------------------------------------


@dataclass
class SweepCell:
    task: str
    axis_value: object
    mean_mse: float
    std_mse: float
    num_seeds: int
    vacuous: bool = False


@dataclass
class SweepReport:
    """Complete MSE grid for one sweep kind, plus derived summary statistics."""

    kind: str
    axis_name: str
    cells: list[SweepCell]
    summary: dict = field(default_factory=dict)

    def cell_grid(self) -> tuple[list[str], list, np.ndarray]:
        """(task names, axis values, mean-MSE matrix) in grid order."""
        tasks = list(dict.fromkeys(c.task for c in self.cells))
        axis = list(dict.fromkeys(c.axis_value for c in self.cells))
        grid = np.full((len(tasks), len(axis)), np.nan)
        for c in self.cells:
            grid[tasks.index(c.task), axis.index(c.axis_value)] = c.mean_mse
        return tasks, axis, grid

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axis_name": self.axis_name,
            "cells": [
                {
                    "task": c.task,
                    self.axis_name: c.axis_value,
                    "mean_mse": c.mean_mse,
                    "std_mse": c.std_mse,
                    "num_seeds": c.num_seeds,
                    "vacuous": c.vacuous,
                }
                for c in self.cells
            ],
            "summary": self.summary,
        }


def _aggregate_cell(task_name, axis_value, values, vacuous_flags) -> SweepCell:
    values = np.asarray(values)
    return SweepCell(
        task=task_name,
        axis_value=axis_value,
        mean_mse=float(values.mean()),
        std_mse=float(values.std()),
        num_seeds=len(values),
        vacuous=all(vacuous_flags),
    )


def _seed_variants(spec: SyntheticTaskSpec, num_seeds: int) -> list[SyntheticTaskSpec]:
    return [replace(spec, seed=spec.seed + i) for i in range(num_seeds)]


def run_ratio_sweep(
    specs: list[SyntheticTaskSpec],
    ratios: list[float],
    settings: PipelineSettings = PipelineSettings(),
    num_seeds: int = 5,
) -> SweepReport:
    """MSE grid over (task x label ratio), each cell averaged over seeds."""
    if list(ratios) != sorted(ratios):
        raise ValueError("ratios must be sorted ascending")
    cells = []
    for spec in specs:
        for ratio in ratios:
            values, flags = [], []
            for variant in _seed_variants(replace(spec, label_ratio=ratio), num_seeds):
                mse, vacuous = run_pipeline_mse(variant, settings)
                values.append(mse)
                flags.append(vacuous)
            cells.append(_aggregate_cell(spec.name, ratio, values, flags))
    return SweepReport(kind="ratio", axis_name="label_ratio", cells=cells)


def run_norm_sweep(
    specs: list[SyntheticTaskSpec],
    p_values: list[float],
    settings: PipelineSettings = PipelineSettings(),
    num_seeds: int = 5,
) -> SweepReport:
    """MSE grid over (task x norm exponent) with identical seeds per column.

    The summary carries the per-task sensitivity statistic
    (max - min) / mean of the cell means across p.
    """
    for p in p_values:
        DistanceConfig(p)  # reject p < 1 up front
    cells = []
    sensitivity = {}
    for spec in specs:
        task_means = []
        for p in p_values:
            values, flags = [], []
            for variant in _seed_variants(spec, num_seeds):
                mse, vacuous = run_pipeline_mse(variant, replace_settings(settings, p=p))
                values.append(mse)
                flags.append(vacuous)
            cell = _aggregate_cell(spec.name, p, values, flags)
            cells.append(cell)
            task_means.append(cell.mean_mse)
        mean_of_means = float(np.mean(task_means))
        spread = float(np.max(task_means) - np.min(task_means))
        sensitivity[spec.name] = spread / mean_of_means if mean_of_means > 0 else 0.0
    return SweepReport(
        kind="norm", axis_name="p", cells=cells, summary={"sensitivity": sensitivity}
    )


def replace_settings(settings: PipelineSettings, **changes) -> PipelineSettings:
    return replace(settings, **changes)


def collapse_schema(
    schema: FactorSchema, collapse_states: bool, collapse_actions: bool
) -> FactorSchema:
    """Concatenate factor blocks into single factors on either side."""
    state = schema.state_factors
    action = schema.action_factors
    if collapse_states:
        state = (Factor("+".join(f.name for f in schema.state_factors), schema.state_dim),)
    if collapse_actions:
        action = (Factor("+".join(f.name for f in schema.action_factors), schema.action_dim),)
    return FactorSchema(state, action)


def run_factorization_ablation(
    spec: SyntheticTaskSpec,
    settings: PipelineSettings = PipelineSettings(),
    num_seeds: int = 5,
    require_distinct: bool = False,
) -> SweepReport:
    """MSE over the four factor-composition methods on one task.

    Datasets are generated once per seed under the original schema; each method
    only re-declares the factor boundaries before rerunning the pipeline, so
    the four columns see identical payloads and labels. With M = N = 1 the
    methods coincide and the report contains four identical cells (set
    ``require_distinct`` to reject such schemas instead).
    """
    m, n = spec.schema.num_state_factors, spec.schema.num_action_factors
    if require_distinct and (m < 2 or n < 2):
        raise InsufficientFactors(
            f"need M >= 2 and N >= 2 state/action factors for distinct methods, got M={m}, N={n}"
        )
    per_method: dict[str, list[float]] = {name: [] for name in ABLATION_METHODS}
    flags: dict[str, list[bool]] = {name: [] for name in ABLATION_METHODS}
    for variant in _seed_variants(spec, num_seeds):
        dataset, truth = generate_synthetic(variant)
        unlabeled = dataset.unlabeled_indices
        for name, (cs, ca) in ABLATION_METHODS.items():
            collapsed = PartiallyLabeledDataset(
                collapse_schema(spec.schema, cs, ca), dataset.records
            )
            if len(unlabeled) == 0:
                per_method[name].append(0.0)
                flags[name].append(True)
                continue
            work = standardize_dataset(collapsed) if settings.standardize else collapsed
            result, _ = infer_rewards(
                work,
                slice_size=max(2, settings.slice_size or dataset.num_records),
                train_config=settings.train_config,
                distance_config=DistanceConfig(settings.p),
                inference_config=settings.inference_config,
                borrow_k=settings.borrow_k,
                jobs=settings.jobs,
            )
            inferred = np.array([result.records[i].reward for i in unlabeled])
            per_method[name].append(
                evaluate_mse(inferred, truth[unlabeled], settings.num_batches)
            )
            flags[name].append(False)
    cells = [
        _aggregate_cell(spec.name, name, per_method[name], flags[name])
        for name in ABLATION_METHODS
    ]
    return SweepReport(
        kind="ablation",
        axis_name="method",
        cells=cells,
        summary={
            "methods": {
                "method_1": "states and actions fully factored",
                "method_2": "states factored, action as one factor",
                "method_3": "state as one factor, actions factored",
                "method_4": "one state factor and one action factor",
            }
        },
    )
