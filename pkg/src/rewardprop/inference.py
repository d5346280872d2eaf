"""Transductive reward inference on a slice's propagation graph.

With the weight matrix split into the unlabeled-row blocks W_UL (to labeled
columns) and W_UU (to unlabeled columns), the unknown rewards satisfy the
update

    R_U <- W_UU R_U + W_UL R_L,

whose limit is the unique fixed point R_U = (I - W_UU)^(-1) W_UL R_L when the
unlabeled block is a contraction. Two equivalent solvers are provided: the
iteration itself (a truncated geometric series when started from zero) and a
direct LU solve of (I - W_UU) R_U = W_UL R_L. Contractivity is certified by
the max row sum of W_UU being below 1, which holds for every fully connected
slice with at least one label; element-wise bounds alone would not be enough.

:func:`infer_rewards` runs the whole per-slice pipeline (train, build, solve)
over a sequentially sliced dataset and merges the inferred rewards back into a
fully labeled copy.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import PartiallyLabeledDataset, Slice, borrow_labels, slice_sequential
from .distance import DistanceConfig
from .errors import (
    MaxItersExceeded,
    NoLabeledNodes,
    NotContractive,
    NoUnlabeledNodes,
    RewardPropError,
    SingularSystem,
)
from .graph import RewardGraph, ShapingParams, build_weight_matrix
from .training import TrainConfig, TrainReport, train

PIVOT_THRESHOLD = 1e-14
RCOND_THRESHOLD = 1e-12


@dataclass(frozen=True)
class InferenceConfig:
    """Solver selection and iteration limits."""

    method: str = "auto"  # "iterative", "direct", or "auto"
    max_iters: int = 10000
    tol: float = 1e-10
    direct_size_cap: int = 4096

    def __post_init__(self):
        if self.method not in ("iterative", "direct", "auto"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass
class InferenceResult:
    """Inferred rewards over the unlabeled nodes plus convergence evidence."""

    rewards_u: np.ndarray
    iterations_used: int
    residual: float
    contraction_bound: float

    def summary_dict(self) -> dict:
        return {
            "num_unlabeled": int(len(self.rewards_u)),
            "iterations_used": self.iterations_used,
            "residual": self.residual,
            "contraction_bound": self.contraction_bound,
        }


def _residual(w_uu, w_ul, labels, r_u) -> float:
    return float(np.max(np.abs(r_u - (w_uu @ r_u + w_ul @ labels)), initial=0.0))


def solve_blocks(w_uu: np.ndarray, w_ul: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Solve (I - W_UU) R_U = W_UL R_L by LU factorization with partial pivoting.

    The explicit inverse is never formed. Raises :class:`SingularSystem` when a
    pivot falls below ``PIVOT_THRESHOLD`` or the estimated reciprocal condition
    number falls below ``RCOND_THRESHOLD`` (a group of unlabeled nodes whose
    connection to the labels has underflowed; solving would amplify rounding
    noise into arbitrarily large rewards).
    """
    w_uu = np.asarray(w_uu, dtype=np.float64)
    w_ul = np.asarray(w_ul, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    system = np.eye(w_uu.shape[0]) - w_uu
    anorm = np.abs(system).sum(axis=0).max() if system.size else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(system, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min(initial=np.inf) < PIVOT_THRESHOLD:
        raise SingularSystem(
            f"(I - W_UU) has pivot {pivots.min():.3e} below {PIVOT_THRESHOLD:.0e}"
        )
    rcond, info = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
    if info == 0 and rcond < RCOND_THRESHOLD:
        raise SingularSystem(
            f"(I - W_UU) is numerically singular (rcond {rcond:.3e} < {RCOND_THRESHOLD:.0e})"
        )
    return scipy.linalg.lu_solve((lu, piv), w_ul @ labels, check_finite=False)


def iterate_blocks(
    w_uu: np.ndarray,
    w_ul: np.ndarray,
    labels: np.ndarray,
    max_iters: int = 10000,
    tol: float = 1e-10,
) -> tuple[np.ndarray, int]:
    """Run the propagation update from R_U = 0 until the step norm drops below tol.

    Starting from zero makes iterate t exactly the t-term truncated geometric
    series. Returns (R_U, iterations). Raises :class:`MaxItersExceeded` if the
    cap is hit first.
    """
    source = w_ul @ labels
    r_u = np.zeros(w_uu.shape[0])
    for iteration in range(1, max_iters + 1):
        r_next = w_uu @ r_u + source
        step = np.max(np.abs(r_next - r_u), initial=0.0)
        r_u = r_next
        if step < tol:
            return r_u, iteration
    raise MaxItersExceeded(f"no convergence to {tol:g} within {max_iters} iterations")


def contraction_bound(w_uu: np.ndarray) -> float:
    """Max row sum (infinity norm) of the unlabeled-unlabeled block."""
    if w_uu.shape[0] == 0:
        return 0.0
    return float(np.abs(w_uu).sum(axis=1).max())


def _check_partition(graph: RewardGraph) -> None:
    if graph.num_labeled == 0:
        raise NoLabeledNodes("slice has no labeled nodes")
    if graph.num_unlabeled == 0:
        raise NoUnlabeledNodes("slice has no unlabeled nodes")


def propagate_iterative(
    graph: RewardGraph, labels: np.ndarray, config: InferenceConfig = InferenceConfig()
) -> InferenceResult:
    """Iterative reward propagation on the graph's unlabeled block."""
    _check_partition(graph)
    labels = np.asarray(labels, dtype=np.float64)
    bound = contraction_bound(graph.w_uu)
    if bound >= 1.0:
        raise NotContractive(
            f"max row sum of W_UU is {bound:.6f} >= 1; unlabeled nodes see no labeled mass"
        )
    r_u, iterations = iterate_blocks(
        graph.w_uu, graph.w_ul, labels, max_iters=config.max_iters, tol=config.tol
    )
    return InferenceResult(
        rewards_u=r_u,
        iterations_used=iterations,
        residual=_residual(graph.w_uu, graph.w_ul, labels, r_u),
        contraction_bound=bound,
    )


def solve_fixed_point(graph: RewardGraph, labels: np.ndarray) -> InferenceResult:
    """Direct solve of the fixed-point equation; iterations_used is 0."""
    _check_partition(graph)
    labels = np.asarray(labels, dtype=np.float64)
    r_u = solve_blocks(graph.w_uu, graph.w_ul, labels)
    return InferenceResult(
        rewards_u=r_u,
        iterations_used=0,
        residual=_residual(graph.w_uu, graph.w_ul, labels, r_u),
        contraction_bound=contraction_bound(graph.w_uu),
    )


# --- end-to-end pipeline -------------------------------------------------------


@dataclass
class SliceReport:
    """Everything the pipeline did to one slice."""

    index: int
    start: int
    stop: int
    num_records: int
    num_labeled: int
    num_unlabeled: int
    borrowed: int = 0
    skipped: bool = False
    method: str | None = None
    train_report: TrainReport | None = None
    inference: InferenceResult | None = None
    timings: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "range": [self.start, self.stop],
            "num_records": self.num_records,
            "num_labeled": self.num_labeled,
            "num_unlabeled": self.num_unlabeled,
            "borrowed": self.borrowed,
            "skipped": self.skipped,
            "method": self.method,
            "train": self.train_report.to_json_dict() if self.train_report else None,
            "inference": self.inference.summary_dict() if self.inference else None,
            "timings": {k: float(v) for k, v in self.timings.items()},
        }


def _resolve_method(config: InferenceConfig, num_unlabeled: int) -> str:
    if config.method == "auto":
        return "direct" if num_unlabeled <= config.direct_size_cap else "iterative"
    return config.method


def _process_slice(
    index: int,
    slice_: Slice,
    train_config: TrainConfig,
    distance_config: DistanceConfig,
    inference_config: InferenceConfig,
) -> SliceReport:
    start, stop = slice_.parent_range
    report = SliceReport(
        index=index,
        start=start,
        stop=stop,
        num_records=slice_.num_records,
        num_labeled=slice_.num_labeled - slice_.borrowed_count,
        num_unlabeled=slice_.num_unlabeled,
        borrowed=slice_.borrowed_count,
    )
    if slice_.num_unlabeled == 0:
        report.skipped = True
        return report

    trainable = slice_.num_labeled >= 2 and slice_.borrowed_count == 0
    if trainable:
        t0 = time.perf_counter()
        report.train_report = train(slice_, train_config, distance_config)
        report.timings["train_s"] = time.perf_counter() - t0
        params = report.train_report.final_params
    else:
        # single-label and label-borrowing slices are inferred with the
        # untrained (uniform) shaping weights
        params = ShapingParams.uniform(slice_.schema.num_factors, train_config.init_theta)

    t0 = time.perf_counter()
    graph = build_weight_matrix(slice_, params, distance_config)
    report.timings["build_s"] = time.perf_counter() - t0

    labels = slice_.labels()
    report.method = _resolve_method(inference_config, graph.num_unlabeled)
    t0 = time.perf_counter()
    if report.method == "direct":
        report.inference = solve_fixed_point(graph, labels)
    else:
        report.inference = propagate_iterative(graph, labels, inference_config)
    report.timings["solve_s"] = time.perf_counter() - t0
    return report


def infer_rewards(
    dataset: PartiallyLabeledDataset,
    slice_size: int,
    train_config: TrainConfig = TrainConfig(),
    distance_config: DistanceConfig = DistanceConfig(),
    inference_config: InferenceConfig = InferenceConfig(),
    borrow_k: int = 0,
    jobs: int = 1,
) -> tuple[PartiallyLabeledDataset, list[SliceReport]]:
    """Fill in every missing reward, slice by slice.

    Original labels are carried over untouched; each unlabeled record receives
    the value inferred within its own slice. Slice failures are re-raised with
    the slice index and record range prepended.
    """
    slices = slice_sequential(dataset, slice_size, allow_unlabeled=borrow_k > 0)
    if borrow_k > 0:
        slices = borrow_labels(slices, borrow_k)

    def run(indexed) -> SliceReport:
        i, sl = indexed
        try:
            return _process_slice(i, sl, train_config, distance_config, inference_config)
        except RewardPropError as exc:
            raise type(exc)(
                f"slice {i} (records [{sl.parent_range[0]}, {sl.parent_range[1]})): {exc}"
            ) from exc

    if jobs > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run, enumerate(slices)))
    else:
        reports = [run(item) for item in enumerate(slices)]

    filled: dict[int, float] = {}
    for sl, report in zip(slices, reports):
        if report.inference is None:
            continue
        start = sl.parent_range[0]
        for value, position in zip(report.inference.rewards_u, sl.unlabeled_positions):
            filled[start + int(position)] = float(value)
    return dataset.with_rewards(filled), reports
