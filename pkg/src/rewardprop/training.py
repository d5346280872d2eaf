"""Fitting the shaping parameters by leave-one-out reward prediction.

Each labeled node l gets a predicted reward from its labeled peers,

    xi_l = sum_{k != l} c_lk r_k,

and the parameters minimize H = (1 / 2 Z_L) * sum_l (xi_l - r_l)^2 by plain
gradient descent with a backtracking line search.

Peer weights c_lk come in two flavors. By default the propagation weights over
labeled peers are renormalized to sum to 1, which makes xi a true weighted
average (constant labels give H = 0 and shifting all labels by a constant
leaves H unchanged). The strict mode keeps the raw row weights, whose labeled
mass is below 1 whenever the slice has unlabeled nodes; it is retained for
fidelity comparisons behind a flag.

The gradient of H with respect to each factor weight theta_d is analytic:

    dH/dtheta_d = (2 theta_d / Z_L) * sum_{l,k} (r_l - xi_l)(r_k - xi_l) c_lk l_d(l,k)^2

(renormalized mode; the strict mode adds the softmax-denominator correction
over unlabeled peers). Unit tests verify it against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Slice
from .distance import DistanceConfig, pairwise_factor_distances
from .errors import DivergenceDetected, LengthMismatch, TooFewLabels
from .graph import RewardGraph, ShapingParams, _F_CLAMP


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent hyperparameters (the propagation model fixes none of them)."""

    learning_rate: float = 1.0
    max_iters: int = 500
    grad_tol: float = 1e-6
    init_theta: float = 1.0
    seed: int = 0
    renormalize_peers: bool = True
    tie_factors: bool = False
    max_halvings: int = 30
    loss_floor: float = 1e-12

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.grad_tol <= 0:
            raise ValueError(f"grad_tol must be > 0, got {self.grad_tol}")
        if self.loss_floor < 0:
            raise ValueError(f"loss_floor must be >= 0, got {self.loss_floor}")


@dataclass
class TrainReport:
    """Outcome of fitting one slice."""

    final_params: ShapingParams
    loss_trace: list[float]
    iterations_used: int
    converged: bool

    def to_json_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.final_params.theta],
            "loss_trace": [float(v) for v in self.loss_trace],
            "iterations_used": self.iterations_used,
            "converged": self.converged,
        }


class _SliceObjective:
    """Distance tables for one slice, reused across every H/gradient evaluation.

    Labeled rows against labeled columns in renormalized mode, against all
    columns in strict mode (the softmax denominator then runs over the whole
    slice). Columns are in labeled-first order, so row l's self-column is l.
    """

    def __init__(self, slice_: Slice, dconfig: DistanceConfig, renormalize: bool = True):
        if slice_.num_labeled < 2:
            raise TooFewLabels(
                f"training needs >= 2 labeled nodes, slice has {slice_.num_labeled}"
            )
        self.num_labeled = slice_.num_labeled
        self.labels = slice_.labels()
        self.renormalize = renormalize
        order = np.concatenate([slice_.labeled_positions, slice_.unlabeled_positions])
        x = slice_.matrix[order]
        rows = x[: self.num_labeled]
        cols = rows if renormalize else x
        ell = pairwise_factor_distances(rows, cols, slice_.schema, dconfig)
        self.sq_dist = ell**2  # (num_factors, Z_L, num_cols)

    def _peer_weights(self, theta: np.ndarray) -> np.ndarray:
        f = np.tensordot(theta**2, self.sq_dist, axes=1)
        f[~np.isfinite(f)] = _F_CLAMP
        idx = np.arange(self.num_labeled)
        f[idx, idx] = np.inf  # exclude each node from its own prediction
        row_min = f.min(axis=1)
        c = np.exp(row_min[:, None] - f)
        c /= c.sum(axis=1, keepdims=True)
        return c

    def loss(self, theta: np.ndarray) -> float:
        c = self._peer_weights(theta)
        with np.errstate(over="ignore"):  # overflow ends as DivergenceDetected
            xi = c[:, : self.num_labeled] @ self.labels
            resid = xi - self.labels
            return float(resid @ resid) / (2 * self.num_labeled)

    def loss_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        z_l = self.num_labeled
        r = self.labels
        c = self._peer_weights(theta)
        with np.errstate(over="ignore"):
            xi = c[:, :z_l] @ r
            s = r - xi
            h = float(s @ s) / (2 * z_l)
            grad = np.empty_like(theta)
            for d in range(len(theta)):
                a = c * self.sq_dist[d]
                u = a[:, :z_l] @ r - xi * a.sum(axis=1)
                grad[d] = (2.0 * theta[d] / z_l) * float(s @ u)
        return h, grad


def predicted_rewards(
    graph: RewardGraph, labels: np.ndarray, renormalize: bool = True
) -> np.ndarray:
    """Leave-one-out predictions xi for every labeled node at once."""
    z_l = graph.num_labeled
    if z_l < 2:
        raise TooFewLabels(f"need >= 2 labeled nodes, graph has {z_l}")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (z_l,):
        raise LengthMismatch(f"labels shape {labels.shape} != ({z_l},)")
    c = np.array(graph.w_ll)  # zero diagonal by construction
    if renormalize:
        peer_mass = c.sum(axis=1, keepdims=True)
        if np.any(peer_mass <= 0):
            raise TooFewLabels("a labeled node carries zero weight to its labeled peers")
        c = c / peer_mass
    return c @ labels


def predicted_reward(
    graph: RewardGraph, labels: np.ndarray, l: int, renormalize: bool = True
) -> float:
    """Predicted reward xi_l of labeled node l from its labeled peers."""
    if not 0 <= l < graph.num_labeled:
        raise ValueError(f"l={l} is not a labeled-node index (Z_L={graph.num_labeled})")
    return float(predicted_rewards(graph, labels, renormalize=renormalize)[l])


def loss(graph: RewardGraph, labels: np.ndarray, renormalize: bool = True) -> float:
    """Mean squared leave-one-out prediction error H over labeled nodes (halved)."""
    xi = predicted_rewards(graph, labels, renormalize=renormalize)
    resid = xi - np.asarray(labels, dtype=np.float64)
    return float(resid @ resid) / (2 * graph.num_labeled)


def gradient(
    params: ShapingParams,
    slice_: Slice,
    config: DistanceConfig = DistanceConfig(),
    renormalize: bool = True,
) -> np.ndarray:
    """Analytic dH/dtheta for the slice at the given parameters."""
    if params.num_factors != slice_.schema.num_factors:
        raise LengthMismatch(
            f"params have {params.num_factors} factors, schema has {slice_.schema.num_factors}"
        )
    problem = _SliceObjective(slice_, config, renormalize)
    _, grad = problem.loss_and_gradient(np.array(params.theta))
    return grad


def train(
    slice_: Slice,
    config: TrainConfig = TrainConfig(),
    dconfig: DistanceConfig = DistanceConfig(),
) -> TrainReport:
    """Plain gradient descent on H with backtracking (halve the step until the
    loss decreases, up to ``max_halvings``). The loss trace is therefore
    non-increasing; iteration stops at ``grad_tol``, ``max_iters``, or when no
    decreasing step exists.
    """
    problem = _SliceObjective(slice_, dconfig, config.renormalize_peers)
    theta = np.full(slice_.schema.num_factors, float(config.init_theta))
    h, grad = problem.loss_and_gradient(theta)
    if not np.isfinite(h):
        raise DivergenceDetected(f"initial loss is {h}")
    trace = [h]
    converged = False
    iterations = 0
    for _ in range(config.max_iters):
        if config.tie_factors:
            step_dir = np.full_like(theta, grad.sum())  # d/dt of H(t * ones)
        else:
            step_dir = grad
        if np.max(np.abs(step_dir)) < config.grad_tol:
            converged = True
            break
        if h <= config.loss_floor:
            # predictions already match labels to fp precision; on separable
            # data the objective otherwise pushes theta toward exp underflow
            break
        eta = config.learning_rate
        candidate = None
        for _ in range(config.max_halvings + 1):
            trial = theta - eta * step_dir
            h_trial = problem.loss(trial)
            if np.isfinite(h_trial) and h_trial < h:
                candidate = (trial, h_trial)
                break
            eta *= 0.5
        if candidate is None:
            break  # no descent direction left at this scale
        theta, h = candidate
        if not np.isfinite(h):
            raise DivergenceDetected(f"loss became {h} at iteration {iterations + 1}")
        trace.append(h)
        iterations += 1
        h, grad = problem.loss_and_gradient(theta)
    else:
        # max_iters exhausted; check the tolerance one last time
        final_dir = np.full_like(theta, grad.sum()) if config.tie_factors else grad
        converged = bool(np.max(np.abs(final_dir)) < config.grad_tol)

    return TrainReport(
        final_params=ShapingParams(theta),
        loss_trace=trace,
        iterations_used=iterations,
        converged=converged,
    )
