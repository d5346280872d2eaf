"""Reward-propagation graph construction.

Every pair of records in a slice is connected; the edge weight from node i to
node j is a softmax over the shaped dissimilarity

    W_ij = exp(-f(l_ij)) / sum_{j' != i} exp(-f(l_ij'))      (W_ii = 0),

where l_ij is the multi-factor distance vector and f(l) = sum_d theta_d^2 l_d^2
is the learned shaping function (squared per-factor weights keep every
contribution non-negative). Rows therefore sum to exactly 1. The softmax is
evaluated with per-row min-subtraction so that huge dissimilarities cannot
underflow an entire row to 0/0.

The assembled matrix is stored in labeled-first node order so the four blocks
W_LL, W_LU, W_UL, W_UU are contiguous views.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Slice
from .distance import DistanceConfig, pairwise_factor_distances
from .errors import DegenerateSlice, LengthMismatch

WEIGHTS_MAGIC = b"RPWM"
WEIGHTS_VERSION = 1

# stand-in for an overflowed dissimilarity; large but safe to subtract from
_F_CLAMP = np.finfo(np.float64).max / 4


@dataclass(frozen=True)
class ShapingParams:
    """Per-factor parameters theta of the reward-shaping function."""

    theta: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if not np.isfinite(arr).all():
            raise ValueError("theta must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)

    @classmethod
    def uniform(cls, num_factors: int, value: float = 1.0) -> "ShapingParams":
        return cls(np.full(num_factors, float(value)))

    @property
    def num_factors(self) -> int:
        return len(self.theta)


def shaping_value(params: ShapingParams, ell: np.ndarray) -> float:
    """f(l) = sum_d theta_d^2 * l_d^2; non-negative, zero iff l or theta vanish."""
    ell = np.asarray(ell, dtype=np.float64)
    if ell.shape != params.theta.shape:
        raise LengthMismatch(
            f"distance vector has length {ell.shape}, params have {params.theta.shape}"
        )
    return float(np.sum(params.theta**2 * ell**2))


@dataclass(frozen=True)
class RewardGraph:
    """Row-stochastic weight matrix of one slice, in labeled-first node order.

    ``node_order[i]`` is the slice position of matrix row/column i; the first
    ``num_labeled`` entries are the labeled nodes.
    """

    weights: np.ndarray
    node_order: np.ndarray
    num_labeled: int

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_unlabeled(self) -> int:
        return self.num_nodes - self.num_labeled

    @property
    def w_ll(self) -> np.ndarray:
        return self.weights[: self.num_labeled, : self.num_labeled]

    @property
    def w_lu(self) -> np.ndarray:
        return self.weights[: self.num_labeled, self.num_labeled :]

    @property
    def w_ul(self) -> np.ndarray:
        return self.weights[self.num_labeled :, : self.num_labeled]

    @property
    def w_uu(self) -> np.ndarray:
        return self.weights[self.num_labeled :, self.num_labeled :]


def row_stochastic_from_dissimilarity(f_matrix: np.ndarray) -> np.ndarray:
    """Zero-diagonal row softmax of -f_matrix with per-row min-subtraction.

    Invariant under adding a constant to all of f_matrix. The minimum
    off-diagonal entry of each row maps to exp(0) = 1, so the row sum is always
    >= 1 and no row can underflow to 0/0.
    """
    f = np.array(f_matrix, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {f.shape}")
    if f.shape[0] < 2:
        raise DegenerateSlice("softmax over an empty off-diagonal set")
    f[~np.isfinite(f)] = _F_CLAMP
    np.fill_diagonal(f, np.inf)
    row_min = f.min(axis=1)
    w = np.exp(row_min[:, None] - f)  # diagonal: exp(-inf) = 0 exactly
    w /= w.sum(axis=1, keepdims=True)
    return w


def build_weight_matrix(
    slice_: Slice,
    params: ShapingParams,
    config: DistanceConfig = DistanceConfig(),
    top_k: int | None = None,
) -> RewardGraph:
    """Assemble the slice's propagation graph under the given shaping parameters.

    ``top_k`` optionally keeps only the k largest weights per row (renormalized);
    the default fully connected graph matches the propagation model and
    guarantees contractivity of the unlabeled block whenever the slice has a
    label.
    """
    if slice_.num_records < 2:
        raise DegenerateSlice(f"slice has {slice_.num_records} node(s), need >= 2")
    if params.num_factors != slice_.schema.num_factors:
        raise LengthMismatch(
            f"params have {params.num_factors} factors, schema has {slice_.schema.num_factors}"
        )
    order = np.concatenate([slice_.labeled_positions, slice_.unlabeled_positions])
    x = slice_.matrix[order]
    ell = pairwise_factor_distances(x, x, slice_.schema, config)
    f = np.tensordot(params.theta**2, ell**2, axes=1)
    w = row_stochastic_from_dissimilarity(f)
    if top_k is not None:
        w = _sparsify_top_k(w, top_k)
    w.setflags(write=False)
    order.setflags(write=False)
    return RewardGraph(weights=w, node_order=order, num_labeled=slice_.num_labeled)


def _sparsify_top_k(w: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"top_k must be >= 1, got {k}")
    n = w.shape[0]
    if k >= n - 1:
        return w
    out = np.zeros_like(w)
    for i in range(n):
        keep = np.argpartition(w[i], -k)[-k:]
        out[i, keep] = w[i, keep]
    out /= out.sum(axis=1, keepdims=True)
    return out


def dump_weight_matrix(graph: RewardGraph, path) -> None:
    """Write the dense weight matrix to a binary file for inspection.

    Layout (little-endian): magic ``RPWM``, version byte, uint64 node count,
    uint64 labeled count, int64 node order, float64 row-major weights.
    """
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<B", WEIGHTS_VERSION))
        fh.write(struct.pack("<QQ", graph.num_nodes, graph.num_labeled))
        fh.write(graph.node_order.astype("<i8", copy=False).tobytes())
        fh.write(graph.weights.astype("<f8", copy=False).tobytes())


def load_weight_matrix(path) -> RewardGraph:
    """Read back a matrix written by :func:`dump_weight_matrix`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHTS_MAGIC or blob[4] != WEIGHTS_VERSION:
        raise ValueError(f"{path}: not a weight-matrix dump")
    n, n_l = struct.unpack_from("<QQ", blob, 5)
    pos = 5 + 16
    order = np.frombuffer(blob, dtype="<i8", count=n, offset=pos).copy()
    pos += 8 * n
    w = np.frombuffer(blob, dtype="<f8", count=n * n, offset=pos).reshape(n, n).copy()
    return RewardGraph(weights=w, node_order=order, num_labeled=int(n_l))
