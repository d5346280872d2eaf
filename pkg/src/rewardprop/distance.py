"""Multi-factor distances between state-action records.

For records a and b the distance vector has one entry per factor: entry m is
the p-norm of the difference between the m-th sub-states, entry M+n the p-norm
of the difference between the n-th sub-actions. The default p = 2 (Euclidean);
p is configurable for norm-sensitivity sweeps and may be any real >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import FactorSchema, StateActionRecord
from .errors import SchemaMismatch

SUPPORTED_NORMS = (1.0, 1.5, 2.0, 2.5)


@dataclass(frozen=True)
class DistanceConfig:
    """Per-factor norm exponent; the same p applies to state and action factors."""

    p: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        if not np.isfinite(self.p) or self.p < 1.0:
            raise ValueError(f"norm exponent p must be >= 1, got {self.p}")


def factor_distances(
    a: StateActionRecord,
    b: StateActionRecord,
    schema: FactorSchema,
    config: DistanceConfig = DistanceConfig(),
) -> np.ndarray:
    """Distance vector of length M+N between two records.

    Entries are non-negative, zero iff the corresponding factor blocks are
    equal, and exactly symmetric in (a, b).
    """
    a.validate(schema)
    b.validate(schema)
    diff = np.abs(a.vector() - b.vector())
    out = np.empty(schema.num_factors)
    for d, block in enumerate(schema.factor_slices()):
        seg = diff[block]
        if config.p == 1.0:
            out[d] = seg.sum()
        elif config.p == 2.0:
            out[d] = np.sqrt((seg * seg).sum())
        else:
            out[d] = (seg**config.p).sum() ** (1.0 / config.p)
    return out


def pairwise_factor_distances(
    rows: np.ndarray,
    cols: np.ndarray,
    schema: FactorSchema,
    config: DistanceConfig = DistanceConfig(),
) -> np.ndarray:
    """All-pairs factor distances between two payload matrices.

    ``rows`` is (n, state_dim + action_dim), ``cols`` is (m, ...); the result is
    (M+N, n, m) with entry [d, i, j] == factor_distances(rows[i], cols[j])[d].
    This is the batched path used by graph construction.
    """
    total = schema.state_dim + schema.action_dim
    if rows.shape[1] != total or cols.shape[1] != total:
        raise SchemaMismatch(
            f"payload width {rows.shape[1]}/{cols.shape[1]} does not match schema total {total}"
        )
    out = np.empty((schema.num_factors, rows.shape[0], cols.shape[0]))
    for d, block in enumerate(schema.factor_slices()):
        out[d] = cdist(rows[:, block], cols[:, block], metric="minkowski", p=config.p)
    return out
