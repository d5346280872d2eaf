"""Data model and on-disk formats for partially reward-labeled state-action datasets.

A dataset is an ordered list of (state, action) records where a subset carries a
scalar reward. States decompose into M sub-state factors and actions into N
sub-action factors according to a :class:`FactorSchema`; all downstream distance
and graph computations operate factor-wise.

Two interchangeable file formats are supported:

* JSONL: line 1 is the schema object
  ``{"state_factors":[{"name":...,"dim":...},...],"action_factors":[...]}``,
  every following line is ``{"state":[...],"action":[...],"reward": <number>}``
  with the ``reward`` key absent for unlabeled records.
* Binary: magic ``RPDS``, version byte, length-prefixed schema JSON, record
  count, then packed little-endian float64 records (see docs/formats.md).

Both round-trip bit-for-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    EmptyDataset,
    IoFailure,
    MalformedHeader,
    NonFiniteValue,
    SchemaMismatch,
    SliceWithoutLabels,
)

BINARY_MAGIC = b"RPDS"
BINARY_VERSION = 1

_FLAG_HAS_REWARD = 0x01


def _freeze(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Factor:
    """One sub-state or sub-action block: a name and its dimensionality."""

    name: str
    dim: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("factor name must be non-empty")
        if self.dim < 1:
            raise ValueError(f"factor {self.name!r}: dim must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class FactorSchema:
    """Declares how states split into M sub-states and actions into N sub-actions."""

    state_factors: tuple[Factor, ...]
    action_factors: tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "state_factors", tuple(self.state_factors))
        object.__setattr__(self, "action_factors", tuple(self.action_factors))
        if len(self.state_factors) < 1 or len(self.action_factors) < 1:
            raise ValueError("schema needs at least one state factor and one action factor")
        names = [f.name for f in self.state_factors + self.action_factors]
        if len(set(names)) != len(names):
            raise ValueError(f"factor names must be unique, got {names}")

    @property
    def num_state_factors(self) -> int:
        return len(self.state_factors)

    @property
    def num_action_factors(self) -> int:
        return len(self.action_factors)

    @property
    def num_factors(self) -> int:
        return len(self.state_factors) + len(self.action_factors)

    @property
    def state_dim(self) -> int:
        return sum(f.dim for f in self.state_factors)

    @property
    def action_dim(self) -> int:
        return sum(f.dim for f in self.action_factors)

    def factor_slices(self) -> list[slice]:
        """Index ranges of each factor within the concatenated [state|action] vector.

        State factors come first, then action factors, matching record layout.
        """
        slices = []
        offset = 0
        for f in self.state_factors + self.action_factors:
            slices.append(slice(offset, offset + f.dim))
            offset += f.dim
        return slices

    def to_json_dict(self) -> dict:
        return {
            "state_factors": [{"name": f.name, "dim": f.dim} for f in self.state_factors],
            "action_factors": [{"name": f.name, "dim": f.dim} for f in self.action_factors],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FactorSchema":
        try:
            state = tuple(Factor(f["name"], int(f["dim"])) for f in obj["state_factors"])
            action = tuple(Factor(f["name"], int(f["dim"])) for f in obj["action_factors"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"invalid schema object: {exc}") from exc
        return cls(state, action)


@dataclass(frozen=True)
class StateActionRecord:
    """One graph node: a state vector, an action vector, and an optional reward."""

    state: np.ndarray
    action: np.ndarray
    reward: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "state", _freeze(self.state))
        object.__setattr__(self, "action", _freeze(self.action))
        if self.reward is not None:
            object.__setattr__(self, "reward", float(self.reward))

    def validate(self, schema: FactorSchema, index: int | None = None) -> None:
        where = "" if index is None else f"record {index}: "
        if self.state.shape[0] != schema.state_dim:
            raise SchemaMismatch(
                f"{where}state has length {self.state.shape[0]}, schema expects {schema.state_dim}"
            )
        if self.action.shape[0] != schema.action_dim:
            raise SchemaMismatch(
                f"{where}action has length {self.action.shape[0]}, schema expects {schema.action_dim}"
            )
        if not (np.isfinite(self.state).all() and np.isfinite(self.action).all()):
            raise NonFiniteValue(f"{where}state/action contains NaN or Inf")
        if self.reward is not None and not np.isfinite(self.reward):
            raise NonFiniteValue(f"{where}reward is not finite")

    def vector(self) -> np.ndarray:
        """Concatenated [state|action] payload."""
        return np.concatenate([self.state, self.action])


@dataclass(frozen=True)
class PartiallyLabeledDataset:
    """Ordered records plus the labeled/unlabeled index partition.

    The partition is derived from reward presence: record i is labeled iff it
    carries a reward. Instances are immutable; attaching inferred rewards
    produces a new dataset (see :meth:`with_rewards`).
    """

    schema: FactorSchema
    records: tuple[StateActionRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for i, rec in enumerate(self.records):
            rec.validate(self.schema, i)

    @cached_property
    def labeled_indices(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records) if r.reward is not None], dtype=np.int64)

    @cached_property
    def unlabeled_indices(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records) if r.reward is None], dtype=np.int64)

    @property
    def num_records(self) -> int:
        return len(self.records)

    @property
    def num_labeled(self) -> int:
        return len(self.labeled_indices)

    @property
    def num_unlabeled(self) -> int:
        return len(self.unlabeled_indices)

    def labels(self) -> np.ndarray:
        """Rewards of the labeled records, in dataset order."""
        return np.array([self.records[i].reward for i in self.labeled_indices], dtype=np.float64)

    @cached_property
    def matrix(self) -> np.ndarray:
        """(Z, state_dim + action_dim) payload matrix in record order."""
        return np.stack([r.vector() for r in self.records]) if self.records else np.zeros((0, 0))

    def with_rewards(self, rewards: dict[int, float]) -> "PartiallyLabeledDataset":
        """New dataset with rewards attached at the given indices.

        Existing records keep their exact reward objects; only indices present
        in ``rewards`` change.
        """
        new_records = list(self.records)
        for i, r in rewards.items():
            old = new_records[i]
            new_records[i] = StateActionRecord(old.state, old.action, float(r))
        return PartiallyLabeledDataset(self.schema, tuple(new_records))


@dataclass(frozen=True)
class Slice:
    """A contiguous view of a dataset processed as one independent graph.

    ``labeled_positions`` are local indices into ``records``. The partition is
    carried explicitly so a slice can be re-created with a historical partition
    (records at unlabeled positions may then carry rewards, which every
    training and inference path ignores). ``borrowed_count`` trailing records
    are labeled imports from neighboring slices used for inference only.
    """

    schema: FactorSchema
    records: tuple[StateActionRecord, ...]
    labeled_positions: np.ndarray
    parent_range: tuple[int, int] = (0, 0)
    borrowed_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        pos = np.asarray(self.labeled_positions, dtype=np.int64)
        pos = np.sort(pos)
        pos.setflags(write=False)
        object.__setattr__(self, "labeled_positions", pos)
        n = len(self.records)
        if len(pos) and (pos[0] < 0 or pos[-1] >= n):
            raise ValueError("labeled_positions out of range")
        for p in pos:
            if self.records[p].reward is None:
                raise ValueError(f"labeled position {p} has no reward")

    @classmethod
    def from_records(
        cls,
        schema: FactorSchema,
        records,
        labeled_positions=None,
        parent_range: tuple[int, int] | None = None,
    ) -> "Slice":
        records = tuple(records)
        if labeled_positions is None:
            labeled_positions = [i for i, r in enumerate(records) if r.reward is not None]
        if parent_range is None:
            parent_range = (0, len(records))
        return cls(schema, records, np.asarray(labeled_positions, dtype=np.int64), parent_range)

    @property
    def num_records(self) -> int:
        return len(self.records)

    @property
    def num_labeled(self) -> int:
        return len(self.labeled_positions)

    @property
    def num_unlabeled(self) -> int:
        return len(self.records) - len(self.labeled_positions)

    @cached_property
    def unlabeled_positions(self) -> np.ndarray:
        mask = np.ones(len(self.records), dtype=bool)
        mask[self.labeled_positions] = False
        out = np.nonzero(mask)[0].astype(np.int64)
        out.setflags(write=False)
        return out

    def labels(self) -> np.ndarray:
        return np.array([self.records[p].reward for p in self.labeled_positions], dtype=np.float64)

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.stack([r.vector() for r in self.records])


# --- serialization -----------------------------------------------------------


def _record_to_json_obj(rec: StateActionRecord) -> dict:
    obj = {"state": [float(v) for v in rec.state], "action": [float(v) for v in rec.action]}
    if rec.reward is not None:
        obj["reward"] = rec.reward
    return obj


def save_dataset(dataset: PartiallyLabeledDataset, path, format: str = "jsonl") -> None:
    """Write a dataset to ``path`` in the given format ("jsonl" or "binary")."""
    if format not in ("jsonl", "binary"):
        raise ValueError(f"unknown format {format!r}")
    try:
        if format == "jsonl":
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(dataset.schema.to_json_dict()) + "\n")
                for rec in dataset.records:
                    fh.write(json.dumps(_record_to_json_obj(rec)) + "\n")
        else:
            header = json.dumps(dataset.schema.to_json_dict()).encode("utf-8")
            with open(path, "wb") as fh:
                fh.write(BINARY_MAGIC)
                fh.write(struct.pack("<B", BINARY_VERSION))
                fh.write(struct.pack("<I", len(header)))
                fh.write(header)
                fh.write(struct.pack("<Q", dataset.num_records))
                for rec in dataset.records:
                    flags = _FLAG_HAS_REWARD if rec.reward is not None else 0
                    fh.write(struct.pack("<B", flags))
                    fh.write(rec.state.astype("<f8", copy=False).tobytes())
                    fh.write(rec.action.astype("<f8", copy=False).tobytes())
                    if rec.reward is not None:
                        fh.write(struct.pack("<d", rec.reward))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def detect_format(path) -> str:
    """Guess the dataset format from the file's first bytes."""
    try:
        with open(path, "rb") as fh:
            prefix = fh.read(len(BINARY_MAGIC))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return "binary" if prefix == BINARY_MAGIC else "jsonl"


def load_dataset(path, format: str | None = None) -> PartiallyLabeledDataset:
    """Load and validate a dataset; ``format`` is auto-detected when omitted."""
    if format is None:
        format = detect_format(path)
    if format not in ("jsonl", "binary"):
        raise ValueError(f"unknown format {format!r}")
    try:
        if format == "jsonl":
            schema, records = _load_jsonl(path)
        else:
            schema, records = _load_binary(path)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not records:
        raise EmptyDataset(f"{path}: no records after header")
    return PartiallyLabeledDataset(schema, tuple(records))


def _load_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise MalformedHeader(f"{path}: missing schema header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise MalformedHeader(f"{path}: schema line is not valid JSON: {exc}") from exc
        if not isinstance(header, dict):
            raise MalformedHeader(f"{path}: schema line must be a JSON object")
        schema = FactorSchema.from_json_dict(header)
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedHeader(f"{path}:{lineno}: invalid record JSON: {exc}") from exc
            if "state" not in obj or "action" not in obj:
                raise MalformedHeader(f"{path}:{lineno}: record needs 'state' and 'action'")
            records.append(StateActionRecord(obj["state"], obj["action"], obj.get("reward")))
    return schema, records


def _load_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if len(view) < 9 or bytes(view[:4]) != BINARY_MAGIC:
        raise MalformedHeader(f"{path}: bad magic bytes (expected {BINARY_MAGIC!r})")
    version = view[4]
    if version != BINARY_VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    (header_len,) = struct.unpack_from("<I", view, 5)
    pos = 9
    if pos + header_len > len(view):
        raise MalformedHeader(f"{path}: truncated header")
    try:
        header = json.loads(bytes(view[pos : pos + header_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"{path}: header JSON invalid: {exc}") from exc
    schema = FactorSchema.from_json_dict(header)
    pos += header_len
    if pos + 8 > len(view):
        raise MalformedHeader(f"{path}: missing record count")
    (count,) = struct.unpack_from("<Q", view, pos)
    pos += 8

    sdim, adim = schema.state_dim, schema.action_dim
    records = []
    for i in range(count):
        if pos + 1 > len(view):
            raise MalformedHeader(f"{path}: truncated at record {i}")
        flags = view[pos]
        pos += 1
        need = 8 * (sdim + adim) + (8 if flags & _FLAG_HAS_REWARD else 0)
        if pos + need > len(view):
            raise MalformedHeader(f"{path}: truncated at record {i}")
        state = np.frombuffer(view, dtype="<f8", count=sdim, offset=pos)
        pos += 8 * sdim
        action = np.frombuffer(view, dtype="<f8", count=adim, offset=pos)
        pos += 8 * adim
        reward = None
        if flags & _FLAG_HAS_REWARD:
            (reward,) = struct.unpack_from("<d", view, pos)
            pos += 8
        records.append(StateActionRecord(state, action, reward))
    return schema, records


# --- slicing -------------------------------------------------------------------


def slice_sequential(
    dataset: PartiallyLabeledDataset,
    slice_size: int,
    allow_unlabeled: bool = False,
) -> list[Slice]:
    """Segment the dataset into contiguous slices of ``slice_size`` records.

    The last slice may be smaller. Each slice keeps its own labeled/unlabeled
    sub-partition. By default a slice with zero labeled records raises
    :class:`SliceWithoutLabels` (inference there would have no information
    source); pass ``allow_unlabeled=True`` when label borrowing will patch such
    slices afterwards.
    """
    if slice_size < 2:
        raise ValueError(f"slice_size must be >= 2, got {slice_size}")
    z = dataset.num_records
    slices = []
    for idx, start in enumerate(range(0, z, slice_size)):
        stop = min(start + slice_size, z)
        records = dataset.records[start:stop]
        labeled = [p for p, r in enumerate(records) if r.reward is not None]
        if not labeled and not allow_unlabeled:
            raise SliceWithoutLabels(
                f"slice {idx} (records [{start}, {stop})) contains no labeled records"
            )
        slices.append(
            Slice(dataset.schema, records, np.asarray(labeled, dtype=np.int64), (start, stop))
        )
    return slices


def borrow_labels(slices: list[Slice], k: int) -> list[Slice]:
    """Patch label-free slices by copying the k nearest labeled records from neighbors.

    Candidates are gathered ring by ring (slices at distance 1, then 2, ...)
    until at least k labeled records are available, then the k nearest by
    whole-vector Euclidean distance to the offending slice are appended as
    labeled, inference-only nodes. Slices that already have labels pass through
    unchanged.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = []
    for i, sl in enumerate(slices):
        if sl.num_labeled > 0:
            out.append(sl)
            continue
        candidates: list[StateActionRecord] = []
        ring = 1
        while ring < len(slices):
            for j in (i - ring, i + ring):
                if 0 <= j < len(slices):
                    other = slices[j]
                    candidates.extend(other.records[p] for p in other.labeled_positions)
            if len(candidates) >= k:
                break
            ring += 1
        if not candidates:
            raise SliceWithoutLabels(
                f"slice {i} has no labels and no labeled records exist to borrow"
            )
        own = sl.matrix
        cand_matrix = np.stack([c.vector() for c in candidates])
        # nearest-record distance from each candidate to the slice
        d = np.sqrt(((cand_matrix[:, None, :] - own[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        order = np.argsort(d, kind="stable")[: min(k, len(candidates))]
        borrowed = [candidates[j] for j in order]
        records = sl.records + tuple(borrowed)
        labeled = np.arange(len(sl.records), len(records), dtype=np.int64)
        out.append(
            Slice(sl.schema, records, labeled, sl.parent_range, borrowed_count=len(borrowed))
        )
    return out
