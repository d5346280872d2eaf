import numpy as np
import pytest

from rewardprop import Factor, FactorSchema, Slice, StateActionRecord


@pytest.fixture
def schema():
    """Two state factors (dims 2, 3) and two action factors (dims 1, 2)."""
    return FactorSchema(
        (Factor("pos", 2), Factor("vel", 3)),
        (Factor("grip", 1), Factor("torque", 2)),
    )


@pytest.fixture
def small_schema():
    return FactorSchema((Factor("s", 2),), (Factor("a", 1),))


def make_records(schema, n, labeled, rng, scale=1.0, reward_fn=None):
    """n random records; indices in ``labeled`` get a reward."""
    labeled = set(labeled)
    records = []
    for i in range(n):
        state = rng.normal(0.0, scale, schema.state_dim)
        action = rng.normal(0.0, scale, schema.action_dim)
        reward = None
        if i in labeled:
            reward = reward_fn(i, state, action) if reward_fn else float(rng.normal())
        records.append(StateActionRecord(state, action, reward))
    return records


def make_slice(schema, n, labeled, rng, scale=1.0, reward_fn=None):
    return Slice.from_records(schema, make_records(schema, n, labeled, rng, scale, reward_fn))
