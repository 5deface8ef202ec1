"""Small constructors shared across test modules."""

from __future__ import annotations

import numpy as np

from crisp.contacts import ContactLog
from crisp.model import DurationDistribution, ModelParams, TestLog


def tiny_params(**overrides) -> ModelParams:
    """Two-day duration tables: small enough for exhaustive posteriors."""
    kw = dict(
        p0=0.08,
        p=np.array([0.4]),
        alpha=0.05,
        beta=0.02,
        qE=DurationDistribution(np.array([0.0, 0.6, 0.4])),
        qI=DurationDistribution(np.array([0.0, 0.5, 0.5])),
    )
    kw.update(overrides)
    return ModelParams(**kw)


def contacts_from(rows, n: int, n_channels: int = 1) -> ContactLog:
    """Build a symmetric log from (u, v, day) or (u, v, day, count) rows."""
    if not rows:
        return ContactLog.empty(n, n_channels)
    src = [r[0] for r in rows]
    dst = [r[1] for r in rows]
    day = [r[2] for r in rows]
    x = [([r[3]] + [0] * (n_channels - 1)) if len(r) > 3 else
         ([1] + [0] * (n_channels - 1)) for r in rows]
    return ContactLog.build(src, dst, day, x, n, symmetrize=True)


def tests_from(rows, n: int) -> TestLog:
    """Build a test log from (u, day, outcome) rows."""
    return TestLog.from_records(rows, n)


def random_instance(rng: np.random.Generator, params: ModelParams,
                    n_max: int = 3, t_max: int = 6):
    """Random tiny (contacts, tests, n, T) fixture for oracle comparisons."""
    n = int(rng.integers(2, n_max + 1))
    T = int(rng.integers(4, t_max + 1))
    rows = []
    for t in range(1, T + 1):
        for a in range(n):
            for b in range(a + 1, n):
                if rng.random() < 0.5:
                    rows.append((a, b, t, int(rng.integers(1, 3))))
    contacts = contacts_from(rows, n)
    trows = []
    for _ in range(int(rng.integers(0, 3))):
        trows.append((int(rng.integers(0, n)), int(rng.integers(1, T + 1)),
                      int(rng.integers(0, 2))))
    return contacts, tests_from(trows, n), n, T
