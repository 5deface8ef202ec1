"""Core probabilistic model for individual-level SEIR infection dynamics.

Time is discrete (days t = 1..T). Each individual u carries a latent state
z_{u,t} in {S, E, I, R}: susceptible, exposed (infected but not yet
infectious), infectious, recovered. Everyone starts susceptible at t = 1.

A susceptible individual stays susceptible from day t to t+1 with probability

    f(u, t) = (1 - p0) * prod_{infectious contacts (v,u,t,x)} prod_j (1 - p_j)^x_j

where p0 is the exogenous (community) infection probability per day and p_j is
the transmission probability of contact channel j. Durations in E and I are
drawn from tabulated distributions qE and qI; the day-to-day transition out of
a phase after n days in it uses the hazard

    h(n) = q(n) / (1 - sum_{i < n} q(i)),

which equals 1 at the final table entry, so phases always terminate. Recovered
is absorbing.

Because each individual moves S -> E -> I -> R at most once, a full state
trajectory is encoded by the triple (t0, dE, dI): last day of S, days spent in
E, days spent in I. States follow from the triple:

    z_t = S for t <= t0, E for t0 < t <= t0+dE,
          I for t0+dE < t <= t0+dE+dI, R afterwards.

Noisy test outcomes o in {0, 1} attach to (individual, day) pairs with
false-negative rate alpha and false-positive rate beta:

    P(o=0 | z=I) = alpha,      P(o=1 | z=I) = 1 - alpha,
    P(o=1 | z!=I) = beta,      P(o=0 | z!=I) = 1 - beta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUSCEPTIBLE = 0
EXPOSED = 1
INFECTIOUS = 2
RECOVERED = 3

STATE_NAMES = ("S", "E", "I", "R")


class CrispError(Exception):
    """Base class for model errors."""


class DomainError(CrispError, ValueError):
    """Raised when an argument is outside the model's domain."""


class DataError(CrispError, ValueError):
    """Raised on malformed or inconsistent input data."""


class NumericalError(CrispError, ArithmeticError):
    """Raised when a computation degenerates (all weights zero, NaN)."""


class DurationDistribution:
    """Tabulated distribution over whole-day phase durations 1..d_max.

    Stores the pmf padded so that ``pmf[n]`` is P(d = n); entry 0 is always
    zero. Precomputes tails P(d >= n), hazards, and their logs. The final
    table entry must be positive so the hazard reaches exactly 1 at d_max and
    every phase terminates.
    """

    def __init__(self, pmf: np.ndarray):
        pmf = np.asarray(pmf, dtype=np.float64)
        if pmf.ndim != 1 or pmf.shape[0] < 2:
            raise DomainError("duration pmf must be a 1-d table with d_max >= 1")
        if pmf[0] != 0.0:
            raise DomainError("duration pmf entry 0 must be zero (durations start at 1 day)")
        if np.any(pmf < 0.0) or not np.all(np.isfinite(pmf)):
            raise DomainError("duration pmf entries must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > 1e-9:
            raise DomainError(f"duration pmf must sum to 1 (got {pmf.sum()!r})")
        if pmf[-1] <= 0.0:
            raise DomainError("final duration pmf entry must be positive")
        self.pmf = pmf
        self.d_max = pmf.shape[0] - 1
        # tail[n] = P(d >= n); tail[1] = 1, tail[d_max] = pmf[d_max]
        cdf = np.cumsum(pmf)
        self.tail = np.empty_like(pmf)
        self.tail[0] = 1.0
        self.tail[1:] = 1.0 - cdf[:-1]
        # guard against roundoff producing tiny negatives
        np.clip(self.tail, 0.0, None, out=self.tail)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.log_pmf = np.where(pmf > 0.0, np.log(np.where(pmf > 0.0, pmf, 1.0)), -np.inf)
            self.log_tail = np.where(self.tail > 0.0, np.log(np.where(self.tail > 0.0, self.tail, 1.0)), -np.inf)

    @classmethod
    def from_weights(cls, weights) -> "DurationDistribution":
        """Build from non-negative weights over durations 0..d_max, normalizing."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0.0:
            raise DomainError("duration weights must have positive total mass")
        return cls(w / total)

    @property
    def mean(self) -> float:
        return float(np.arange(self.pmf.shape[0]) @ self.pmf)

    def hazard(self, n: int) -> float:
        """P(phase ends after day n | lasted n days) = pmf[n] / tail[n]."""
        if not 1 <= n <= self.d_max:
            raise DomainError(f"hazard defined for 1 <= n <= {self.d_max}, got {n}")
        t = self.tail[n]
        if t <= 0.0:
            raise DomainError(f"hazard undefined at n={n}: tail is zero")
        return float(self.pmf[n] / t)

    def hazards(self) -> np.ndarray:
        """Hazard table h[1..d_max] (entry 0 is zero). h[d_max] == 1."""
        h = np.zeros_like(self.pmf)
        pos = self.tail > 0.0
        pos[0] = False
        h[pos] = self.pmf[pos] / self.tail[pos]
        return h

    def __repr__(self) -> str:
        return f"DurationDistribution(d_max={self.d_max}, mean={self.mean:.2f})"


# Default duration tables: incubation (E) with mean 4.77 days and
# infectiousness (I) with mean 19.86 days, so an average of
# C(R0=2.5, p=0.025) = 2.5 / (19.86 * 0.025) = 5.03 daily contacts
# reproduces R0 = 2.5 at channel transmissivity 0.025.
_QE_WEIGHTS = (
    0.0, 0.05908981283, 0.1656874653, 0.1819578343, 0.154807057,
    0.1198776096, 0.08938884645, 0.06572939883, 0.04819654533,
    0.03543733758, 0.02620080839, 0.01950646727, 0.01463254844,
    0.0110616426, 0.008426626119,
)
_QI_WEIGHTS = (
    0.0, 0.0, 0.0, 0.0, 0.0,
    0.0001178655952, 0.0006658439543, 0.002319264193, 0.005825713197,
    0.01160465163, 0.01949056696, 0.02877007836, 0.03842711373,
    0.04743309657, 0.05496446107, 0.06050719418, 0.06386313651,
    0.065094874, 0.06444537162, 0.06225794729, 0.0589104177,
    0.05476817903, 0.05015542853, 0.0453410888, 0.04053528452,
    0.03589255717, 0.03151878504, 0.02747963753, 0.02380914891,
    0.02051758911, 0.01759822872, 0.01503287457, 0.0127962154,
    0.01085910889, 0.009190974483, 0.007761463001, 0.006541562648,
    0.005504277076,
)


def default_qe() -> DurationDistribution:
    return DurationDistribution.from_weights(_QE_WEIGHTS)


def default_qi() -> DurationDistribution:
    return DurationDistribution.from_weights(_QI_WEIGHTS)


@dataclass
class ModelParams:
    """Model parameters shared by simulation and inference.

    p0      exogenous infection probability per individual-day
    p       transmission probability per contact channel, shape (J,)
    alpha   false-negative test rate
    beta    false-positive test rate
    qE, qI  duration distributions for the E and I phases
    """

    p0: float = 1e-4
    p: np.ndarray = field(default_factory=lambda: np.array([0.025]))
    alpha: float = 0.001
    beta: float = 0.01
    qE: DurationDistribution = field(default_factory=default_qe)
    qI: DurationDistribution = field(default_factory=default_qi)

    def __post_init__(self):
        self.p = np.atleast_1d(np.asarray(self.p, dtype=np.float64))
        if not 0.0 <= self.p0 <= 1.0:
            raise DomainError(f"p0 must lie in [0, 1], got {self.p0}")
        if self.p.ndim != 1 or self.p.shape[0] < 1:
            raise DomainError("p must be a non-empty 1-d array of channel probabilities")
        if np.any(self.p < 0.0) or np.any(self.p >= 1.0):
            raise DomainError("channel probabilities must lie in [0, 1)")
        if not 0.0 < self.alpha < 0.5:
            raise DomainError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.beta < 0.5:
            raise DomainError(f"beta must lie in (0, 0.5), got {self.beta}")

    @property
    def n_channels(self) -> int:
        return self.p.shape[0]

    def log_one_minus_p(self) -> np.ndarray:
        return np.log1p(-self.p)


@dataclass(frozen=True)
class InfectionTrace:
    """Triple encoding of one individual's full SEIR trajectory.

    t0 is the last day in S, dE and dI the numbers of days spent in E and I.
    A never-infected individual at horizon T is (T, 0, 0); an individual still
    exposed at T is (t0, T - t0, 0); still infectious, (t0, dE, T - t0 - dE).
    Forward-simulated truths may carry dE/dI extending past the horizon; state
    queries clip naturally.
    """

    t0: int
    dE: int
    dI: int

    def __post_init__(self):
        if self.t0 < 1:
            raise DomainError(f"t0 must be >= 1, got {self.t0}")
        if self.dE < 0 or self.dI < 0:
            raise DomainError("durations must be non-negative")
        if self.dE == 0 and self.dI > 0:
            raise DomainError("dI > 0 requires dE >= 1 (I is entered through E)")

    def state_at(self, t: int) -> int:
        return trace_state(self, t)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.t0, self.dE, self.dI)


def trace_state(trace, t: int) -> int:
    """State at day t implied by an infection trace (triple or array-like)."""
    if t < 1:
        raise DomainError(f"day index must be >= 1, got {t}")
    if isinstance(trace, InfectionTrace):
        t0, dE, dI = trace.t0, trace.dE, trace.dI
    else:
        t0, dE, dI = int(trace[0]), int(trace[1]), int(trace[2])
    if t <= t0:
        return SUSCEPTIBLE
    if t <= t0 + dE:
        return EXPOSED
    if t <= t0 + dE + dI:
        return INFECTIOUS
    return RECOVERED


def trace_states(traces: np.ndarray, t: int) -> np.ndarray:
    """Vectorized trace_state over an (n, 3) integer trace array."""
    if t < 1:
        raise DomainError(f"day index must be >= 1, got {t}")
    traces = np.asarray(traces)
    t0 = traces[..., 0]
    e_end = t0 + traces[..., 1]
    i_end = e_end + traces[..., 2]
    out = np.full(t0.shape, RECOVERED, dtype=np.int8)
    out[t <= i_end] = INFECTIOUS
    out[t <= e_end] = EXPOSED
    out[t <= t0] = SUSCEPTIBLE
    return out


def no_infection_prob(x, params: ModelParams, p0: float | None = None) -> float:
    """f(u, t): probability a susceptible individual stays susceptible.

    x holds per-channel contact counts with *infectious* partners on the day,
    either one vector of shape (J,) summed over partners or a (n, J) array of
    per-partner vectors (the product commutes, so both agree).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        counts = x
    elif x.ndim == 2:
        counts = x.sum(axis=0)
    else:
        raise DomainError("x must be a (J,) vector or (n, J) array of channel counts")
    if counts.shape[0] != params.n_channels:
        raise DomainError(
            f"expected {params.n_channels} channel counts, got {counts.shape[0]}")
    if np.any(counts < 0):
        raise DomainError("contact counts must be non-negative")
    base = params.p0 if p0 is None else p0
    if not 0.0 <= base <= 1.0:
        raise DomainError(f"p0 must lie in [0, 1], got {base}")
    return float((1.0 - base) * np.exp(counts @ params.log_one_minus_p()))


def transition_prob(state_from: int, state_to: int, f: float,
                    days_in_e: int, days_in_i: int,
                    params: ModelParams) -> float:
    """P(z_{t+1} = state_to | z_t = state_from) for one individual.

    f is the no-infection probability for the day (used only from S);
    days_in_e / days_in_i count days already spent in the phase, including
    the current day.
    """
    if state_from == SUSCEPTIBLE:
        if not 0.0 <= f <= 1.0:
            raise DomainError(f"f must lie in [0, 1], got {f}")
        if state_to == SUSCEPTIBLE:
            return f
        if state_to == EXPOSED:
            return 1.0 - f
        return 0.0
    if state_from == EXPOSED:
        if state_to in (EXPOSED, INFECTIOUS):
            g = params.qE.hazard(days_in_e)
            return g if state_to == INFECTIOUS else 1.0 - g
        return 0.0
    if state_from == INFECTIOUS:
        if state_to in (INFECTIOUS, RECOVERED):
            h = params.qI.hazard(days_in_i)
            return h if state_to == RECOVERED else 1.0 - h
        return 0.0
    if state_from == RECOVERED:
        return 1.0 if state_to == RECOVERED else 0.0
    raise DomainError(f"unknown state {state_from}")


def test_likelihood(outcome: int, state: int, params: ModelParams) -> float:
    """P(test outcome | latent state). Only I vs. not-I matters."""
    if outcome not in (0, 1):
        raise DataError(f"test outcome must be 0 or 1, got {outcome}")
    if state not in (SUSCEPTIBLE, EXPOSED, INFECTIOUS, RECOVERED):
        raise DomainError(f"unknown state {state}")
    if state == INFECTIOUS:
        return params.alpha if outcome == 0 else 1.0 - params.alpha
    return params.beta if outcome == 1 else 1.0 - params.beta


def contact_rate(r0: float, p_channel: float, qi: DurationDistribution) -> float:
    """Daily contact count C(R0, p) = R0 / (mean infectious days * p)."""
    if r0 < 0.0:
        raise DomainError(f"R0 must be non-negative, got {r0}")
    if not 0.0 < p_channel < 1.0:
        raise DomainError(f"channel probability must lie in (0, 1), got {p_channel}")
    return r0 / (qi.mean * p_channel)


class TestLog:
    """Columnar store of test outcomes (individual, day, outcome).

    Multiple tests of the same individual on the same day are allowed and all
    contribute likelihood factors.
    """

    def __init__(self, u: np.ndarray, day: np.ndarray, outcome: np.ndarray,
                 n_individuals: int):
        self.u = np.asarray(u, dtype=np.int32)
        self.day = np.asarray(day, dtype=np.int32)
        self.outcome = np.asarray(outcome, dtype=np.int8)
        self.n_individuals = int(n_individuals)
        if not (self.u.shape == self.day.shape == self.outcome.shape):
            raise DataError("test columns must have equal length")
        if self.n_records:
            if self.u.min() < 0 or self.u.max() >= n_individuals:
                raise DataError("test individual ids out of range")
            if self.day.min() < 1:
                raise DataError("test days start at 1")
            if not np.isin(self.outcome, (0, 1)).all():
                raise DataError("test outcomes must be 0 or 1")

    @property
    def n_records(self) -> int:
        return self.u.shape[0]

    def __len__(self) -> int:
        return self.n_records

    def __repr__(self) -> str:
        return f"TestLog(n_individuals={self.n_individuals}, records={self.n_records})"

    @classmethod
    def empty(cls, n_individuals: int) -> "TestLog":
        z = np.zeros(0, dtype=np.int32)
        return cls(z, z, z, n_individuals)

    @classmethod
    def from_records(cls, records, n_individuals: int) -> "TestLog":
        rows = list(records)
        if not rows:
            return cls.empty(n_individuals)
        arr = np.asarray(rows, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], n_individuals)

    def restrict_days(self, lo: int, hi: int) -> "TestLog":
        m = (self.day >= lo) & (self.day <= hi)
        return TestLog(self.u[m], self.day[m], self.outcome[m], self.n_individuals)

    def concat(self, other: "TestLog") -> "TestLog":
        if other.n_individuals != self.n_individuals:
            raise DataError("cannot concatenate test logs over different populations")
        return TestLog(np.concatenate([self.u, other.u]),
                       np.concatenate([self.day, other.day]),
                       np.concatenate([self.outcome, other.outcome]),
                       self.n_individuals)

    def by_individual(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, day, outcome) grouped by individual, sorted by day."""
        order = np.lexsort((self.day, self.u))
        u_sorted = self.u[order]
        indptr = np.zeros(self.n_individuals + 1, dtype=np.int64)
        np.add.at(indptr, u_sorted + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, self.day[order], self.outcome[order]
