"""Contact data: storage, indexing, and synthetic contact generation.

A contact record (u, v, t, x) means individual v had contact with individual u
on day t with channel counts x (x_j = number of channel-j contacts). Contact
logs are kept symmetric: every record appears in both directions with the same
channel counts. Infection pressure on v at day t comes from its incoming
records whose source is infectious.

Synthetic populations draw daily contact partners so that the expected number
of distinct partners per individual-day equals a target rate C. Each
individual picks Binomial(pool, C / (2 * pool)) partners uniformly from its
pool; the union with the partners' own picks doubles the rate back to C.
The rate for a target reproduction number R0 is C(R0, p) = R0 / (mean_qI * p).

Bubble populations partition individuals into consecutive blocks ("bubbles")
with a high intra-bubble rate and a low inter-bubble rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DataError, DomainError, DurationDistribution, contact_rate


class ContactLog:
    """Immutable columnar store of directed, symmetric contact records."""

    def __init__(self, src: np.ndarray, dst: np.ndarray, day: np.ndarray,
                 x: np.ndarray, n_individuals: int):
        self.src = np.asarray(src, dtype=np.int32)
        self.dst = np.asarray(dst, dtype=np.int32)
        self.day = np.asarray(day, dtype=np.int32)
        self.x = np.asarray(x, dtype=np.int16)
        if self.x.ndim != 2 or self.x.shape[0] != self.src.shape[0]:
            raise DataError("channel counts must be an (n_records, J) matrix")
        self.n_individuals = int(n_individuals)
        if self.src.shape[0] > 0:
            if self.src.min() < 0 or max(self.src.max(), self.dst.max()) >= n_individuals:
                raise DataError("individual ids out of range")
            if self.day.min() < 1:
                raise DataError("contact days start at 1")
            if np.any(self.src == self.dst):
                raise DataError("self-contacts are not allowed")
            if np.any(self.x < 0) or not np.any(self.x > 0, axis=1).all():
                raise DataError("each record needs non-negative counts with at least one positive channel")

    # ---------------------------------------------------------------- basics

    @property
    def n_records(self) -> int:
        return self.src.shape[0]

    @property
    def n_channels(self) -> int:
        return self.x.shape[1]

    @property
    def max_day(self) -> int:
        return int(self.day.max()) if self.n_records else 0

    def __len__(self) -> int:
        return self.n_records

    def __repr__(self) -> str:
        return (f"ContactLog(n_individuals={self.n_individuals}, "
                f"records={self.n_records}, channels={self.n_channels})")

    @classmethod
    def empty(cls, n_individuals: int, n_channels: int = 1) -> "ContactLog":
        z = np.zeros(0, dtype=np.int32)
        return cls(z, z, z, np.zeros((0, n_channels), dtype=np.int16), n_individuals)

    @classmethod
    def build(cls, src, dst, day, x, n_individuals: int,
              symmetrize: bool = True, dedup: bool = True) -> "ContactLog":
        """Assemble a log from raw directed picks: closure, dedup, sort.

        With dedup=False a duplicated (src, dst, day) row raises DataError
        (the path used by file loading, where duplicates indicate bad data).
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        day = np.asarray(day, dtype=np.int64)
        x = np.atleast_2d(np.asarray(x, dtype=np.int16))
        if src.shape[0] == 0:
            return cls.empty(n_individuals, x.shape[1] if x.size else 1)
        base = day.max() + 1
        key = (src * n_individuals + dst) * base + day
        uniq, first = np.unique(key, return_index=True)
        if not dedup and uniq.shape[0] != key.shape[0]:
            raise DataError("duplicate (u, v, t) contact rows")
        first.sort()
        src, dst, day, x = src[first], dst[first], day[first], x[first]
        if symmetrize:
            # add missing mirror records with the same channel counts
            fwd = (src * n_individuals + dst) * base + day
            rev = (dst * n_individuals + src) * base + day
            missing = ~np.isin(rev, fwd)
            src, dst = (np.concatenate([src, dst[missing]]),
                        np.concatenate([dst, src[missing]]))
            day = np.concatenate([day, day[missing]])
            x = np.concatenate([x, x[missing]], axis=0)
        order = np.lexsort((dst, src, day))
        return cls(src[order], dst[order], day[order], x[order], n_individuals)

    # -------------------------------------------------------------- indexing

    def incoming_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Records grouped by destination: (indptr, src, day, x row indices).

        indptr has length n_individuals + 1; records for individual u sit at
        positions indptr[u]:indptr[u+1], sorted by day.
        """
        order = np.lexsort((self.day, self.dst))
        dst_sorted = self.dst[order]
        indptr = np.zeros(self.n_individuals + 1, dtype=np.int64)
        np.add.at(indptr, dst_sorted + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, self.src[order], self.day[order], order

    def day_slices(self, horizon: int | None = None):
        """(indptr, order) grouping record indices by day 1..horizon."""
        horizon = horizon if horizon is not None else self.max_day
        order = np.argsort(self.day, kind="stable")
        indptr = np.zeros(horizon + 2, dtype=np.int64)
        days = self.day[order]
        valid = days <= horizon
        days = days[valid]
        order = order[valid]
        np.add.at(indptr, days + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, order

    # ------------------------------------------------------------- filtering

    def restrict_days(self, lo: int, hi: int) -> "ContactLog":
        """Records with lo <= day <= hi."""
        m = (self.day >= lo) & (self.day <= hi)
        return ContactLog(self.src[m], self.dst[m], self.day[m], self.x[m],
                          self.n_individuals)

    def without_individuals_on_day(self, individuals, day: int) -> "ContactLog":
        """Drop records touching any of the given individuals on one day."""
        ids = np.asarray(sorted(individuals), dtype=np.int32)
        if ids.size == 0:
            return self
        hit = (self.day == day) & (np.isin(self.src, ids) | np.isin(self.dst, ids))
        keep = ~hit
        return ContactLog(self.src[keep], self.dst[keep], self.day[keep],
                          self.x[keep], self.n_individuals)

    def concat(self, other: "ContactLog") -> "ContactLog":
        if other.n_individuals != self.n_individuals or other.n_channels != self.n_channels:
            raise DataError("cannot concatenate contact logs with different shapes")
        return ContactLog(
            np.concatenate([self.src, other.src]),
            np.concatenate([self.dst, other.dst]),
            np.concatenate([self.day, other.day]),
            np.concatenate([self.x, other.x], axis=0),
            self.n_individuals)

    def validate_symmetric(self) -> None:
        """Check every record has its mirror with identical channel counts."""
        if self.n_records == 0:
            return
        base = np.int64(self.day.max()) + 1
        fwd = (self.src.astype(np.int64) * self.n_individuals + self.dst) * base + self.day
        rev = (self.dst.astype(np.int64) * self.n_individuals + self.src) * base + self.day
        of = np.argsort(fwd)
        orv = np.argsort(rev)
        if not np.array_equal(fwd[of], rev[orv]) or not np.array_equal(self.x[of], self.x[orv]):
            raise DataError("contact log is not symmetric")


# ------------------------------------------------------------- generation


@dataclass(frozen=True)
class ContactPhase:
    """Mixing pattern over an inclusive day range.

    With bubbles=False, the population mixes uniformly at daily rate
    C(r0, p_channel). With bubbles=True, consecutive blocks of bubble_size
    individuals form bubbles mixing at C(intra_r0, .) internally and
    C(inter_r0, .) with the rest.
    """

    start: int
    end: int
    r0: float = 2.5
    bubbles: bool = False
    intra_r0: float = 2.0
    inter_r0: float = 0.5


@dataclass
class ContactPatternSpec:
    """Population-level contact generation plan over days 1..horizon-1."""

    n: int
    horizon: int
    p_channel: float
    phases: list[ContactPhase] = field(default_factory=list)
    qi: DurationDistribution | None = None
    bubble_size: int = 20
    n_channels: int = 1
    channel: int = 0

    def __post_init__(self):
        from .model import default_qi
        if self.qi is None:
            self.qi = default_qi()
        if self.n < 2:
            raise DomainError("need at least two individuals")
        if self.horizon < 2:
            raise DomainError("horizon must be at least 2 days")
        if not 0 <= self.channel < self.n_channels:
            raise DomainError("channel index out of range")
        if not self.phases:
            raise DomainError("at least one contact phase is required")
        days = sorted((ph.start, ph.end) for ph in self.phases)
        cursor = 1
        for start, end in days:
            if start != cursor or end < start:
                raise DomainError("phases must tile days 1..horizon-1 without gaps or overlap")
            cursor = end + 1
        if cursor != self.horizon:
            raise DomainError("phases must cover exactly days 1..horizon-1")

    def phase_at(self, day: int) -> ContactPhase:
        for ph in self.phases:
            if ph.start <= day <= ph.end:
                return ph
        raise DomainError(f"day {day} not covered by any phase")


def _pick_partners(rng: np.random.Generator, members: np.ndarray,
                   pool: np.ndarray, rate: float,
                   exclude_self: bool) -> tuple[np.ndarray, np.ndarray]:
    """Directed partner picks for `members` drawing from `pool` at daily rate.

    With exclude_self=True, pool must be the (sorted) member set itself and
    each member draws from the pool minus itself.
    """
    pool_size = pool.shape[0] - (1 if exclude_self else 0)
    if pool_size < 1:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    q = rate / (2.0 * pool_size)
    if q > 1.0:
        raise DomainError(
            f"contact rate {rate} infeasible for pool of {pool_size} partners")
    k = rng.binomial(pool_size, q, size=members.shape[0])
    total = int(k.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    src = np.repeat(members, k)
    if exclude_self:
        # uniform over pool excluding self; collisions removed by dedup
        idx = rng.integers(0, pool_size, size=total)
        pos = np.searchsorted(pool, src)
        idx += idx >= pos
        dst = pool[idx]
    else:
        dst = pool[rng.integers(0, pool.shape[0], size=total)]
    return src, dst


def generate_day_contacts(spec: ContactPatternSpec, day: int, seed: int) -> ContactLog:
    """Contacts for a single day, deterministic in (seed, day).

    Each day uses an independent RNG stream derived from (seed, day), so days
    can be generated in any order or in parallel with identical results.
    """
    if not 1 <= day <= spec.horizon - 1:
        raise DomainError(f"day must lie in 1..{spec.horizon - 1}, got {day}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(day)]))
    ph = spec.phase_at(day)
    everyone = np.arange(spec.n, dtype=np.int64)
    srcs, dsts = [], []
    if not ph.bubbles:
        rate = contact_rate(ph.r0, spec.p_channel, spec.qi)
        s, d = _pick_partners(rng, everyone, everyone, rate, exclude_self=True)
        srcs.append(s); dsts.append(d)
    else:
        intra_rate = contact_rate(ph.intra_r0, spec.p_channel, spec.qi)
        inter_rate = contact_rate(ph.inter_r0, spec.p_channel, spec.qi)
        for lo in range(0, spec.n, spec.bubble_size):
            members = everyone[lo:lo + spec.bubble_size]
            s, d = _pick_partners(rng, members, members, intra_rate, exclude_self=True)
            srcs.append(s); dsts.append(d)
            outside = np.concatenate([everyone[:lo], everyone[lo + spec.bubble_size:]])
            if outside.size:
                s, d = _pick_partners(rng, members, outside, inter_rate, exclude_self=False)
                srcs.append(s); dsts.append(d)
    src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
    dst = np.concatenate(dsts) if dsts else np.zeros(0, np.int64)
    x = np.zeros((src.shape[0], spec.n_channels), dtype=np.int16)
    x[:, spec.channel] = 1
    day_col = np.full(src.shape[0], day, dtype=np.int64)
    return ContactLog.build(src, dst, day_col, x, spec.n, symmetrize=True, dedup=True)


def generate_contacts(spec: ContactPatternSpec, seed: int,
                      days=None) -> ContactLog:
    """Full contact log over the given days (default: all of 1..horizon-1)."""
    days = range(1, spec.horizon) if days is None else days
    log = ContactLog.empty(spec.n, spec.n_channels)
    for day in days:
        log = log.concat(generate_day_contacts(spec, day, seed))
    return log
