"""Block-Gibbs posterior sampling of per-individual infection traces.

Conditioned on test outcomes and the contact log, the sampler resamples one
individual's full trace z_u = (t0, dE, dI) at a time from

    P(z_u | Z_{-u}, O)  ~  A(z_u) * B(z_u) * C(z_u)

where A collects u's own transition factors, B the transition factors of u's
partners whose probabilities depend on u's state (only susceptible partners:
their stay-susceptible factor changes when u is infectious), and C the test
likelihood factors of u's own tests.

A factorizes over the trace: the infection-day part uses
l0(t0) = (1-p0)^(t0-1) p0, the contact-survival products
l_infected(t) = p_{u,t} (probability of no transmission from infectious
partners at day t) and l'_infected(t0) = (1 - (1-p0) p_{u,t0}) / p0, and the
duration tables qE, qI. Traces still in E or I at the horizon use tail masses
P(d >= observed days) instead of the pmf; a never-infected trace contributes
(1-p0)^(T-1) times its contact survival.

B reduces to per-day log-ratios attached to u's infectious days: a partner v
that stays susceptible at day t contributes prod_j (1-p_j)^x_j; a partner
infected exactly at day t contributes (1 - f_threading(v,t) * c) /
(1 - f_threading(v,t)) with f_threading the partner's no-infection probability
excluding u and c = prod_j (1-p_j)^x_j for the shared contact.

Because P(o|S) = P(o|E) = P(o|R), C reduces to per-day log-ratios on u's
infectious days as well. The production sampler exploits this: it folds B and
C into one per-day array, takes prefix sums, and samples the trace
hierarchically (t0, then dE | t0, then dI | t0, dE) in O(T * (|qE| + |qI|))
per step, drawing from exactly the same conditional distribution as a full
scan over the enumerated triple space. The enumerated dense path remains as
the reference scorer and the fallback for numerically extreme evidence.

Sampler state is exactly one triple per individual plus the incremental
log-pressure matrix P[v, t] = sum of log (1-p_j)^x_j over v's currently
infectious in-contacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .contacts import ContactLog
from .model import (INFECTIOUS, SUSCEPTIBLE, DataError, DomainError,
                    ModelParams, NumericalError, TestLog, trace_states)

KIND_COMPLETE = 0
KIND_I_CENSORED = 1
KIND_E_CENSORED = 2
KIND_NEVER = 3


class TripleSpace:
    """Enumerated censored trace space for horizon T.

    Contains all triples with positive structural mass: complete traces
    (R reached by day T), I-censored (still infectious at T), E-censored
    (still exposed at T), and the never-infected triple (T, 0, 0), in a fixed
    deterministic order.
    """

    def __init__(self, T: int, d_max_e: int, d_max_i: int):
        if T < 1:
            raise DomainError("horizon must be >= 1")
        t0s, dEs, dIs, kinds = [], [], [], []
        for t0 in range(1, T):
            for dE in range(1, min(d_max_e, T - 1 - t0) + 1):
                for dI in range(1, min(d_max_i, T - 1 - t0 - dE) + 1):
                    t0s.append(t0); dEs.append(dE); dIs.append(dI)
                    kinds.append(KIND_COMPLETE)
                dI_c = T - t0 - dE
                if 1 <= dI_c <= d_max_i:
                    t0s.append(t0); dEs.append(dE); dIs.append(dI_c)
                    kinds.append(KIND_I_CENSORED)
            dE_c = T - t0
            if dE_c <= d_max_e:
                t0s.append(t0); dEs.append(dE_c); dIs.append(0)
                kinds.append(KIND_E_CENSORED)
        t0s.append(T); dEs.append(0); dIs.append(0); kinds.append(KIND_NEVER)
        self.T = T
        self.t0 = np.asarray(t0s, dtype=np.int64)
        self.dE = np.asarray(dEs, dtype=np.int64)
        self.dI = np.asarray(dIs, dtype=np.int64)
        self.kind = np.asarray(kinds, dtype=np.int8)
        self._index: dict[tuple[int, int, int], int] = {}

    @property
    def n_triples(self) -> int:
        return self.t0.shape[0]

    def triples(self) -> np.ndarray:
        return np.stack([self.t0, self.dE, self.dI], axis=1)

    def index_of(self, t0: int, dE: int, dI: int) -> int:
        if not self._index:
            for i in range(self.n_triples):
                self._index[(int(self.t0[i]), int(self.dE[i]), int(self.dI[i]))] = i
        try:
            return self._index[(int(t0), int(dE), int(dI))]
        except KeyError:
            raise DomainError(f"triple ({t0}, {dE}, {dI}) not in horizon-{self.T} space") from None


@dataclass
class StaticTables:
    """Trace-independent scoring tables for one individual.

    a_static[i] holds the infection-day and duration log-mass of triple i
    (everything in A except the contact-survival products); c_static[i] holds
    the individual's test log-likelihood for triple i.
    """

    space: TripleSpace
    params: ModelParams
    a_static: np.ndarray
    c_static: np.ndarray


@dataclass
class DynamicTables:
    """Partner-trace-dependent per-day tables for one individual.

    Index t runs 1..T (entry 0 unused). log_l_infected[t] = log p_{u,t};
    log_l_prime[t] = log l'_infected(t); log_b_ratio[t] is the per-day log
    ratio B applies on u's infectious days (defined for t <= T-1);
    log_const collects z_u-independent partner survival factors so scores can
    be compared directly against full joint evaluations.
    """

    T: int
    log_l_infected: np.ndarray
    log_l_prime: np.ndarray
    log_b_ratio: np.ndarray
    log_const: float = 0.0


def precompute_static(params: ModelParams, T: int, tests_for_u,
                      space: TripleSpace | None = None) -> StaticTables:
    """Build StaticTables for one individual from its test records.

    tests_for_u is an iterable of (day, outcome) pairs; the triple space can
    be passed in to share the enumeration across individuals.
    """
    if not 0.0 < params.p0 < 1.0:
        raise DomainError("trace inference requires p0 in (0, 1)")
    if space is None:
        space = TripleSpace(T, params.qE.d_max, params.qI.d_max)
    if space.T != T:
        raise DomainError("triple space horizon mismatch")
    lqE, ltE = params.qE.log_pmf, params.qE.log_tail
    lqI, ltI = params.qI.log_pmf, params.qI.log_tail
    l1m = np.log1p(-params.p0)
    lp0 = np.log(params.p0)

    a = (space.t0 - 1) * l1m
    infected = space.kind != KIND_NEVER
    a[infected] += lp0
    m = space.kind == KIND_COMPLETE
    a[m] += lqE[space.dE[m]] + lqI[space.dI[m]]
    m = space.kind == KIND_I_CENSORED
    a[m] += lqE[space.dE[m]] + ltI[space.dI[m]]
    m = space.kind == KIND_E_CENSORED
    a[m] += ltE[space.dE[m]]

    c = np.zeros(space.n_triples)
    la, l1a = np.log(params.alpha), np.log1p(-params.alpha)
    lb, l1b = np.log(params.beta), np.log1p(-params.beta)
    trip = space.triples()
    for day, outcome in tests_for_u:
        if not 1 <= day <= T:
            raise DataError(f"test day {day} outside horizon {T}")
        if outcome not in (0, 1):
            raise DataError(f"test outcome must be 0 or 1, got {outcome}")
        st = trace_states(trip, int(day))
        is_i = st == INFECTIOUS
        if outcome == 0:
            c += np.where(is_i, la, l1b)
        else:
            c += np.where(is_i, l1a, lb)
    return StaticTables(space=space, params=params, a_static=a, c_static=c)


class ContactView:
    """Per-individual incoming contact arrays derived from a ContactLog."""

    def __init__(self, log: ContactLog, params: ModelParams, T: int):
        if log.n_channels != params.n_channels:
            raise DataError("contact log channel count does not match params")
        if log.n_records and log.max_day > T:
            raise DataError(f"contact log contains days beyond horizon {T}")
        self.n = log.n_individuals
        self.T = T
        indptr, src, day, order = log.incoming_csr()
        self.indptr = indptr
        self.src = src.astype(np.int64)
        self.day = day.astype(np.int64)
        self.logc = log.x[order].astype(np.float64) @ params.log_one_minus_p()

    def incoming(self, u: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return self.src[lo:hi], self.day[lo:hi], self.logc[lo:hi]


def _pressure_excluding(view: ContactView, v: int, t: int, traces: np.ndarray,
                        exclude: int) -> float:
    """log p_{v,t} summed over infectious in-contacts of v, skipping one id."""
    src, day, logc = view.incoming(v)
    m = day == t
    total = 0.0
    for w, lc in zip(src[m], logc[m]):
        if w == exclude:
            continue
        tw = traces[w]
        if tw[0] + tw[1] < t <= tw[0] + tw[1] + tw[2]:
            total += lc
    return total


def precompute_dynamic(u: int, traces: np.ndarray, view: ContactView,
                       params: ModelParams) -> DynamicTables:
    """Build DynamicTables for individual u given all current traces.

    Reference implementation: recomputes partner pressures from scratch.
    Cost O(sum over partners of their degree) per call.
    """
    T = view.T
    l_inf = np.zeros(T + 1)
    l_prime = np.zeros(T + 1)
    b_ratio = np.zeros(T + 1)
    const = 0.0
    om_p0 = 1.0 - params.p0
    lp0 = np.log(params.p0)
    src, day, logc = view.incoming(u)
    for v, t, lc in zip(src, day, logc):
        t = int(t)
        # u's own infection pressure
        tv = traces[v]
        if tv[0] + tv[1] < t <= tv[0] + tv[1] + tv[2]:
            l_inf[t] += lc
        if t > T - 1:
            continue  # day-T contacts have no transition factor
        # partner transition factors that depend on u's state at t
        if t < tv[0]:    # partner stays susceptible: (S,S)
            fm = om_p0 * np.exp(_pressure_excluding(view, int(v), t, traces, u))
            b_ratio[t] += lc
            const += np.log(fm)
        elif t == tv[0]:  # partner infected exactly at t: (S,E)
            fm = om_p0 * np.exp(_pressure_excluding(view, int(v), t, traces, u))
            b_ratio[t] += np.log1p(-fm * np.exp(lc)) - np.log1p(-fm)
            const += np.log1p(-fm)
    for t in range(1, T):
        l_prime[t] = np.log1p(-om_p0 * np.exp(l_inf[t])) - lp0
    return DynamicTables(T=T, log_l_infected=l_inf, log_l_prime=l_prime,
                         log_b_ratio=b_ratio, log_const=const)


def score_all_triples(static: StaticTables, dynamic: DynamicTables) -> np.ndarray:
    """Log conditional score of every triple in the space (dense path)."""
    space = static.space
    T = space.T
    if dynamic.T != T:
        raise DomainError("dynamic table horizon mismatch")
    LP = np.concatenate([[0.0], np.cumsum(dynamic.log_l_infected[1:T])])   # LP[j], j=0..T-1
    BP = np.concatenate([[0.0], np.cumsum(dynamic.log_b_ratio[1:T])])     # BP[j], j=0..T-1
    scores = static.a_static + static.c_static + dynamic.log_const
    infected = space.kind != KIND_NEVER
    t0 = space.t0
    scores[infected] += (LP[t0[infected] - 1]
                         + dynamic.log_l_prime[t0[infected]])
    never = ~infected
    scores[never] += LP[T - 1]
    i_start = np.minimum(t0 + space.dE, T - 1)
    i_end = np.minimum(t0 + space.dE + space.dI, T - 1)
    scores[infected] += BP[i_end[infected]] - BP[i_start[infected]]
    return scores


def trace_log_score(trace, static: StaticTables, dynamic: DynamicTables) -> float:
    """Log score of a single trace triple (t0, dE, dI)."""
    t0, dE, dI = (trace.t0, trace.dE, trace.dI) if hasattr(trace, "t0") \
        else (int(trace[0]), int(trace[1]), int(trace[2]))
    i = static.space.index_of(t0, dE, dI)
    return float(score_all_triples(static, dynamic)[i])


def categorical_from_log_scores(scores: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index proportional to exp(scores), max-shifted for stability."""
    m = scores.max()
    if not np.isfinite(m):
        raise NumericalError("all trace scores are -inf: evidence has no support")
    w = np.exp(scores - m)
    total = w.sum()
    if not (total > 0.0 and np.isfinite(total)):
        raise NumericalError("degenerate trace score normalization")
    cum = np.cumsum(w)
    target = rng.random() * total
    return int(min(np.searchsorted(cum, target, side="right"), scores.shape[0] - 1))


def gibbs_step(u: int, traces: np.ndarray, static: StaticTables,
               dynamic: DynamicTables, rng: np.random.Generator) -> tuple[int, int, int]:
    """Resample individual u's trace from its full conditional (dense path)."""
    scores = score_all_triples(static, dynamic)
    i = categorical_from_log_scores(scores, rng)
    sp = static.space
    new = (int(sp.t0[i]), int(sp.dE[i]), int(sp.dI[i]))
    traces[u, 0], traces[u, 1], traces[u, 2] = new
    return new


def extend_censored_traces(traces: np.ndarray, old_T: int, new_T: int) -> np.ndarray:
    """Re-encode censored triples when the horizon grows (warm restarts)."""
    if new_T < old_T:
        raise DomainError("horizon can only grow")
    out = np.asarray(traces, dtype=np.int64).copy()
    t0, dE, dI = out[:, 0], out[:, 1], out[:, 2]
    never = (t0 == old_T) & (dE == 0) & (dI == 0)
    e_cens = (dE > 0) & (dI == 0) & (t0 + dE == old_T)
    i_cens = (dI > 0) & (t0 + dE + dI == old_T)
    t0[never] = new_T
    dE[e_cens] += new_T - old_T
    dI[i_cens] += new_T - old_T
    return out


@dataclass
class GibbsConfig:
    """Sampler run settings."""

    n_samples: int = 100
    burn_in: int = 10
    thinning: int = 1
    sweep: str = "permutation"   # "permutation" | "iid"
    method: str = "staged"       # "staged" | "dense"

    def __post_init__(self):
        if self.n_samples < 1 or self.burn_in < 0 or self.thinning < 1:
            raise DomainError("need n_samples >= 1, burn_in >= 0, thinning >= 1")
        if self.sweep not in ("permutation", "iid"):
            raise DomainError(f"unknown sweep policy {self.sweep!r}")
        if self.method not in ("staged", "dense"):
            raise DomainError(f"unknown method {self.method!r}")


class GibbsEngine:
    """Posterior sampler over infection traces for a fixed horizon.

    Holds the contact/test evidence in CSR form, the current trace of every
    individual, and the incremental pressure matrix. Construction validates
    that all evidence lies within the horizon and that p0 is in (0, 1).
    """

    def __init__(self, params: ModelParams, horizon: int, contacts: ContactLog,
                 tests: TestLog, initial_traces: np.ndarray | None = None):
        if not 0.0 < params.p0 < 1.0:
            raise DomainError("trace inference requires p0 in (0, 1)")
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        if tests.n_individuals != contacts.n_individuals:
            raise DataError("contact and test logs cover different populations")
        if tests.n_records and tests.day.max() > horizon:
            raise DataError(f"test log contains days beyond horizon {horizon}")
        self.params = params
        self.T = int(horizon)
        self.n = contacts.n_individuals
        self.contacts = contacts
        self.tests = tests
        self.view = ContactView(contacts, params, self.T)
        ti, td, to = tests.by_individual()
        self._t_indptr = ti
        self._t_day = td.astype(np.int64)
        self._t_out = to.astype(np.int64)
        r_neg = np.log(params.alpha) - np.log1p(-params.beta)
        r_pos = np.log1p(-params.alpha) - np.log(params.beta)
        self._t_ratio = np.where(to == 0, r_neg, r_pos)
        if initial_traces is None:
            self.traces = np.tile(np.array([self.T, 0, 0], dtype=np.int64), (self.n, 1))
        else:
            self.traces = np.asarray(initial_traces, dtype=np.int64).copy()
            if self.traces.shape != (self.n, 3):
                raise DataError("initial traces must have shape (n, 3)")
            self._validate_traces()
        self.pressure = np.zeros((self.n, self.T + 1))
        self.rebuild_pressure()
        self._space: TripleSpace | None = None
        self._static: list[StaticTables] | None = None

    # ------------------------------------------------------------- structure

    def _validate_traces(self) -> None:
        t0, dE, dI = self.traces[:, 0], self.traces[:, 1], self.traces[:, 2]
        ok = (t0 >= 1) & (dE >= 0) & (dI >= 0) & ~((dE == 0) & (dI > 0))
        ok &= (t0 <= self.T)
        ok &= ~((t0 == self.T) & ((dE > 0) | (dI > 0)))
        ok &= t0 + dE + dI <= self.T
        # censored encodings must saturate the horizon exactly
        ok &= ~((dE > 0) & (dI == 0) & (t0 + dE != self.T))
        if not ok.all():
            raise DataError("initial traces are not valid censored triples")

    def rebuild_pressure(self) -> None:
        """Recompute P[v, t] = sum of logc over infectious in-contacts."""
        self.pressure[:] = 0.0
        src, day, logc = self.view.src, self.view.day, self.view.logc
        if src.shape[0] == 0:
            return
        tr = self.traces[src]
        inf = (tr[:, 0] + tr[:, 1] < day) & (day <= tr[:, 0] + tr[:, 1] + tr[:, 2])
        dst = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.view.indptr))
        np.add.at(self.pressure, (dst[inf], day[inf]), logc[inf])

    def space(self) -> TripleSpace:
        if self._space is None:
            self._space = TripleSpace(self.T, self.params.qE.d_max, self.params.qI.d_max)
        return self._space

    def static_tables(self, u: int) -> StaticTables:
        if self._static is None:
            self._static = [None] * self.n  # type: ignore[list-item]
        if self._static[u] is None:
            lo, hi = self._t_indptr[u], self._t_indptr[u + 1]
            pairs = zip(self._t_day[lo:hi].tolist(), self._t_out[lo:hi].tolist())
            self._static[u] = precompute_static(self.params, self.T, pairs,
                                                space=self.space())
        return self._static[u]

    # --------------------------------------------------------------- running

    def _kernel_args(self):
        return (self.traces, self.pressure, self.view.indptr, self.view.src,
                self.view.day, self.view.logc, self._t_indptr, self._t_day,
                self._t_ratio, float(self.params.p0),
                self.params.qE.pmf, self.params.qE.tail,
                self.params.qI.pmf, self.params.qI.tail, self.T)

    def sweep_once(self, order: np.ndarray, uniforms: np.ndarray,
                   method: str = "staged") -> None:
        """One pass of single-site updates in the given order."""
        if method == "staged":
            flags = np.zeros(order.shape[0], dtype=np.int8)
            _kernels.sweep_staged(*self._kernel_args(), order.astype(np.int64),
                                  uniforms, flags)
            for idx in np.nonzero(flags)[0]:
                self._dense_update(int(order[idx]), uniforms[idx, 0])
        else:
            for idx, u in enumerate(order):
                self._dense_update(int(u), uniforms[idx, 0])

    def _dense_update(self, u: int, unif: float) -> None:
        """Full-scan conditional draw for one individual (reference path)."""
        dyn = precompute_dynamic(u, self.traces, self.view, self.params)
        scores = score_all_triples(self.static_tables(u), dyn)
        m = scores.max()
        if not np.isfinite(m):
            raise NumericalError(f"all trace scores for individual {u} are -inf")
        w = np.exp(scores - m)
        total = w.sum()
        if not (total > 0.0 and np.isfinite(total)):
            raise NumericalError(f"degenerate score normalization for individual {u}")
        i = int(min(np.searchsorted(np.cumsum(w), unif * total, side="right"),
                    scores.shape[0] - 1))
        sp = self.space()
        old = self.traces[u].copy()
        self.traces[u] = (sp.t0[i], sp.dE[i], sp.dI[i])
        self._apply_pressure_delta(u, old, self.traces[u])

    def _apply_pressure_delta(self, u: int, old: np.ndarray, new: np.ndarray) -> None:
        src, day, logc = self.view.incoming(u)
        was = (old[0] + old[1] < day) & (day <= old[0] + old[1] + old[2])
        now = (new[0] + new[1] < day) & (day <= new[0] + new[1] + new[2])
        add = now & ~was
        sub = was & ~now
        np.add.at(self.pressure, (src[add], day[add]), logc[add])
        np.add.at(self.pressure, (src[sub], day[sub]), -logc[sub])

    def run(self, config: GibbsConfig, rng) -> np.ndarray:
        """Run the sampler; returns (n_samples, n, 3) trace snapshots."""
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        samples = np.empty((config.n_samples, self.n, 3), dtype=np.int64)
        total_sweeps = config.burn_in + config.n_samples * config.thinning
        taken = 0
        for s in range(total_sweeps):
            if config.sweep == "permutation":
                order = rng.permutation(self.n)
            else:
                order = rng.integers(0, self.n, size=self.n)
            uniforms = rng.random((self.n, 3))
            self.sweep_once(order, uniforms, method=config.method)
            if s >= config.burn_in and (s - config.burn_in + 1) % config.thinning == 0:
                samples[taken] = self.traces
                taken += 1
        assert taken == config.n_samples
        return samples

    # ------------------------------------------------------------ inspection

    def staged_stage_weights(self, u: int):
        """Stage-wise weights the staged sampler would use for u right now.

        Returns (w1, details) where w1[t] is the unnormalized weight of
        t0 = t (index T = never infected) and details provides closures for
        the conditional dE and dI stage weights. Used by equivalence tests.
        """
        return _kernels.stage_weights(*self._kernel_args(), int(u))


def risk_scores(samples: np.ndarray, day: int) -> np.ndarray:
    """Posterior state marginals at a day: (n, 4) array of frequencies."""
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[2] != 3:
        raise DataError("samples must have shape (m, n, 3)")
    m, n, _ = samples.shape
    out = np.zeros((n, 4))
    for s in range(m):
        st = trace_states(samples[s], day)
        for k in range(4):
            out[:, k] += st == k
    return out / m
