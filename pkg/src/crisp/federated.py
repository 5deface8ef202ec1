"""Federated trace sampling: per-device state, explicit messages, no shared memory.

Each individual's device keeps only its own data: its contact records, its
test outcomes, its current trace triple, and a cache of partner summaries.
After resampling its trace (one single-site draw with exactly the same
scoring as the centralized sampler), a device sends each past contact partner
a message with its new triple and the no-infection values
f_excl(recipient; day) for their shared contact days up to its infection day,
computed from its own cache. Receivers keep the latest message per partner
(last-writer-wins); an empty cache entry is read as "partner never infected".

The conditional a device samples from matches the centralized one whenever
its cache is current; under synchronous round-robin scheduling the cached
triples are exact and only the third-party f-values can lag one activation.
Missing f-values (before a partner's first message) only affect the reported
score constant, never the sampled distribution.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .contacts import ContactLog
from .gibbs import (DynamicTables, StaticTables, TripleSpace,
                    categorical_from_log_scores, precompute_static,
                    score_all_triples)
from .model import DataError, DomainError, ModelParams, TestLog


@dataclass
class Message:
    """Trace announcement from one device to one past contact partner."""

    sender: int
    recipient: int
    t0: int
    dE: int
    dI: int
    f_values: dict[int, float] = field(default_factory=dict)

    def approx_bytes(self) -> int:
        # sender, recipient, triple as 4-byte ints; (day, value) pairs as 4+8
        return 5 * 4 + len(self.f_values) * 12


@dataclass
class CacheEntry:
    t0: int
    dE: int
    dI: int
    f_values: dict[int, float] = field(default_factory=dict)


class DeviceNode:
    """One individual's sampler state and local data."""

    def __init__(self, uid: int, params: ModelParams, T: int,
                 partner: np.ndarray, day: np.ndarray, logc: np.ndarray,
                 tests: list[tuple[int, int]], space: TripleSpace):
        self.uid = int(uid)
        self.params = params
        self.T = int(T)
        self.partner = partner.astype(np.int64)
        self.day = day.astype(np.int64)
        self.logc = logc.astype(np.float64)
        self.tests = list(tests)
        self.trace = (self.T, 0, 0)
        self.cache: dict[int, CacheEntry] = {}
        self.inbox: list[Message] = []
        self.static: StaticTables = precompute_static(params, T, self.tests, space=space)
        self.n_received = 0

    # ------------------------------------------------------------- messaging

    def receive(self, msg: Message) -> None:
        if msg.recipient != self.uid:
            raise DataError(f"message for {msg.recipient} delivered to {self.uid}")
        self.inbox.append(msg)

    def drain_inbox(self) -> None:
        for msg in self.inbox:
            self.cache[msg.sender] = CacheEntry(msg.t0, msg.dE, msg.dI,
                                                dict(msg.f_values))
            self.n_received += 1
        self.inbox.clear()

    def _cached_triple(self, v: int) -> tuple[int, int, int]:
        e = self.cache.get(int(v))
        if e is None:
            return (self.T, 0, 0)   # no news: treat partner as never infected
        return (e.t0, e.dE, e.dI)

    # --------------------------------------------------------------- scoring

    def _dynamic_tables(self) -> DynamicTables:
        T = self.T
        l_inf = np.zeros(T + 1)
        l_prime = np.zeros(T + 1)
        b_ratio = np.zeros(T + 1)
        const = 0.0
        om_p0 = 1.0 - self.params.p0
        lp0 = np.log(self.params.p0)
        for v, t, lc in zip(self.partner, self.day, self.logc):
            t = int(t)
            vt0, vdE, vdI = self._cached_triple(int(v))
            if vt0 + vdE < t <= vt0 + vdE + vdI:
                l_inf[t] += lc
            if t > T - 1:
                continue
            if t < vt0:
                b_ratio[t] += lc
                e = self.cache.get(int(v))
                if e is not None and t in e.f_values:
                    const += np.log(e.f_values[t])
            elif t == vt0:
                e = self.cache.get(int(v))
                if e is None or t not in e.f_values:
                    raise DataError(
                        f"device {self.uid}: partner {v} announced infection at "
                        f"day {t} without the shared-day f value")
                fm = e.f_values[t]
                b_ratio[t] += np.log1p(-fm * np.exp(lc)) - np.log1p(-fm)
                const += np.log1p(-fm)
        for t in range(1, T):
            l_prime[t] = np.log1p(-om_p0 * np.exp(l_inf[t])) - lp0
        return DynamicTables(T=T, log_l_infected=l_inf, log_l_prime=l_prime,
                             log_b_ratio=b_ratio, log_const=const)

    def _f_excluding(self, recipient: int, t: int) -> float:
        """(1-p0) * prod over cached-infectious in-partners except recipient."""
        total = 0.0
        for w, tw, lc in zip(self.partner, self.day, self.logc):
            if tw != t or int(w) == int(recipient):
                continue
            wt0, wdE, wdI = self._cached_triple(int(w))
            if wt0 + wdE < t <= wt0 + wdE + wdI:
                total += lc
        return float((1.0 - self.params.p0) * np.exp(total))

    # ------------------------------------------------------------- activation

    def step(self, rng: np.random.Generator) -> tuple[int, int, int]:
        """Drain inbox, resample own trace, return the new triple."""
        self.drain_inbox()
        dyn = self._dynamic_tables()
        scores = score_all_triples(self.static, dyn)
        i = categorical_from_log_scores(scores, rng)
        sp = self.static.space
        self.trace = (int(sp.t0[i]), int(sp.dE[i]), int(sp.dI[i]))
        return self.trace

    def build_outgoing(self) -> list[Message]:
        """One message per distinct past contact partner."""
        t0 = self.trace[0]
        out: dict[int, Message] = {}
        for v, t, _ in zip(self.partner, self.day, self.logc):
            v = int(v)
            if v not in out:
                out[v] = Message(sender=self.uid, recipient=v,
                                 t0=self.trace[0], dE=self.trace[1],
                                 dI=self.trace[2])
            if t <= t0:
                out[v].f_values[int(t)] = self._f_excluding(v, int(t))
        return [out[v] for v in sorted(out)]


@dataclass
class FederatedConfig:
    """Activation schedule and delivery model."""

    n_activations: int = 1000
    schedule: str = "round_robin"        # "round_robin" | "random" | "replay"
    replay: list[int] | None = None
    delay: int = 0                       # activations until delivery
    edge_delays: dict | None = None      # (sender, recipient) -> delay override

    def __post_init__(self):
        if self.n_activations < 1:
            raise DomainError("need at least one activation")
        if self.schedule not in ("round_robin", "random", "replay"):
            raise DomainError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "replay" and not self.replay:
            raise DomainError("replay schedule needs an explicit activation list")
        if self.delay < 0:
            raise DomainError("delay must be non-negative")


@dataclass
class FederatedResult:
    activations: list[tuple[int, int, tuple[int, int, int]]]  # (idx, uid, triple)
    n_messages: int
    total_bytes: int
    final_traces: np.ndarray

    def samples_for(self, uid: int, burn_in: int = 0) -> np.ndarray:
        """Trace snapshots of one node's own activations, after burn-in."""
        snaps = [tr for i, u, tr in self.activations if u == uid][burn_in:]
        return np.asarray(snaps, dtype=np.int64).reshape(-1, 3)


class FederatedSimulation:
    """Drives device activations and message delivery."""

    def __init__(self, params: ModelParams, horizon: int, contacts: ContactLog,
                 tests: TestLog, config: FederatedConfig | None = None):
        if not 0.0 < params.p0 < 1.0:
            raise DomainError("trace inference requires p0 in (0, 1)")
        if contacts.n_records and contacts.max_day > horizon:
            raise DataError(f"contact log contains days beyond horizon {horizon}")
        if tests.n_records and tests.day.max() > horizon:
            raise DataError(f"test log contains days beyond horizon {horizon}")
        self.params = params
        self.T = int(horizon)
        self.n = contacts.n_individuals
        self.config = config or FederatedConfig()
        space = TripleSpace(horizon, params.qE.d_max, params.qI.d_max)
        logc_all = contacts.x.astype(np.float64) @ params.log_one_minus_p()
        self.nodes: list[DeviceNode] = []
        for u in range(self.n):
            m = contacts.dst == u
            own_tests = [(int(tests.day[i]), int(tests.outcome[i]))
                         for i in range(tests.n_records) if int(tests.u[i]) == u]
            self.nodes.append(DeviceNode(
                u, params, horizon, contacts.src[m], contacts.day[m],
                logc_all[m], own_tests, space))

    def _delay_for(self, sender: int, recipient: int) -> int:
        cfg = self.config
        if cfg.edge_delays:
            return int(cfg.edge_delays.get((sender, recipient), cfg.delay))
        return cfg.delay

    def run(self, rng) -> FederatedResult:
        """Run the configured number of activations; returns the trace log."""
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        cfg = self.config
        pending: list[tuple[int, int, Message]] = []   # (deliver_at, seq, msg)
        seq = 0
        activations = []
        n_messages = 0
        total_bytes = 0
        for i in range(cfg.n_activations):
            if cfg.schedule == "round_robin":
                uid = i % self.n
            elif cfg.schedule == "random":
                uid = int(rng.integers(0, self.n))
            else:
                uid = int(cfg.replay[i % len(cfg.replay)])
                if not 0 <= uid < self.n:
                    raise DataError(f"replay schedule names unknown node {uid}")
            while pending and pending[0][0] <= i:
                _, _, msg = heapq.heappop(pending)
                self.nodes[msg.recipient].receive(msg)
            node = self.nodes[uid]
            trace = node.step(rng)
            activations.append((i, uid, trace))
            for msg in node.build_outgoing():
                if not 0 <= msg.recipient < self.n:
                    raise DataError(f"message addressed to unknown node {msg.recipient}")
                n_messages += 1
                total_bytes += msg.approx_bytes()
                d = self._delay_for(msg.sender, msg.recipient)
                if d == 0:
                    self.nodes[msg.recipient].receive(msg)
                else:
                    heapq.heappush(pending, (i + d, seq, msg))
                    seq += 1
        final = np.asarray([list(nd.trace) for nd in self.nodes], dtype=np.int64)
        return FederatedResult(activations=activations, n_messages=n_messages,
                               total_bytes=total_bytes, final_traces=final)


def assert_device_locality(sim: FederatedSimulation, contacts: ContactLog,
                           tests: TestLog) -> None:
    """Verify every node holds only records that involve it.

    Raises AssertionError when a device references another individual's tests
    or a contact record it is not an endpoint of.
    """
    for node in sim.nodes:
        if node.partner.size and np.any(node.partner == node.uid):
            raise AssertionError(f"node {node.uid} lists itself as a partner")
        own = set(zip(node.partner.tolist(), node.day.tolist()))
        allowed = {(int(s), int(t)) for s, d, t in
                   zip(contacts.src, contacts.dst, contacts.day) if int(d) == node.uid}
        if not own <= allowed:
            raise AssertionError(f"node {node.uid} holds foreign contact records")
        own_tests = {(d, o) for d, o in node.tests}
        allowed_tests = {(int(tests.day[i]), int(tests.outcome[i]))
                         for i in range(tests.n_records) if int(tests.u[i]) == node.uid}
        if not own_tests <= allowed_tests:
            raise AssertionError(f"node {node.uid} holds foreign test records")
