"""Closed-loop evaluation of testing-and-quarantining policies.

The harness simulates ground truth forward day by day while a policy, seeing
only revealed information, requests tests and names the individuals to keep
in quarantine. Per day d (for d >= t_star):

    1. the policy is queried for test requests and today's quarantine set,
    2. all contacts touching quarantined individuals are removed for the day,
    3. the true states advance one day over the surviving contacts and the
       requested test outcomes are sampled from the true states,
    4. each individual newly turned infectious is symptomatic with prob. 0.5,
    5. outcomes and the day's symptomatic list are revealed to the policy.

Policies never see true states: they receive an Observations view holding
realized contacts, revealed test results, and revealed symptomatic lists.
Scored axes are the fraction ever infected by the final day and the total
person-days spent in quarantine on policy-active days.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contacts import ContactLog, ContactPatternSpec, ContactPhase, generate_day_contacts
from .forward import ForwardSimulation
from .gibbs import (GibbsConfig, GibbsEngine, extend_censored_traces,
                    risk_scores)
from .model import (EXPOSED, INFECTIOUS, RECOVERED, SUSCEPTIBLE, CrispError,
                    DomainError, ModelParams, TestLog)

logger = logging.getLogger(__name__)

POLICY_KINDS = ("null", "lockdown", "symptom", "contact_tracing", "crisp")


@dataclass(frozen=True)
class Observations:
    """Everything a policy is allowed to see at decision time.

    contacts holds the realized (post-quarantine-deletion) contact log for
    days before `day`; test_results and symptomatic_by_day contain only
    entries already revealed by the harness.
    """

    day: int
    n: int
    contacts: ContactLog
    test_results: tuple[tuple[int, int, int], ...]   # (individual, day, outcome)
    symptomatic_by_day: dict[int, tuple[int, ...]]
    ever_positive: frozenset[int]


@dataclass
class Decisions:
    tests: list[int] = field(default_factory=list)
    quarantine: set[int] = field(default_factory=set)


@dataclass
class PolicyParams:
    """Policy selection and knobs for one run."""

    kind: str = "null"
    rho: int = 14                 # quarantine duration (symptom, contact_tracing)
    tau_ei: float = 0.3           # quarantine threshold on P(E or I) (crisp)
    tau_sr: float = 0.9           # release threshold on P(S or R) (crisp)
    budget: int = 10              # tests per day
    t_star: int = 30              # first policy-active day
    lookback: int = 7             # contact-tracing window, days d-7..d-1
    n_samples: int = 100          # posterior traces per day (crisp)
    burn_in: int = 10
    p0_scale: float = 10.0        # exogenous-rate inflation for inference (crisp)
    warm_start: bool = True       # reuse yesterday's traces at grown horizon

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise DomainError(f"unknown policy kind {self.kind!r}")
        if self.rho < 1:
            raise DomainError("quarantine duration must be >= 1 day")
        if not (0.0 < self.tau_ei < 1.0 and 0.0 < self.tau_sr < 1.0):
            raise DomainError("risk thresholds must lie in (0, 1)")
        if self.budget < 0:
            raise DomainError("test budget must be >= 0")
        if self.t_star < 1:
            raise DomainError("activation day must be >= 1")
        if self.lookback < 1:
            raise DomainError("lookback window must be >= 1 day")

    def label(self) -> str:
        if self.kind in ("symptom", "contact_tracing"):
            return f"{self.kind} rho={self.rho}"
        if self.kind == "crisp":
            return f"crisp tau_ei={self.tau_ei} tau_sr={self.tau_sr}"
        return self.kind


def _symptomatic_first(obs: Observations, budget: int) -> list[int]:
    """Yesterday's symptomatic onsets, ascending id, truncated to budget."""
    prev = obs.symptomatic_by_day.get(obs.day - 1, ())
    return sorted(prev)[:budget]


class Policy:
    """Base: stateful decision function over revealed observations."""

    def decide(self, obs: Observations, rng: np.random.Generator) -> Decisions:
        raise NotImplementedError


class NullPolicy(Policy):
    def decide(self, obs, rng):
        return Decisions()


class LockdownPolicy(Policy):
    def decide(self, obs, rng):
        return Decisions(quarantine=set(range(obs.n)))


class SymptomPolicy(Policy):
    """Test yesterday's symptomatic onsets; quarantine positives for rho days."""

    def __init__(self, params: PolicyParams):
        self.rho = params.rho
        self.budget = params.budget
        self.release_day: dict[int, int] = {}

    def decide(self, obs, rng):
        d = obs.day
        for u, day, outcome in obs.test_results:
            if day == d - 1 and outcome == 1:
                # positive revealed yesterday: quarantine days d..d+rho-1
                self.release_day[u] = max(self.release_day.get(u, 0), d + self.rho - 1)
        quarantine = {u for u, rel in self.release_day.items() if rel >= d}
        return Decisions(tests=_symptomatic_first(obs, self.budget),
                         quarantine=quarantine)


class ContactTracingPolicy(Policy):
    """Quarantine positives plus their recent contacts; test the quarantined.

    Spare budget after symptomatic tests goes to quarantined individuals in
    descending order of their contact count with ever-positive individuals
    over the lookback window (ties broken by ascending id). A negative test
    releases the individual from quarantine.
    """

    def __init__(self, params: PolicyParams):
        self.rho = params.rho
        self.budget = params.budget
        self.lookback = params.lookback
        self.release_day: dict[int, int] = {}

    def decide(self, obs, rng):
        d = obs.day
        window = obs.contacts.restrict_days(max(1, d - self.lookback), d - 1)
        for u, day, outcome in obs.test_results:
            if day != d - 1:
                continue
            if outcome == 1:
                rel = d + self.rho - 1
                self.release_day[u] = max(self.release_day.get(u, 0), rel)
                partners = np.unique(window.dst[window.src == u])
                for v in partners.tolist():
                    self.release_day[v] = max(self.release_day.get(v, 0), rel)
            else:
                self.release_day.pop(u, None)
        quarantine = {u for u, rel in self.release_day.items() if rel >= d}

        tests = _symptomatic_first(obs, self.budget)
        spare = self.budget - len(tests)
        if spare > 0 and quarantine:
            pos = np.fromiter(obs.ever_positive, dtype=np.int64,
                              count=len(obs.ever_positive))
            counts = np.zeros(obs.n, dtype=np.int64)
            if pos.size and window.n_records:
                from_pos = np.isin(window.src, pos)
                np.add.at(counts, window.dst[from_pos], 1)
            ranked = sorted(quarantine - set(tests),
                            key=lambda u: (-counts[u], u))
            tests.extend(ranked[:spare])
        return Decisions(tests=tests, quarantine=quarantine)


class CrispPolicy(Policy):
    """Risk-threshold quarantining from daily posterior state estimates.

    Each day runs the block-Gibbs sampler on all data before the current day
    (horizon = current day, exogenous rate inflated by p0_scale) and turns
    the sampled traces into per-individual state probabilities for today.
    Tests go to yesterday's symptomatic first, then to not-yet-positive
    individuals by descending P(I). Individuals enter quarantine when
    P(E or I) > tau_ei and leave when P(S or R) > tau_sr.
    """

    def __init__(self, inference_params: ModelParams, params: PolicyParams):
        self.inference_params = replace_p0(inference_params,
                                           inference_params.p0 * params.p0_scale)
        self.cfg = params
        self.quarantined: set[int] = set()
        self._last_traces: np.ndarray | None = None
        self._last_T: int | None = None

    def _initial_traces(self, T: int) -> np.ndarray | None:
        if not self.cfg.warm_start or self._last_traces is None:
            return None
        return extend_censored_traces(self._last_traces, self._last_T, T)

    def decide(self, obs, rng):
        d = obs.day
        tests = _symptomatic_first(obs, self.cfg.budget)
        try:
            tlog = TestLog.from_records(obs.test_results, obs.n) \
                if obs.test_results else TestLog.empty(obs.n)
            engine = GibbsEngine(self.inference_params, d, obs.contacts, tlog,
                                 initial_traces=self._initial_traces(d))
            samples = engine.run(GibbsConfig(n_samples=self.cfg.n_samples,
                                             burn_in=self.cfg.burn_in), rng)
        except CrispError as exc:
            logger.warning("day %d: posterior sampling failed (%s); keeping "
                           "yesterday's quarantine set", d, exc)
            return Decisions(tests=[], quarantine=set(self.quarantined))
        self._last_traces = samples[-1]
        self._last_T = d
        risk = risk_scores(samples, d)

        spare = self.cfg.budget - len(tests)
        if spare > 0:
            candidates = [u for u in range(obs.n)
                          if u not in obs.ever_positive and u not in tests]
            candidates.sort(key=lambda u: (-risk[u, INFECTIOUS], u))
            tests.extend(candidates[:spare])

        p_ei = risk[:, EXPOSED] + risk[:, INFECTIOUS]
        p_sr = risk[:, SUSCEPTIBLE] + risk[:, RECOVERED]
        for u in range(obs.n):
            if u not in self.quarantined and p_ei[u] > self.cfg.tau_ei:
                self.quarantined.add(u)
            elif u in self.quarantined and p_sr[u] > self.cfg.tau_sr:
                self.quarantined.discard(u)
        return Decisions(tests=tests, quarantine=set(self.quarantined))


def replace_p0(params: ModelParams, p0: float) -> ModelParams:
    return ModelParams(p0=p0, p=params.p, alpha=params.alpha, beta=params.beta,
                       qE=params.qE, qI=params.qI)


def make_policy(params: PolicyParams, inference_params: ModelParams) -> Policy:
    if params.kind == "null":
        return NullPolicy()
    if params.kind == "lockdown":
        return LockdownPolicy()
    if params.kind == "symptom":
        return SymptomPolicy(params)
    if params.kind == "contact_tracing":
        return ContactTracingPolicy(params)
    return CrispPolicy(inference_params, params)


@dataclass
class PolicyRunConfig:
    """Ground-truth world for policy evaluation."""

    n: int = 1000
    horizon: int = 150
    r0: float = 2.5
    p_channel: float = 0.025
    p0: float = 1e-4
    alpha: float = 0.001
    beta: float = 0.01
    patient_zero: int = 0
    symptomatic_prob: float = 0.5

    def model_params(self) -> ModelParams:
        return ModelParams(p0=self.p0, p=[self.p_channel],
                           alpha=self.alpha, beta=self.beta)

    def pattern_spec(self) -> ContactPatternSpec:
        return ContactPatternSpec(
            n=self.n, horizon=self.horizon, p_channel=self.p_channel,
            phases=[ContactPhase(1, self.horizon - 1, r0=self.r0)])


@dataclass
class RunMetrics:
    """Outcome of one policy run."""

    infected_pct: float
    quarantine_days: int
    tests_used: int
    quarantine_composition: np.ndarray   # (T+1, 4) quarantined counts by true state
    final_counts: np.ndarray             # population split over S/E/I/R at day T

    def row(self) -> dict:
        return {"infected_pct": self.infected_pct,
                "quarantine_days": self.quarantine_days,
                "tests_used": self.tests_used}


def run_policy(policy_params: PolicyParams, run_config: PolicyRunConfig,
               seed: int) -> RunMetrics:
    """Simulate one closed-loop run; deterministic given (params, seed)."""
    n, T = run_config.n, run_config.horizon
    t_star = policy_params.t_star
    params = run_config.model_params()
    spec = run_config.pattern_spec()
    ss = np.random.SeedSequence([int(seed), 0xC0FFEE])
    truth_ss, test_ss, policy_ss, contact_ss = ss.spawn(4)
    rng_test = np.random.default_rng(test_ss)
    rng_policy = np.random.default_rng(policy_ss)
    contact_seed = int(contact_ss.generate_state(1)[0])

    p0_truth = np.full(n, run_config.p0)
    p0_truth[run_config.patient_zero] = 1.0
    sim = ForwardSimulation(params, n, np.random.default_rng(truth_ss),
                            p0=p0_truth,
                            symptomatic_prob=run_config.symptomatic_prob)
    policy = make_policy(policy_params, params)

    realized = ContactLog.empty(n)
    test_results: list[tuple[int, int, int]] = []
    symptomatic_by_day: dict[int, tuple[int, ...]] = {}
    ever_positive: set[int] = set()
    quarantine_days = 0
    tests_used = 0
    composition = np.zeros((T + 1, 4), dtype=np.int64)

    for d in range(1, T):
        contacts_d = generate_day_contacts(spec, d, contact_seed)
        tests_today: list[int] = []
        quarantine: set[int] = set()
        if d >= t_star:
            obs = Observations(
                day=d, n=n, contacts=realized,
                test_results=tuple(test_results),
                symptomatic_by_day=dict(symptomatic_by_day),
                ever_positive=frozenset(ever_positive))
            decisions = policy.decide(obs, rng_policy)
            tests_today = list(decisions.tests)
            if len(tests_today) > policy_params.budget:
                logger.warning("day %d: %s requested %d tests, budget is %d; "
                               "truncating", d, policy_params.kind,
                               len(tests_today), policy_params.budget)
                tests_today = tests_today[:policy_params.budget]
            quarantine = {int(u) for u in decisions.quarantine}

        today = contacts_d.without_individuals_on_day(quarantine, d) \
            if quarantine else contacts_d
        if quarantine:
            q = np.fromiter(quarantine, dtype=np.int64, count=len(quarantine))
            composition[d] = np.bincount(sim.z[q], minlength=4)[:4]
            quarantine_days += len(quarantine)

        # outcomes are sampled against the true state on the test day
        outcomes = []
        for u in tests_today:
            if sim.z[u] == INFECTIOUS:
                o = 0 if rng_test.random() < params.alpha else 1
            else:
                o = 1 if rng_test.random() < params.beta else 0
            outcomes.append((int(u), d, int(o)))
        tests_used += len(outcomes)

        sim.step(today)
        realized = realized.concat(today)

        if d >= t_star:
            test_results.extend(outcomes)
            ever_positive.update(u for u, _, o in outcomes if o == 1)
            symptomatic_by_day[d] = tuple(sim.symptomatic_onsets_today.tolist())

    infected_pct = 100.0 * float(np.mean(sim.z != SUSCEPTIBLE))
    return RunMetrics(infected_pct=infected_pct,
                      quarantine_days=quarantine_days,
                      tests_used=tests_used,
                      quarantine_composition=composition,
                      final_counts=sim.counts())


# ----------------------------------------------------------------- grid runs

def default_grid(rhos=(2, 7, 14, 21), taus=(0.2, 0.3, 0.4, 0.5),
                 tau_sr: float = 0.9, **common) -> list[PolicyParams]:
    """Baselines plus the swept policy points."""
    grid = [PolicyParams(kind="null", **common),
            PolicyParams(kind="lockdown", **common)]
    grid += [PolicyParams(kind="symptom", rho=r, **common) for r in rhos]
    grid += [PolicyParams(kind="contact_tracing", rho=r, **common) for r in rhos]
    grid += [PolicyParams(kind="crisp", tau_ei=t, tau_sr=tau_sr, **common)
             for t in taus]
    return grid


def _grid_worker(args) -> dict:
    policy_params, run_config, seed = args
    metrics = run_policy(policy_params, run_config, seed)
    return {"policy": policy_params.label(), "kind": policy_params.kind,
            "rho": policy_params.rho, "tau_ei": policy_params.tau_ei,
            "tau_sr": policy_params.tau_sr, "seed": seed,
            "infected_pct": metrics.infected_pct,
            "quarantine_days": metrics.quarantine_days,
            "tests_used": metrics.tests_used}


def n_workers() -> int:
    env = os.environ.get("CRISP_THREADS")
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)))


def evaluate_policy_grid(points: list[PolicyParams],
                         run_config: PolicyRunConfig,
                         seeds, max_workers: int | None = None) -> list[dict]:
    """Run every (point, seed) pair; returns one row per run, in grid order."""
    seeds = [int(s) for s in seeds]
    jobs = [(p, run_config, s) for p in points for s in seeds]
    workers = max_workers if max_workers is not None else n_workers()
    if workers <= 1 or len(jobs) == 1:
        return [_grid_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_grid_worker, jobs, chunksize=1))


def summarize_grid(rows: list[dict]) -> list[dict]:
    """Per-point means and standard deviations over seeds."""
    by_label: dict[str, list[dict]] = {}
    order: list[str] = []
    for r in rows:
        if r["policy"] not in by_label:
            by_label[r["policy"]] = []
            order.append(r["policy"])
        by_label[r["policy"]].append(r)
    out = []
    for label in order:
        grp = by_label[label]
        inf = np.array([g["infected_pct"] for g in grp])
        qd = np.array([g["quarantine_days"] for g in grp])
        out.append({"policy": label, "kind": grp[0]["kind"],
                    "n_runs": len(grp),
                    "infected_pct_mean": float(inf.mean()),
                    "infected_pct_std": float(inf.std(ddof=1)) if len(grp) > 1 else 0.0,
                    "quarantine_days_mean": float(qd.mean()),
                    "quarantine_days_std": float(qd.std(ddof=1)) if len(grp) > 1 else 0.0})
    return out
