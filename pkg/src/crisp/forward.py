"""Forward (generative) simulation of the individual-level SEIR model.

The simulation holds one latent state per individual and advances day by day.
Transitions from day t to t+1 are synchronous and use the day-t contact log:
susceptible individuals escape infection with probability
f(u,t) = (1 - p0_u) * prod over infectious in-contacts of (1 - p_j)^x_j,
exposed and infectious individuals leave their phase with the tabulated
hazard of their current phase age, recovered is absorbing.

Scenario presets reproduce population-scale epidemics (|S| = 10,000 over 274
days, one patient zero, channel transmissivity 0.01) under different contact
regimes: no mitigation (R0 = 2.5 throughout), social bubbles after day 60,
mitigation (R0 -> 1.0 after day 60), suppression (R0 -> 0.5 after day 60),
and release (suppression until day 120, then R0 back to 2.5).

Contact randomness is deterministic in (seed, day) and shared by all forward
samples of a scenario run, so rerunning with more samples does not perturb
the contact processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contacts import ContactLog, ContactPatternSpec, ContactPhase, generate_day_contacts
from .model import (EXPOSED, INFECTIOUS, RECOVERED, SUSCEPTIBLE, DataError,
                    DomainError, ModelParams)


class ForwardSimulation:
    """Stepwise forward sampler over a fixed population.

    Exposes the full latent state so policy loops can test, quarantine, and
    observe symptom onsets while the epidemic runs.
    """

    def __init__(self, params: ModelParams, n: int, rng: np.random.Generator,
                 p0=None, symptomatic_prob: float = 0.0):
        self.params = params
        self.n = int(n)
        self.rng = rng
        if p0 is None:
            self.p0 = np.full(n, params.p0)
        elif np.isscalar(p0):
            self.p0 = np.full(n, float(p0))
        else:
            self.p0 = np.asarray(p0, dtype=np.float64).copy()
            if self.p0.shape != (n,):
                raise DomainError("p0 override must be scalar or shape (n,)")
        if np.any(self.p0 < 0.0) or np.any(self.p0 > 1.0):
            raise DomainError("p0 values must lie in [0, 1]")
        if not 0.0 <= symptomatic_prob <= 1.0:
            raise DomainError("symptomatic_prob must lie in [0, 1]")
        self.symptomatic_prob = float(symptomatic_prob)

        self.day = 1
        self.z = np.full(n, SUSCEPTIBLE, dtype=np.int8)
        self.days_in_state = np.ones(n, dtype=np.int32)
        self.symptomatic = np.zeros(n, dtype=bool)
        self.symptomatic_onsets_today = np.zeros(0, dtype=np.int64)
        # trace bookkeeping: day infection occurred (last S day), phase lengths
        self._t0 = np.zeros(n, dtype=np.int32)       # 0 = not yet infected
        self._dE = np.zeros(n, dtype=np.int32)
        self._dI = np.zeros(n, dtype=np.int32)
        self._log1mp = params.log_one_minus_p()
        self._hazE = params.qE.hazards()
        self._hazI = params.qI.hazards()

    def counts(self) -> np.ndarray:
        """Current population counts (S, E, I, R)."""
        return np.bincount(self.z, minlength=4)[:4]

    def step(self, contacts_today: ContactLog | None) -> None:
        """Advance all individuals from self.day to self.day + 1."""
        z = self.z
        stay = np.ones(self.n, dtype=np.float64)

        s_mask = z == SUSCEPTIBLE
        log_pressure = np.zeros(self.n)
        if contacts_today is not None and contacts_today.n_records:
            if contacts_today.n_individuals != self.n:
                raise DataError("contact log population does not match simulation")
            sel = np.where((z[contacts_today.src] == INFECTIOUS)
                           & (contacts_today.day == self.day))[0]
            if sel.size:
                logc = contacts_today.x[sel].astype(np.float64) @ self._log1mp
                np.add.at(log_pressure, contacts_today.dst[sel], logc)
        stay[s_mask] = (1.0 - self.p0[s_mask]) * np.exp(log_pressure[s_mask])

        e_mask = z == EXPOSED
        stay[e_mask] = 1.0 - self._hazE[self.days_in_state[e_mask]]
        i_mask = z == INFECTIOUS
        stay[i_mask] = 1.0 - self._hazI[self.days_in_state[i_mask]]

        moved = self.rng.random(self.n) >= stay
        moved &= z != RECOVERED

        new_e = moved & s_mask
        new_i = moved & e_mask
        new_r = moved & i_mask
        self._t0[new_e] = self.day
        self._dE[new_i] = self.days_in_state[new_i]
        self._dI[new_r] = self.days_in_state[new_r]

        z[new_e] = EXPOSED
        z[new_i] = INFECTIOUS
        z[new_r] = RECOVERED
        self.days_in_state[moved] = 1
        self.days_in_state[~moved] += 1

        onset_ids = np.where(new_i)[0]
        if self.symptomatic_prob > 0.0 and onset_ids.size:
            flag = self.rng.random(onset_ids.size) < self.symptomatic_prob
            onset_ids = onset_ids[flag]
            self.symptomatic[onset_ids] = True
        else:
            onset_ids = np.zeros(0, dtype=np.int64)
        self.symptomatic_onsets_today = onset_ids
        self.day += 1

    def traces(self) -> np.ndarray:
        """Visible (censored) infection triples at the current day.

        Never infected -> (day, 0, 0); still exposed -> (t0, day - t0, 0);
        still infectious -> (t0, dE, day - t0 - dE); recovered -> complete.
        """
        t = self.day
        out = np.empty((self.n, 3), dtype=np.int64)
        z = self.z
        out[:, 0] = np.where(z == SUSCEPTIBLE, t, self._t0)
        out[:, 1] = np.where(z == EXPOSED, t - self._t0, self._dE)
        out[:, 2] = np.where(z == INFECTIOUS, t - self._t0 - self._dE, self._dI)
        return out


# ------------------------------------------------------------------ scenarios

SCENARIOS = ("no_mitigation", "bubbles", "mitigation", "suppression", "release")


@dataclass
class ScenarioConfig:
    """Population-scale scenario: contact regime plus epidemic parameters."""

    scenario: str = "no_mitigation"
    n: int = 10_000
    horizon: int = 274
    p0: float = 1e-6
    p_channel: float = 0.01
    n_samples: int = 10
    patient_zero: int = 0
    change_day: int = 60     # last day of the initial R0=2.5 regime
    release_day: int = 120   # last suppressed day in the release scenario
    bubble_size: int = 20

    def phases(self) -> list[ContactPhase]:
        last = self.horizon - 1
        c, r = self.change_day, self.release_day
        if self.scenario == "no_mitigation":
            return [ContactPhase(1, last, r0=2.5)]
        if self.scenario == "bubbles":
            return [ContactPhase(1, c, r0=2.5),
                    ContactPhase(c + 1, last, bubbles=True, intra_r0=2.0, inter_r0=0.5)]
        if self.scenario == "mitigation":
            return [ContactPhase(1, c, r0=2.5), ContactPhase(c + 1, last, r0=1.0)]
        if self.scenario == "suppression":
            return [ContactPhase(1, c, r0=2.5), ContactPhase(c + 1, last, r0=0.5)]
        if self.scenario == "release":
            return [ContactPhase(1, c, r0=2.5), ContactPhase(c + 1, r, r0=0.5),
                    ContactPhase(r + 1, last, r0=2.5)]
        raise DomainError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")

    def pattern_spec(self) -> ContactPatternSpec:
        return ContactPatternSpec(n=self.n, horizon=self.horizon,
                                  p_channel=self.p_channel, phases=self.phases(),
                                  bubble_size=self.bubble_size)

    def model_params(self) -> ModelParams:
        return ModelParams(p0=self.p0, p=np.array([self.p_channel]))


@dataclass
class ScenarioResult:
    counts: np.ndarray        # (n_samples, horizon + 1, 4); day 0 unused
    mean_counts: np.ndarray   # (horizon + 1, 4)
    config: ScenarioConfig = field(repr=False)

    def ever_infected_fraction(self, sample: int | None = None) -> float:
        c = self.mean_counts if sample is None else self.counts[sample]
        return float(1.0 - c[-1, SUSCEPTIBLE] / self.config.n)

    def peak_infectious_day(self, sample: int | None = None) -> int:
        c = self.mean_counts if sample is None else self.counts[sample]
        return int(np.argmax(c[1:, INFECTIOUS]) + 1)


def run_scenario(config: ScenarioConfig, seed: int = 0) -> ScenarioResult:
    """Run N forward samples of a scenario, sharing per-day contact draws.

    Contacts for day d are drawn once from a stream keyed by (seed, d) and
    applied to every forward sample, so sample count does not affect the
    contact processes. Sample RNGs come from spawned child seeds.
    """
    params = config.model_params()
    spec = config.pattern_spec()
    p0 = np.full(config.n, config.p0)
    p0[config.patient_zero] = 1.0
    children = np.random.SeedSequence(seed).spawn(config.n_samples)
    sims = [ForwardSimulation(params, config.n, np.random.default_rng(c), p0=p0)
            for c in children]
    counts = np.zeros((config.n_samples, config.horizon + 1, 4), dtype=np.int64)
    for i, sim in enumerate(sims):
        counts[i, 1] = sim.counts()
    for day in range(1, config.horizon):
        day_log = generate_day_contacts(spec, day, seed)
        for i, sim in enumerate(sims):
            sim.step(day_log)
            counts[i, day + 1] = sim.counts()
    return ScenarioResult(counts=counts, mean_counts=counts.mean(axis=0),
                          config=config)
