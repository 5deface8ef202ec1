"""Monte Carlo EM estimation of transmission parameters.

Estimates the exogenous infection probability p0 and the per-channel
transmission probabilities p_j from test outcomes and the contact log. The
E-step draws posterior trace samples with the block-Gibbs sampler at the
current parameters; the M-step maximizes the expected complete-data
log-likelihood of the infection process by stochastic gradient ascent on
logit-parametrized weights.

Only the S->S / S->E factors depend on (p0, p): a sampled trace contributes
log f(u,t) for every survival day t < t0 and log(1 - f(u,t0)) for its
infection day, with f(u,t) = (1-p0) prod_j (1-p_j)^(X_utj) and X the
infectious-contact channel exposures implied by the sampled traces. Duration
and test factors do not involve (p0, p) and drop out. Sufficient statistics
therefore aggregate per (sample, individual): total survival days, summed
survival-day exposures, and the infection-day exposure vector if any.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contacts import ContactLog
from .gibbs import GibbsConfig, GibbsEngine
from .model import (DataError, DomainError, ModelParams, NumericalError,
                    TestLog)


@dataclass
class Weights:
    """Logit parametrization of (p0, p); gradients are taken in this space."""

    w0: float
    w: np.ndarray

    @classmethod
    def from_probs(cls, p0: float, p: np.ndarray) -> "Weights":
        if not 0.0 < p0 < 1.0 or np.any(p <= 0.0) or np.any(p >= 1.0):
            raise DomainError("logit weights require probabilities in (0, 1)")
        return cls(w0=float(np.log(p0 / (1.0 - p0))),
                   w=np.log(p / (1.0 - p)).astype(np.float64))

    def p0(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.w0)))

    def p(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.w))

    def flat(self) -> np.ndarray:
        return np.concatenate([[self.w0], self.w])

    @classmethod
    def from_flat(cls, v: np.ndarray) -> "Weights":
        return cls(w0=float(v[0]), w=np.asarray(v[1:], dtype=np.float64))


@dataclass
class CompleteDataStats:
    """Sufficient statistics grouped per (posterior sample, individual)."""

    surv_days: np.ndarray    # (G,) number of survival-day factors
    surv_x: np.ndarray       # (G, J) channel exposures summed over survival days
    has_event: np.ndarray    # (G,) bool: infection observed before the horizon
    event_x: np.ndarray      # (G, J) channel exposures on the infection day

    @property
    def n_groups(self) -> int:
        return self.surv_days.shape[0]

    def subset(self, idx: np.ndarray) -> "CompleteDataStats":
        return CompleteDataStats(self.surv_days[idx], self.surv_x[idx],
                                 self.has_event[idx], self.event_x[idx])


def collect_stats(samples: np.ndarray, contacts: ContactLog, T: int) -> CompleteDataStats:
    """Aggregate complete-data statistics from posterior trace samples."""
    samples = np.asarray(samples, dtype=np.int64)
    m, n, _ = samples.shape
    J = contacts.n_channels
    surv_days = np.empty(m * n, dtype=np.float64)
    surv_x = np.zeros((m * n, J))
    has_event = np.empty(m * n, dtype=bool)
    event_x = np.zeros((m * n, J))
    src, dst, day = contacts.src, contacts.dst, contacts.day
    xf = contacts.x.astype(np.float64)
    for i in range(m):
        tr = samples[i]
        lo = i * n
        t0 = tr[:, 0]
        surv_days[lo:lo + n] = t0 - 1
        has_event[lo:lo + n] = t0 < T
        if contacts.n_records:
            ts = tr[src]
            inf = (ts[:, 0] + ts[:, 1] < day) & (day <= ts[:, 0] + ts[:, 1] + ts[:, 2])
            t0_dst = t0[dst]
            surv = inf & (day < t0_dst)
            ev = inf & (day == t0_dst) & (t0_dst < T)
            for j in range(J):
                np.add.at(surv_x[lo:lo + n, j], dst[surv], xf[surv, j])
                np.add.at(event_x[lo:lo + n, j], dst[ev], xf[ev, j])
    return CompleteDataStats(surv_days, surv_x, has_event, event_x)


def mstep_objective(stats: CompleteDataStats, weights: Weights) -> float:
    """Expected complete-data log-likelihood of the infection process."""
    p0 = weights.p0()
    p = weights.p()
    if p0 >= 1.0 or np.any(p >= 1.0):
        return -np.inf      # saturated weights from an overshot trial step
    lp = np.log1p(-p)
    l0 = np.log1p(-p0)
    obj = float(stats.surv_days.sum() * l0 + (stats.surv_x @ lp).sum())
    he = stats.has_event
    if he.any():
        fe = (1.0 - p0) * np.exp(stats.event_x[he] @ lp)
        if np.any(fe >= 1.0):
            return -np.inf
        obj += float(np.log1p(-fe).sum())
    return obj


def mstep_gradient(stats: CompleteDataStats, weights: Weights) -> np.ndarray:
    """Gradient of mstep_objective in (w0, w) coordinates."""
    p0 = weights.p0()
    p = weights.p()
    lp = np.log1p(-p)
    g0 = -float(stats.surv_days.sum()) * p0
    gw = -stats.surv_x.sum(axis=0) * p
    he = stats.has_event
    if he.any():
        ex = stats.event_x[he]
        fe = (1.0 - p0) * np.exp(ex @ lp)
        ratio = fe / (1.0 - fe)
        g0 += float(ratio.sum()) * p0
        gw += (ratio[:, None] * ex).sum(axis=0) * p
    return np.concatenate([[g0], gw])


@dataclass
class EMConfig:
    """Monte Carlo EM settings."""

    max_iters: int = 50
    tol: float = 1e-4
    e_samples: int = 20
    e_burn_in: int = 10
    sgd_steps: int = 200
    sgd_rate: float = 0.05
    grad_clip: float = 20.0             # max-norm cap; the raw gradient scales
                                        # with the group count, not the step
    batch_size: int | None = None       # None: full batch when data is small
    full_batch_limit: int = 1_000_000   # contact records
    freeze_p0: bool = False

    def __post_init__(self):
        if self.max_iters < 1 or self.e_samples < 1 or self.sgd_steps < 1:
            raise DomainError("EM iteration counts must be positive")
        if self.tol <= 0.0 or self.sgd_rate <= 0.0 or self.grad_clip <= 0.0:
            raise DomainError("tol, sgd_rate and grad_clip must be positive")


@dataclass
class EMResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    converged: bool = False
    n_iters: int = 0


def mstep(stats: CompleteDataStats, weights: Weights, config: EMConfig,
          rng: np.random.Generator) -> Weights:
    """Gradient-ascent M-step from the given starting weights.

    Full-batch mode backtracks each step until it is an ascent step, so the
    objective is non-decreasing across inner iterations. Minibatch mode uses
    clipped stochastic gradients with a decaying rate; the raw gradient scales
    with the group count, so a fixed rate alone is unstable.
    """
    v = weights.flat().copy()
    full_batch = config.batch_size is None
    G = stats.n_groups
    if full_batch:
        cur = mstep_objective(stats, Weights.from_flat(v))
        for step in range(config.sgd_steps):
            g = mstep_gradient(stats, Weights.from_flat(v))
            if config.freeze_p0:
                g[0] = 0.0
            gsq = float(g @ g)
            if gsq == 0.0:
                break
            rate = config.sgd_rate
            for _ in range(60):
                trial = v + rate * g
                obj = mstep_objective(stats, Weights.from_flat(trial))
                if np.isfinite(obj) and obj >= cur + 1e-4 * rate * gsq:
                    break
                rate *= 0.5
            else:
                break       # no ascent step at float precision: converged
            v, cur = trial, obj
            if not np.all(np.isfinite(v)):
                raise NumericalError(
                    f"M-step diverged at inner step {step}: weights {v!r}")
    else:
        for step in range(config.sgd_steps):
            idx = rng.choice(G, size=min(config.batch_size, G), replace=False)
            batch = stats.subset(idx)
            g = mstep_gradient(batch, Weights.from_flat(v)) * (G / idx.shape[0])
            if config.freeze_p0:
                g[0] = 0.0
            gn = float(np.max(np.abs(g))) if g.size else 0.0
            if gn > config.grad_clip:
                g = g * (config.grad_clip / gn)
            v = v + config.sgd_rate / np.sqrt(1.0 + step) * g
            if not np.all(np.isfinite(v)):
                raise NumericalError(
                    f"M-step diverged at inner step {step}: weights {v!r}")
    return Weights.from_flat(v)


def em_fit(params: ModelParams, contacts: ContactLog, tests: TestLog,
           horizon: int, config: EMConfig, rng) -> EMResult:
    """Alternate posterior sampling and M-step ascent until parameters settle."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if config.batch_size is None and contacts.n_records > config.full_batch_limit:
        config = EMConfig(**{**config.__dict__, "batch_size": 4096})
    weights = Weights.from_probs(params.p0, params.p)
    history: list[dict] = []
    cur = params
    converged = False
    it = 0
    carry = None
    for it in range(1, config.max_iters + 1):
        # warm-start each E-step chain from the previous iteration's last
        # sample so discovered infection structure is not re-mixed from scratch
        engine = GibbsEngine(cur, horizon, contacts, tests, initial_traces=carry)
        gcfg = GibbsConfig(n_samples=config.e_samples, burn_in=config.e_burn_in)
        samples = engine.run(gcfg, rng)
        carry = samples[-1]
        stats = collect_stats(samples, contacts, horizon)
        new_weights = mstep(stats, weights, config, rng)
        # a frozen p0 keeps the caller's exact value, not its logit round-trip
        new_p0 = cur.p0 if config.freeze_p0 else new_weights.p0()
        new = ModelParams(p0=new_p0, p=new_weights.p(), alpha=cur.alpha,
                          beta=cur.beta, qE=cur.qE, qI=cur.qI)
        obj = mstep_objective(stats, new_weights)
        if not np.isfinite(obj):
            raise NumericalError(f"EM objective degenerate at iteration {it}: {obj}")
        delta = max(abs(new.p0 - cur.p0), float(np.abs(new.p - cur.p).max()))
        history.append({"iter": it, "p0": new.p0, "p": new.p.copy(),
                        "objective": obj, "delta": delta})
        cur, weights = new, new_weights
        if delta < config.tol:
            converged = True
            break
    return EMResult(params=cur, history=history, converged=converged, n_iters=it)
