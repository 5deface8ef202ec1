"""Brute-force reference computations for the test suite.

Everything here evaluates the model the slow, literal way: full state
matrices, day-by-day transition products, no precomputation, no prefix sums,
no triple-space shortcuts. The production code must agree with these within
stated tolerances. Only the elementary model primitives (transition_prob,
no_infection_prob, test_likelihood) are shared with the package; all sequence
and posterior logic is derived independently here.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from crisp.model import (EXPOSED, INFECTIOUS, RECOVERED, SUSCEPTIBLE,
                         no_infection_prob, test_likelihood, transition_prob)


def states_from_triple(t0: int, dE: int, dI: int, T: int) -> np.ndarray:
    """State sequence z[1..T] (index 0 unused) implied by a triple."""
    z = np.empty(T + 1, dtype=np.int8)
    z[0] = -1
    for t in range(1, T + 1):
        if t <= t0:
            z[t] = SUSCEPTIBLE
        elif t <= t0 + dE:
            z[t] = EXPOSED
        elif t <= t0 + dE + dI:
            z[t] = INFECTIOUS
        else:
            z[t] = RECOVERED
    return z


def enumerate_triples(T: int, d_max_e: int, d_max_i: int) -> list[tuple[int, int, int]]:
    """All structurally valid censored triples at horizon T.

    Independent enumeration: filter the full (t0, dE, dI) cube by the
    censored-encoding rules. Includes zero-mass triples whose duration falls
    outside the tables; their sequence probability evaluates to zero.
    """
    out = []
    for t0 in range(1, T + 1):
        for dE in range(0, T - t0 + 1):
            for dI in range(0, T - t0 - dE + 1):
                if t0 == T:
                    if dE == 0 and dI == 0:
                        out.append((t0, dE, dI))
                    continue
                if dE == 0:
                    continue  # infected before T implies at least one E day
                if dI == 0 and t0 + dE != T:
                    continue  # leaving E implies entering I
                if dE > d_max_e or (dI > 0 and dI > d_max_i):
                    continue  # outside the duration tables: zero mass
                out.append((t0, dE, dI))
    return out


def _contact_lists(contacts, T: int):
    """per_day[t] = list of (src, dst, x_row) tuples."""
    per_day = [[] for _ in range(T + 1)]
    for i in range(contacts.n_records):
        t = int(contacts.day[i])
        if t <= T:
            per_day[t].append((int(contacts.src[i]), int(contacts.dst[i]),
                               np.asarray(contacts.x[i], dtype=np.float64)))
    return per_day


def sequence_log_prob(z: np.ndarray, states: np.ndarray, u: int,
                      per_day, params, T: int, p0_u: float | None = None) -> float:
    """log prod_t P(z_{u,t+1} | Z_t) for one individual given everyone's states.

    z is u's own sequence (T+1,), states the full (n, T+1) matrix (with row u
    ignored in favor of z for self-consistency of f).
    """
    total = 0.0
    for t in range(1, T):
        days_e = days_i = 0
        cur = z[t]
        if cur == EXPOSED:
            days_e = 1
            while t - days_e >= 1 and z[t - days_e] == EXPOSED:
                days_e += 1
        elif cur == INFECTIOUS:
            days_i = 1
            while t - days_i >= 1 and z[t - days_i] == INFECTIOUS:
                days_i += 1
        f = 1.0
        if cur == SUSCEPTIBLE:
            x = np.zeros(params.n_channels)
            for (s, d, xr) in per_day[t]:
                if d == u and s != u and states[s, t] == INFECTIOUS:
                    x += xr
            f = no_infection_prob(x, params, p0=p0_u)
        p = transition_prob(int(cur), int(z[t + 1]), f, days_e, days_i, params)
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


def tests_log_prob(z: np.ndarray, u: int, tests, params) -> float:
    total = 0.0
    for i in range(tests.n_records):
        if int(tests.u[i]) == u:
            p = test_likelihood(int(tests.outcome[i]), int(z[int(tests.day[i])]), params)
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
    return total


def joint_log_prob(triples, contacts, tests, params, T: int,
                   p0: np.ndarray | None = None) -> float:
    """log P(Z, O): full day-by-day product over all individuals and tests."""
    n = len(triples)
    states = np.stack([states_from_triple(*triples[u], T) for u in range(n)])
    per_day = _contact_lists(contacts, T)
    total = 0.0
    for u in range(n):
        p0_u = None if p0 is None else float(p0[u])
        total += sequence_log_prob(states[u], states, u, per_day, params, T, p0_u)
        total += tests_log_prob(states[u], u, tests, params)
        if total == -math.inf:
            return total
    return total


def direct_log_conditional(u: int, triples, candidate_triples, contacts, tests,
                           params, T: int) -> np.ndarray:
    """log P(Z, O) with u's triple swapped to each candidate (no shortcuts)."""
    scores = np.empty(len(candidate_triples))
    work = list(triples)
    for i, cand in enumerate(candidate_triples):
        work[u] = cand
        scores[i] = joint_log_prob(work, contacts, tests, params, T)
    return scores


def exhaustive_posterior(contacts, tests, params, T: int, n: int):
    """Exact posterior by enumerating every joint trace assignment.

    Returns (marginals, joint_probs, assignments) where marginals[u][t] is a
    length-4 array of exact state probabilities at day t and assignments the
    list of per-individual triple tuples.
    """
    cand = enumerate_triples(T, params.qE.d_max, params.qI.d_max)
    assignments = list(itertools.product(cand, repeat=n))
    logs = np.array([joint_log_prob(a, contacts, tests, params, T)
                     for a in assignments])
    m = logs.max()
    if not np.isfinite(m):
        raise ValueError("evidence has zero probability under the model")
    w = np.exp(logs - m)
    w /= w.sum()
    marginals = np.zeros((n, T + 1, 4))
    for a, wt in zip(assignments, w):
        if wt == 0.0:
            continue
        for u in range(n):
            z = states_from_triple(*a[u], T)
            for t in range(1, T + 1):
                marginals[u, t, z[t]] += wt
    return marginals, w, assignments


def direct_abc_score(u: int, candidate, triples, contacts, tests, params,
                     T: int) -> float:
    """Literal log score of u's candidate triple given everyone else.

    Three factors, each evaluated day by day from the model primitives with
    no precomputation: the candidate's own transition chain (duration prior
    and susceptibility survival), u's test likelihoods, and the transition
    factors of u's contact partners on days they are susceptible (the only
    partner factors that depend on u's state).
    """
    n = len(triples)
    states = np.stack([states_from_triple(*triples[v], T) for v in range(n)])
    states[u] = states_from_triple(*candidate, T)
    per_day = _contact_lists(contacts, T)
    total = sequence_log_prob(states[u], states, u, per_day, params, T)
    total += tests_log_prob(states[u], u, tests, params)
    if total == -math.inf:
        return total
    for t in range(1, T):
        for (s, d, xr) in per_day[t]:
            if s != u or d == u:
                continue
            v = d
            if states[v, t] != SUSCEPTIBLE:
                continue
            x = np.zeros(params.n_channels)
            for (s2, d2, xr2) in per_day[t]:
                if d2 == v and s2 != v and states[s2, t] == INFECTIOUS:
                    x += xr2
            f = no_infection_prob(x, params)
            p = transition_prob(SUSCEPTIBLE, int(states[v, t + 1]), f, 0, 0, params)
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
    return total


def finite_difference_gradient(fun, w: np.ndarray, h_scale: float = 1e-6) -> np.ndarray:
    """Central finite differences with per-coordinate step h = h_scale * max(1, |w_i|)."""
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    for i in range(w.shape[0]):
        h = h_scale * max(1.0, abs(w[i]))
        wp = w.copy(); wp[i] += h
        wm = w.copy(); wm[i] -= h
        g[i] = (fun(wp) - fun(wm)) / (2.0 * h)
    return g
