"""Transmission-parameter estimation: statistics, gradients, M-step, EM loop."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from crisp.contacts import ContactLog
from crisp.em import (CompleteDataStats, EMConfig, Weights, collect_stats,
                      em_fit, mstep, mstep_gradient, mstep_objective)
from crisp.model import DomainError, TestLog
from helpers import contacts_from, tiny_params
from helpers import tests_from as make_tests


def stats_fixture(seed=0, G=60, J=2):
    rng = np.random.default_rng(seed)
    return CompleteDataStats(
        surv_days=rng.integers(1, 30, G).astype(np.float64),
        surv_x=rng.integers(0, 6, (G, J)).astype(np.float64),
        has_event=rng.random(G) < 0.5,
        event_x=rng.integers(0, 4, (G, J)).astype(np.float64),
    )


# --- statistics collection ------------------------------------------------------

def test_collect_stats_hand_example():
    # one sample, two individuals, T=5; groups are ordered (sample, individual)
    # u0: (1, 1, 2): infected at day 1, zero survival factors; a day-d contact
    #     transmits from u0 when t0+dE < d <= t0+dE+dI, i.e. days 3 and 4
    # u1: (5, 0, 0): never infected, T-1 = 4 survival factors
    samples = np.array([[[1, 1, 2], [5, 0, 0]]])
    contacts = contacts_from([(0, 1, 1), (0, 1, 2), (0, 1, 4)], 2)
    stats = collect_stats(samples, contacts, T=5)
    assert stats.n_groups == 2
    assert stats.surv_days.tolist() == [0.0, 4.0]
    assert bool(stats.has_event[0]) is True
    assert bool(stats.has_event[1]) is False
    # u1 is never infectious, so u0 sees no infectious exposure at all
    assert stats.surv_x[0].sum() == 0
    assert stats.event_x[0].sum() == 0
    # of u1's contact days 1, 2, 4 only day 4 meets u0 transmitting
    assert stats.surv_x[1].tolist() == [1.0]
    assert stats.event_x[1].sum() == 0


def test_collect_stats_event_exposure_counts_infectious_partners():
    # u1 (1, 1, 2) transmits on days 3..4; u0 infected exactly at day 3 with
    # a count-3 contact that day, and no contacts on its survival days 1..2
    samples = np.array([[[3, 1, 1], [1, 1, 2]]])
    contacts = contacts_from([(0, 1, 3, 3)], 2)  # day 3, count 3
    stats = collect_stats(samples, contacts, T=6)
    assert stats.surv_days.tolist() == [2.0, 0.0]
    assert stats.event_x[0].tolist() == [3.0]
    assert stats.surv_x[0].tolist() == [0.0]
    # u0 transmits on days 5..5, after u1's infection day
    assert stats.event_x[1].tolist() == [0.0]
    assert stats.surv_x[1].tolist() == [0.0]


def test_subset_keeps_group_alignment():
    stats = stats_fixture(G=10)
    idx = np.array([1, 4, 7])
    sub = stats.subset(idx)
    assert sub.n_groups == 3
    assert np.array_equal(sub.surv_days, stats.surv_days[idx])
    assert np.array_equal(sub.event_x, stats.event_x[idx])


# --- objective and gradient ------------------------------------------------------

def test_gradient_matches_finite_differences():
    stats = stats_fixture(seed=3)
    w = Weights.from_probs(0.01, np.array([0.05, 0.2]))
    g = mstep_gradient(stats, w)
    ref = oracles.finite_difference_gradient(
        lambda v: mstep_objective(stats, Weights.from_flat(v)), w.flat())
    rel = np.abs(g - ref) / np.maximum(1.0, np.abs(ref))
    assert rel.max() < 1e-5


def test_objective_is_average_complete_data_log_likelihood():
    # single group, single channel: hand-computable value
    stats = CompleteDataStats(
        surv_days=np.array([3.0]), surv_x=np.array([[2.0]]),
        has_event=np.array([True]), event_x=np.array([[1.0]]))
    p0, p1 = 0.1, 0.3
    w = Weights.from_probs(p0, np.array([p1]))
    got = mstep_objective(stats, w)
    want = (3 * np.log(1 - p0) + 2 * np.log(1 - p1)
            + np.log(1 - (1 - p0) * (1 - p1) ** 1))
    assert got == pytest.approx(want, rel=1e-12)


@given(w0=st.floats(-9, 9), w1=st.floats(-9, 9))
def test_weight_probability_round_trip(w0, w1):
    # w -> p -> w loses about eps * e^{|w|} to rounding of 1/(1+e^{-w}), so
    # 1e-12 is only attainable for moderate weights; |w| = 9 gives ~2e-13
    w = Weights(w0=w0, w=np.array([w1]))
    back = Weights.from_probs(w.p0(), w.p())
    assert abs(back.w0 - w0) < 1e-12 * max(1.0, abs(w0))
    assert abs(back.w[0] - w1) < 1e-12 * max(1.0, abs(w1))


@given(w0=st.floats(-30, 30), w1=st.floats(-30, 30))
def test_probability_weight_round_trip_wide_range(w0, w1):
    # p -> w -> p is the stable direction and holds across the whole range
    w = Weights(w0=w0, w=np.array([w1]))
    p0, p = w.p0(), w.p()
    back = Weights.from_probs(p0, p)
    assert np.isclose(back.p0(), p0, rtol=1e-12, atol=0.0)
    assert np.isclose(back.p()[0], p[0], rtol=1e-12, atol=0.0)


def test_from_probs_rejects_boundary():
    with pytest.raises(DomainError):
        Weights.from_probs(0.0, np.array([0.1]))
    with pytest.raises(DomainError):
        Weights.from_probs(0.1, np.array([1.0]))


def test_objective_invariant_under_group_relabeling():
    stats = stats_fixture(seed=5, G=40)
    w = Weights.from_probs(0.02, np.array([0.1, 0.3]))
    perm = np.random.default_rng(0).permutation(40)
    shuffled = stats.subset(perm)
    assert mstep_objective(stats, w) == pytest.approx(
        mstep_objective(shuffled, w), abs=1e-9)


def test_relabeling_individuals_leaves_objective_unchanged(tiny_params):
    # permute individual ids consistently in contacts and samples
    rng = np.random.default_rng(9)
    n, T = 5, 8
    rows = [(0, 1, 2), (1, 2, 3), (3, 4, 5), (0, 4, 6, 2)]
    contacts = contacts_from(rows, n)
    samples = np.array([
        [[2, 2, 1], [8, 0, 0], [1, 3, 2], [4, 4, 0], [8, 0, 0]],
        [[8, 0, 0], [3, 2, 3], [8, 0, 0], [2, 1, 1], [5, 3, 0]],
    ])
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    rows2 = [(int(perm[r[0]]), int(perm[r[1]]), r[2], *(r[3:] if len(r) > 3 else ()))
             for r in rows]
    contacts2 = contacts_from(rows2, n)
    samples2 = samples[:, inv, :]
    w = Weights.from_probs(0.05, np.array([0.2]))
    a = mstep_objective(collect_stats(samples, contacts, T), w)
    b = mstep_objective(collect_stats(samples2, contacts2, T), w)
    assert a == pytest.approx(b, abs=1e-9)


# --- M-step ----------------------------------------------------------------------

def test_mstep_does_not_decrease_objective():
    rng = np.random.default_rng(4)
    for seed in range(5):
        stats = stats_fixture(seed=seed)
        w0 = Weights.from_probs(0.05, np.array([0.1, 0.1]))
        before = mstep_objective(stats, w0)
        after = mstep_objective(stats, mstep(stats, w0, EMConfig(), rng))
        assert after >= before - 1e-6


def test_mstep_with_frozen_p0_keeps_it_fixed():
    rng = np.random.default_rng(4)
    stats = stats_fixture(seed=2)
    w0 = Weights.from_probs(0.01, np.array([0.1, 0.1]))
    out = mstep(stats, w0, EMConfig(freeze_p0=True), rng)
    assert out.w0 == w0.w0
    assert not np.allclose(out.w, w0.w)


def test_mstep_minibatch_path_runs():
    rng = np.random.default_rng(0)
    stats = stats_fixture(seed=7, G=50)
    w0 = Weights.from_probs(0.05, np.array([0.1, 0.2]))
    out = mstep(stats, w0, EMConfig(batch_size=16, sgd_steps=100), rng)
    assert np.isfinite(out.flat()).all()


def test_mstep_matches_direct_search_on_fully_observed_data(tiny_params):
    # supervised setting: statistics from the true traces; the SGD optimum
    # must match a brute-force search over the single free parameter
    rng = np.random.default_rng(12)
    n, T = 40, 25
    from crisp.contacts import ContactPatternSpec, ContactPhase, \
        generate_day_contacts
    from crisp.forward import ForwardSimulation
    from crisp.model import ModelParams
    true = ModelParams(p0=5e-3, p=np.array([0.3]), alpha=0.01, beta=0.01)
    sim = ForwardSimulation(true, n, rng)
    spec = ContactPatternSpec(n=n, horizon=T, p_channel=0.3,
                              phases=[ContactPhase(1, T - 1, r0=2.5)])
    log = ContactLog.empty(n, 1)
    while sim.day < T:
        today = generate_day_contacts(spec, sim.day, seed=31)
        sim.step(today)
        log = log.concat(today)
    stats = collect_stats(sim.traces()[None, :, :], log, T)
    assert stats.has_event.sum() > 3  # enough infections to identify p1

    start = Weights.from_probs(5e-3, np.array([0.05]))
    fitted = mstep(stats, start, EMConfig(freeze_p0=True, sgd_steps=400), rng)

    grid = np.linspace(0.01, 0.9, 2000)
    vals = [mstep_objective(stats, Weights.from_probs(5e-3, np.array([g])))
            for g in grid]
    best = grid[int(np.argmax(vals))]
    assert abs(fitted.p()[0] - best) < 1e-2


# --- EM loop ----------------------------------------------------------------------

def test_em_fit_runs_and_reports_history(tiny_params):
    n, T = 80, 30
    from crisp.contacts import ContactPatternSpec, ContactPhase, \
        generate_contacts
    from crisp.forward import ForwardSimulation
    from crisp.model import INFECTIOUS, ModelParams, trace_state
    true = ModelParams(p0=0.01, p=np.array([0.2]), alpha=0.001, beta=0.001)
    spec = ContactPatternSpec(n=n, horizon=T, p_channel=0.25,
                              phases=[ContactPhase(1, T - 1, r0=2.5)])
    log = generate_contacts(spec, seed=2)
    sim = ForwardSimulation(true, n, np.random.default_rng(0))
    slices = log.day_slices(T)
    indptr, order = slices
    while sim.day < T:
        rows = order[indptr[sim.day]:indptr[sim.day + 1]]
        today = ContactLog.build(log.src[rows], log.dst[rows], log.day[rows],
                                 log.x[rows], n, symmetrize=False, dedup=False)
        sim.step(today)
    # accurate daily tests on half the population pin down infection windows
    z = sim.traces()
    recs = []
    rng2 = np.random.default_rng(5)
    for day in range(1, T):
        for u in np.arange(0, n, 2):
            is_i = trace_state(z[u], day) == INFECTIOUS
            o = int(rng2.random() < (0.999 if is_i else 0.001))
            recs.append((int(u), int(day), o))
    tlog = TestLog.from_records(recs, n)

    start = ModelParams(p0=0.01, p=np.array([0.05]), alpha=0.001, beta=0.001,
                        qE=true.qE, qI=true.qI)
    res = em_fit(start, log, tlog, T,
                 EMConfig(max_iters=6, e_samples=60, e_burn_in=100,
                          freeze_p0=True, sgd_steps=150),
                 np.random.default_rng(77))
    assert res.n_iters >= 1
    assert len(res.history) == res.n_iters
    for row in res.history:
        assert set(row) >= {"iter", "p0", "objective"}
    assert res.params.p0 == start.p0  # frozen
    assert 0.0 < res.params.p[0] < 1.0
    # estimate climbed from the deliberately low start toward the truth
    assert res.params.p[0] > 0.08


def test_em_fit_determinism(tiny_params):
    contacts = contacts_from([(0, 1, 2), (1, 2, 3), (0, 2, 5)], 3)
    tlog = make_tests([(1, 4, 1)], 3)
    cfg = EMConfig(max_iters=2, e_samples=8, e_burn_in=4, sgd_steps=50)
    a = em_fit(tiny_params, contacts, tlog, 6, cfg, np.random.default_rng(3))
    b = em_fit(tiny_params, contacts, tlog, 6, cfg, np.random.default_rng(3))
    assert a.params.p0 == b.params.p0
    assert np.array_equal(a.params.p, b.params.p)
    assert a.history == b.history
