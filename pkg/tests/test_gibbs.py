"""Posterior trace sampler: scoring soundness, sampler statistics, plumbing."""

import numpy as np
import pytest

import oracles
from crisp.contacts import ContactLog
from crisp.gibbs import (ContactView, GibbsConfig, GibbsEngine, TripleSpace,
                         categorical_from_log_scores, extend_censored_traces,
                         gibbs_step, precompute_dynamic, precompute_static,
                         risk_scores, score_all_triples, trace_log_score)
from crisp.model import (DataError, DomainError, NumericalError, TestLog,
                         trace_states)
from helpers import contacts_from, random_instance, tiny_params
from helpers import tests_from as make_tests


def group_by_individual(tlog, n):
    out = [[] for _ in range(n)]
    for i in range(tlog.n_records):
        out[int(tlog.u[i])].append((int(tlog.day[i]), int(tlog.outcome[i])))
    return out


def normalized(scores):
    finite = scores[np.isfinite(scores)]
    m = finite.max()
    return scores - (m + np.log(np.exp(finite - m).sum()))


# --- triple space -------------------------------------------------------------

def test_triple_space_matches_independent_enumeration():
    for T, de, di in [(4, 2, 2), (6, 2, 2), (5, 3, 2), (6, 14, 37)]:
        space = TripleSpace(T, de, di)
        mine = set(zip(space.t0.tolist(), space.dE.tolist(), space.dI.tolist()))
        ref = set(oracles.enumerate_triples(T, de, di))
        assert mine == ref


def test_triple_space_index_of_round_trips():
    space = TripleSpace(6, 2, 2)
    for i in range(space.n_triples):
        trip = (int(space.t0[i]), int(space.dE[i]), int(space.dI[i]))
        assert space.index_of(*trip) == i


# --- scoring soundness --------------------------------------------------------

def test_conditional_scores_match_joint_swap_oracle(tiny_params):
    rng = np.random.default_rng(11)
    for _ in range(8):
        contacts, tlog, n, T = random_instance(rng, tiny_params)
        space = TripleSpace(T, tiny_params.qE.d_max, tiny_params.qI.d_max)
        view = ContactView(contacts, tiny_params, T)
        cand = list(zip(space.t0.tolist(), space.dE.tolist(), space.dI.tolist()))
        triples = [cand[int(rng.integers(len(cand)))] for _ in range(n)]
        per_u = group_by_individual(tlog, n)
        arr = np.array(triples, dtype=np.int64)
        for u in range(n):
            static = precompute_static(tiny_params, T, per_u[u], space)
            dyn = precompute_dynamic(u, arr, view, tiny_params)
            mine = score_all_triples(static, dyn)
            ref = oracles.direct_log_conditional(u, triples, cand, contacts,
                                                 tlog, tiny_params, T)
            assert np.array_equal(np.isfinite(mine), np.isfinite(ref))
            a, b = normalized(mine), normalized(ref)
            fin = np.isfinite(a)
            assert np.abs(a[fin] - b[fin]).max() < 1e-9


def test_single_trace_score_matches_literal_factorization(tiny_params):
    rng = np.random.default_rng(23)
    for _ in range(6):
        contacts, tlog, n, T = random_instance(rng, tiny_params)
        space = TripleSpace(T, tiny_params.qE.d_max, tiny_params.qI.d_max)
        view = ContactView(contacts, tiny_params, T)
        cand = list(zip(space.t0.tolist(), space.dE.tolist(), space.dI.tolist()))
        triples = [cand[int(rng.integers(len(cand)))] for _ in range(n)]
        per_u = group_by_individual(tlog, n)
        arr = np.array(triples, dtype=np.int64)
        u = int(rng.integers(n))
        static = precompute_static(tiny_params, T, per_u[u], space)
        dyn = precompute_dynamic(u, arr, view, tiny_params)
        for _ in range(10):
            c = cand[int(rng.integers(len(cand)))]
            mine = trace_log_score(c, static, dyn)
            ref = oracles.direct_abc_score(u, c, triples, contacts, tlog,
                                           tiny_params, T)
            if np.isinf(ref):
                assert np.isinf(mine)
            else:
                assert abs(mine - ref) < 1e-9


def test_adding_day_constants_leaves_distribution_unchanged(tiny_params):
    # the per-day constant factor cancels in normalization: same draws exactly
    rng = np.random.default_rng(3)
    scores = rng.normal(size=40)
    scores[5] = -np.inf
    seq_a = [categorical_from_log_scores(scores, np.random.default_rng(s))
             for s in range(200)]
    seq_b = [categorical_from_log_scores(scores + 7.25, np.random.default_rng(s))
             for s in range(200)]
    assert seq_a == seq_b
    assert np.argmax(scores) == np.argmax(scores + 7.25)


# --- categorical sampler --------------------------------------------------------

def test_categorical_uniform_frequencies():
    rng = np.random.default_rng(8)
    k, n = 8, 40_000
    scores = np.zeros(k)
    draws = np.array([categorical_from_log_scores(scores, rng) for _ in range(n)])
    freq = np.bincount(draws, minlength=k) / n
    sigma = np.sqrt((1 / k) * (1 - 1 / k) / n)
    assert np.abs(freq - 1 / k).max() < 4 * sigma


def test_categorical_excludes_minus_inf():
    rng = np.random.default_rng(1)
    scores = np.array([-np.inf, 0.0, -np.inf, 1.0])
    for _ in range(200):
        assert categorical_from_log_scores(scores, rng) in (1, 3)


def test_categorical_degenerate_scores_raise():
    rng = np.random.default_rng(0)
    with pytest.raises(NumericalError):
        categorical_from_log_scores(np.full(5, -np.inf), rng)
    with pytest.raises(NumericalError):
        categorical_from_log_scores(np.array([np.nan, 0.0]), rng)


# --- sampler statistics ---------------------------------------------------------

def test_engine_single_individual_samples_exact_conditional(tiny_params):
    # n=1: sweeps are iid draws from the normalized score distribution
    T = 5
    contacts = ContactLog.empty(1, 1)
    tlog = make_tests([(0, 3, 1), (0, 5, 0)], 1)
    engine = GibbsEngine(tiny_params, T, contacts, tlog)
    space = TripleSpace(T, tiny_params.qE.d_max, tiny_params.qI.d_max)
    static = precompute_static(tiny_params, T, [(3, 1), (5, 0)], space)
    dyn = precompute_dynamic(0, engine.traces, ContactView(contacts, tiny_params, T),
                             tiny_params)
    scores = score_all_triples(static, dyn)
    probs = np.exp(normalized(scores))
    probs[~np.isfinite(probs)] = 0.0

    n_draws = 30_000
    samples = engine.run(GibbsConfig(n_samples=n_draws, burn_in=200),
                         np.random.default_rng(17))
    idx = np.array([space.index_of(int(a), int(b), int(c))
                    for a, b, c in samples[:, 0, :]])
    freq = np.bincount(idx, minlength=space.n_triples) / n_draws
    tv = 0.5 * np.abs(freq - probs).sum()
    assert tv < 0.02


def test_staged_and_dense_methods_agree(tiny_params):
    rng = np.random.default_rng(5)
    contacts = contacts_from([(0, 1, 2), (1, 2, 3), (0, 2, 4)], 3)
    tlog = make_tests([(1, 4, 1)], 3)
    marg = {}
    for method in ("staged", "dense"):
        engine = GibbsEngine(tiny_params, 5, contacts, tlog)
        samples = engine.run(GibbsConfig(n_samples=12_000, burn_in=100,
                                         method=method),
                             np.random.default_rng(99))
        m = np.zeros((3, 6, 4))
        for t in range(1, 6):
            st = np.stack([trace_states(s, t) for s in samples])
            for u in range(3):
                m[u, t] = np.bincount(st[:, u], minlength=4) / samples.shape[0]
        marg[method] = m
    tv = 0.5 * np.abs(marg["staged"] - marg["dense"]).sum(axis=2).max()
    assert tv < 0.05


def test_gibbs_step_mutates_only_target(tiny_params):
    rng = np.random.default_rng(2)
    contacts, tlog, n, T = random_instance(rng, tiny_params)
    engine = GibbsEngine(tiny_params, T, contacts, tlog)
    space = TripleSpace(T, tiny_params.qE.d_max, tiny_params.qI.d_max)
    per_u = group_by_individual(tlog, n)
    arr = engine.traces.copy()
    static = precompute_static(tiny_params, T, per_u[0], space)
    dyn = precompute_dynamic(0, arr, ContactView(contacts, tiny_params, T),
                             tiny_params)
    before = arr.copy()
    new = gibbs_step(0, arr, static, dyn, rng)
    assert tuple(arr[0]) == new
    assert np.array_equal(arr[1:], before[1:])


# --- engine plumbing ------------------------------------------------------------

def test_engine_state_is_three_integers_per_individual(tiny_params):
    contacts = contacts_from([(0, 1, 1)], 4)
    engine = GibbsEngine(tiny_params, 6, contacts, TestLog.empty(4))
    assert engine.traces.shape == (4, 3)
    assert np.issubdtype(engine.traces.dtype, np.integer)


def test_engine_determinism_and_sweep_modes(tiny_params):
    contacts = contacts_from([(0, 1, 2), (2, 3, 3), (1, 2, 4)], 4)
    tlog = make_tests([(2, 4, 1)], 4)
    for sweep in ("permutation", "iid"):
        cfg = GibbsConfig(n_samples=50, burn_in=5, sweep=sweep)
        a = GibbsEngine(tiny_params, 6, contacts, tlog).run(
            cfg, np.random.default_rng(123))
        b = GibbsEngine(tiny_params, 6, contacts, tlog).run(
            cfg, np.random.default_rng(123))
        assert np.array_equal(a, b)
        c = GibbsEngine(tiny_params, 6, contacts, tlog).run(
            cfg, np.random.default_rng(124))
        assert not np.array_equal(a, c)


def test_engine_validation(tiny_params):
    import helpers
    contacts = contacts_from([(0, 1, 2)], 3)
    with pytest.raises(DomainError):
        GibbsEngine(tiny_params, 0, contacts, TestLog.empty(3))
    with pytest.raises(DomainError):  # exogenous probability must be open (0,1)
        GibbsEngine(helpers.tiny_params(p0=0.0), 5, contacts, TestLog.empty(3))
    with pytest.raises(DataError):
        GibbsEngine(tiny_params, 5, contacts, TestLog.empty(4))  # population
    with pytest.raises(DataError):
        GibbsEngine(tiny_params, 5, contacts, make_tests([(0, 6, 1)], 3))
    with pytest.raises(DataError):  # contacts beyond horizon
        GibbsEngine(tiny_params, 1, contacts, TestLog.empty(3))


def test_initial_trace_validation(tiny_params):
    contacts = contacts_from([(0, 1, 2)], 2)
    good = np.array([[6, 0, 0], [2, 4, 0]])  # never; exposure running at T
    engine = GibbsEngine(tiny_params, 6, contacts, TestLog.empty(2),
                         initial_traces=good)
    assert np.array_equal(engine.traces, good)
    bad_shapes = [
        np.array([[0, 0, 0], [6, 0, 0]]),   # t0 < 1
        np.array([[3, 0, 2], [6, 0, 0]]),   # I without E
        np.array([[3, 1, 0], [6, 0, 0]]),   # E ended inside horizon, no I
        np.array([[6, 1, 0], [6, 0, 0]]),   # t0 = T with durations
        np.array([[2, 3, 3], [6, 0, 0]]),   # spills past horizon
    ]
    for bad in bad_shapes:
        with pytest.raises(DataError):
            GibbsEngine(tiny_params, 6, contacts, TestLog.empty(2),
                        initial_traces=bad)


def test_extend_censored_traces():
    old_T, new_T = 6, 9
    traces = np.array([
        [6, 0, 0],   # never infected: stays never at the new horizon
        [2, 4, 0],   # still exposed: exposure keeps running
        [1, 2, 3],   # still infectious: infection keeps running
        [1, 2, 2],   # complete: unchanged
    ])
    out = extend_censored_traces(traces, old_T, new_T)
    assert out.tolist() == [[9, 0, 0], [2, 7, 0], [1, 2, 6], [1, 2, 2]]
    assert np.array_equal(extend_censored_traces(traces, 6, 6), traces)
    with pytest.raises(DomainError):
        extend_censored_traces(traces, 9, 6)


def test_risk_scores_hand_example():
    samples = np.array([
        [[3, 0, 0], [1, 1, 1]],
        [[1, 2, 0], [1, 1, 1]],
        [[1, 1, 1], [1, 1, 1]],
        [[3, 0, 0], [2, 1, 0]],
    ])
    r = risk_scores(samples, day=3)
    # individual 0 at day 3: S, E, I, S -> [.5, .25, .25, 0]
    assert np.allclose(r[0], [0.5, 0.25, 0.25, 0.0])
    # individual 1 at day 3: (1,1,1) is infectious, (2,1,0) is exposed
    assert np.allclose(r[1], [0.0, 0.25, 0.75, 0.0])


def test_engine_warm_start_accepts_grown_horizon(tiny_params):
    # warm start pattern: sample at T, extend, rebuild engine at T+k
    contacts = contacts_from([(0, 1, 2), (1, 2, 4)], 3)
    tlog = make_tests([(1, 3, 1)], 3)
    engine = GibbsEngine(tiny_params, 5, contacts, tlog)
    samples = engine.run(GibbsConfig(n_samples=5, burn_in=2),
                         np.random.default_rng(0))
    grown = extend_censored_traces(samples[-1], 5, 7)
    engine2 = GibbsEngine(tiny_params, 7, contacts, tlog, initial_traces=grown)
    out = engine2.run(GibbsConfig(n_samples=5, burn_in=2),
                      np.random.default_rng(1))
    assert out.shape == (5, 3, 3)


def test_gibbs_config_validation():
    with pytest.raises(DomainError):
        GibbsConfig(n_samples=0)
    with pytest.raises(DomainError):
        GibbsConfig(sweep="spiral")
    with pytest.raises(DomainError):
        GibbsConfig(method="magic")
    with pytest.raises(DomainError):
        GibbsConfig(thinning=0)
