"""Compiled single-site update kernel for the trace sampler.

One sweep resamples every individual in the given order. Per individual the
kernel builds the per-day combined log-weight array D (partner-transition
ratios plus test log-ratios, applied on infectious days), prefix-sums it, and
draws the trace hierarchically:

    stage 1: t0  with weight  exp(G(t0)) * [sum_dE qE(dE) MIr(t0+dE) + tailE]
    stage 2: dE  with weight  qE(dE) * MIr(t0+dE)   (or the censored tail)
    stage 3: dI  with weight  qI(dI) * EDP(s+dI)    (or tailI(T-s) * EDP(T))

where G(t0) collects the infection-day mass (l0, contact survival, l'),
EDP(t) = exp(prefix(D) - maxshift), and MIr(s) is the total I-phase mass for
an I phase starting after day s, relative to EDP(s). The three stages
reproduce the full conditional over the censored triple space exactly.

All randomness comes from pre-drawn uniforms, so runs are reproducible
independent of compilation details. Degenerate weights (overflow/underflow
of the shifted exponentials) set a per-step flag; the caller redoes those
steps with the dense reference path.
"""

import numpy as np
from numba import njit

__all__ = ["sweep_staged", "stage_weights", "stage2_weights", "stage3_weights"]


@njit(cache=True, inline="always")
def _is_infectious(t0, dE, dI, t):
    return (t0 + dE < t) and (t <= t0 + dE + dI)


@njit(cache=True)
def _fill_day_tables(u, traces, P, c_indptr, c_src, c_day, c_logc,
                     t_indptr, t_day, t_ratio, p0, T, D, lprime, LP):
    """Fill D[1..T], lprime[1..T-1], LP[0..T-1] for individual u."""
    for t in range(T + 1):
        D[t] = 0.0
        lprime[t] = 0.0
    for t in range(T):
        LP[t] = 0.0
    om_p0 = 1.0 - p0
    ut0 = traces[u, 0]
    udE = traces[u, 1]
    udI = traces[u, 2]
    for r in range(c_indptr[u], c_indptr[u + 1]):
        v = c_src[r]
        t = c_day[r]
        lc = c_logc[r]
        if t > T - 1:
            continue
        vt0 = traces[v, 0]
        if t < vt0:
            # partner stays susceptible: ratio is the shared survival factor
            D[t] += lc
        elif t == vt0:
            # partner infected exactly at t: ratio (1 - f*c) / (1 - f) with
            # f the partner's no-infection probability excluding u
            pv = P[v, t]
            if _is_infectious(ut0, udE, udI, t):
                pv -= lc
            fm = om_p0 * np.exp(pv)
            D[t] += np.log1p(-fm * np.exp(lc)) - np.log1p(-fm)
        # partner already E/I/R at t: no dependence on u's state
    for r in range(t_indptr[u], t_indptr[u + 1]):
        D[t_day[r]] += t_ratio[r]
    lp0 = np.log(p0)
    acc = 0.0
    for t in range(1, T):
        pu = P[u, t]
        acc += pu
        LP[t] = acc
        if pu != 0.0:
            lprime[t] = np.log1p(-om_p0 * np.exp(pu)) - lp0


@njit(cache=True)
def _stage_tables(D, LP, lprime, p0, qE_pmf, qE_tail, qI_pmf, qI_tail, T,
                  DP, EDP, MIr, G, w1):
    """Fill prefix/stage arrays; returns the stage-1 total weight."""
    DP[0] = 0.0
    for t in range(1, T + 1):
        DP[t] = DP[t - 1] + D[t]
    mx = DP[0]
    for t in range(1, T + 1):
        if DP[t] > mx:
            mx = DP[t]
    for t in range(T + 1):
        EDP[t] = np.exp(DP[t] - mx)
    d_max_i = qI_pmf.shape[0] - 1
    d_max_e = qE_pmf.shape[0] - 1
    for t in range(T + 1):
        MIr[t] = 0.0
    for s in range(2, T):
        acc = 0.0
        hi = min(d_max_i, T - 1 - s)
        for dI in range(1, hi + 1):
            acc += qI_pmf[dI] * EDP[s + dI]
        k = T - s
        if k <= d_max_i:
            acc += qI_tail[k] * EDP[T]
        MIr[s] = acc / EDP[s]
    l1m = np.log1p(-p0)
    lp0 = np.log(p0)
    shift = -np.inf
    for t0 in range(1, T):
        G[t0] = (t0 - 1) * l1m + lp0 + LP[t0 - 1] + lprime[t0]
        if G[t0] > shift:
            shift = G[t0]
    G[T] = (T - 1) * l1m + LP[T - 1]
    if G[T] > shift:
        shift = G[T]
    total = 0.0
    w1[0] = 0.0
    for t0 in range(1, T):
        acc = 0.0
        hi = min(d_max_e, T - 1 - t0)
        for dE in range(1, hi + 1):
            acc += qE_pmf[dE] * MIr[t0 + dE]
        k = T - t0
        if k <= d_max_e:
            acc += qE_tail[k]
        w1[t0] = np.exp(G[t0] - shift) * acc
        total += w1[t0]
    w1[T] = np.exp(G[T] - shift)
    total += w1[T]
    return total


@njit(cache=True)
def stage2_weights(t0, MIr, qE_pmf, qE_tail, T):
    """Unnormalized weights over dE given t0 (index T - t0 = censored)."""
    d_max_e = qE_pmf.shape[0] - 1
    w = np.zeros(T + 1)
    hi = min(d_max_e, T - 1 - t0)
    for dE in range(1, hi + 1):
        w[dE] = qE_pmf[dE] * MIr[t0 + dE]
    k = T - t0
    if k <= d_max_e:
        w[k] += qE_tail[k]
    return w


@njit(cache=True)
def stage3_weights(s, EDP, qI_pmf, qI_tail, T):
    """Unnormalized weights over dI given I-start s (index T - s = censored)."""
    d_max_i = qI_pmf.shape[0] - 1
    w = np.zeros(T + 1)
    hi = min(d_max_i, T - 1 - s)
    for dI in range(1, hi + 1):
        w[dI] = qI_pmf[dI] * EDP[s + dI]
    k = T - s
    if k <= d_max_i:
        w[k] += qI_tail[k] * EDP[T]
    return w


@njit(cache=True, inline="always")
def _draw_from_weights(w, lo, hi, unif):
    """Index in [lo, hi] drawn proportional to w; -1 if all mass is zero."""
    total = 0.0
    for i in range(lo, hi + 1):
        total += w[i]
    if total <= 0.0:
        return -1
    target = unif * total
    cum = 0.0
    last = -1
    for i in range(lo, hi + 1):
        if w[i] > 0.0:
            last = i
        cum += w[i]
        if target < cum:
            return i
    return last  # roundoff fallback: last positive-mass index


@njit(cache=True)
def sweep_staged(traces, P, c_indptr, c_src, c_day, c_logc,
                 t_indptr, t_day, t_ratio, p0,
                 qE_pmf, qE_tail, qI_pmf, qI_tail, T,
                 order, uniforms, flags):
    """One in-place sweep of staged single-site updates.

    flags[i] is set when step i hit a degenerate weight state and was left
    unchanged (the caller must redo it with the dense path).
    """
    D = np.empty(T + 1)
    lprime = np.empty(T + 1)
    LP = np.empty(T)
    DP = np.empty(T + 1)
    EDP = np.empty(T + 1)
    MIr = np.empty(T + 1)
    G = np.empty(T + 1)
    w1 = np.empty(T + 1)
    for idx in range(order.shape[0]):
        u = order[idx]
        _fill_day_tables(u, traces, P, c_indptr, c_src, c_day, c_logc,
                         t_indptr, t_day, t_ratio, p0, T, D, lprime, LP)
        total = _stage_tables(D, LP, lprime, p0, qE_pmf, qE_tail,
                              qI_pmf, qI_tail, T, DP, EDP, MIr, G, w1)
        if not (total > 0.0 and np.isfinite(total)):
            flags[idx] = 1
            continue
        t0 = _draw_from_weights(w1, 1, T, uniforms[idx, 0])
        if t0 < 0:
            flags[idx] = 1
            continue
        if t0 == T:
            nt0 = T
            ndE = 0
            ndI = 0
        else:
            w2 = stage2_weights(t0, MIr, qE_pmf, qE_tail, T)
            dE = _draw_from_weights(w2, 1, T - t0, uniforms[idx, 1])
            if dE < 0:
                flags[idx] = 1
                continue
            nt0 = t0
            ndE = dE
            if dE == T - t0:
                ndI = 0   # still exposed at the horizon
            else:
                w3 = stage3_weights(t0 + dE, EDP, qI_pmf, qI_tail, T)
                dI = _draw_from_weights(w3, 1, T - t0 - dE, uniforms[idx, 2])
                if dI < 0:
                    flags[idx] = 1
                    continue
                ndI = dI
        ot0 = traces[u, 0]
        odE = traces[u, 1]
        odI = traces[u, 2]
        if nt0 != ot0 or ndE != odE or ndI != odI:
            for r in range(c_indptr[u], c_indptr[u + 1]):
                v = c_src[r]
                t = c_day[r]
                was = _is_infectious(ot0, odE, odI, t)
                now = _is_infectious(nt0, ndE, ndI, t)
                if was and not now:
                    P[v, t] -= c_logc[r]
                elif now and not was:
                    P[v, t] += c_logc[r]
            traces[u, 0] = nt0
            traces[u, 1] = ndE
            traces[u, 2] = ndI


@njit(cache=True)
def stage_weights(traces, P, c_indptr, c_src, c_day, c_logc,
                  t_indptr, t_day, t_ratio, p0,
                  qE_pmf, qE_tail, qI_pmf, qI_tail, T, u):
    """Stage arrays for one individual without updating state (inspection)."""
    D = np.empty(T + 1)
    lprime = np.empty(T + 1)
    LP = np.empty(T)
    DP = np.empty(T + 1)
    EDP = np.empty(T + 1)
    MIr = np.empty(T + 1)
    G = np.empty(T + 1)
    w1 = np.empty(T + 1)
    _fill_day_tables(u, traces, P, c_indptr, c_src, c_day, c_logc,
                     t_indptr, t_day, t_ratio, p0, T, D, lprime, LP)
    total = _stage_tables(D, LP, lprime, p0, qE_pmf, qE_tail,
                          qI_pmf, qI_tail, T, DP, EDP, MIr, G, w1)
    return w1, MIr, EDP, total
