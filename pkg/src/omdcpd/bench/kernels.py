"""Compiled inner loops for the Monte-Carlo engine.

These fuse the per-branch scoring, mirror-descent update and statistic
reduction that :class:`~omdcpd.bench.engine.BatchDetector` otherwise does with
whole-array numpy operations.  The numpy path stays the reference; the test
suite checks the two agree.

Family codes: 0 Gaussian, 1 gamma, 2 Bernoulli.  All three log-partitions are
sums of per-coordinate terms, which is what makes the loops below possible.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numba import njit

from ..expfam import BERNOULLI_EPS, GAMMA_EPS, BernoulliProduct, GammaFixedShape, GaussianIdentity

GAUSSIAN, GAMMA, BERNOULLI = 0, 1, 2


def family_code(model) -> int:
    if isinstance(model, GaussianIdentity):
        return GAUSSIAN
    if isinstance(model, GammaFixedShape):
        return GAMMA
    if isinstance(model, BernoulliProduct):
        return BERNOULLI
    raise TypeError(f"no compiled kernel for {model!r}")


@njit(cache=True, inline="always")
def _lp(fam, th):
    if fam == GAUSSIAN:
        return 0.5 * th * th
    if fam == GAMMA:
        return -math.log(-th)
    if th > 0:
        return th + math.log1p(math.exp(-th))
    return math.log1p(math.exp(th))


@njit(cache=True, inline="always")
def _mean(fam, th):
    if fam == GAUSSIAN:
        return th
    if fam == GAMMA:
        return -1.0 / th
    if th >= 0:
        return 1.0 / (1.0 + math.exp(-th))
    e = math.exp(th)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _dual_grad(fam, mu):
    if fam == GAUSSIAN:
        return mu
    if fam == GAMMA:
        return -1.0 / mu
    m = min(max(mu, BERNOULLI_EPS), 1.0 - BERNOULLI_EPS)
    return math.log(m) - math.log1p(-m)


@njit(cache=True, inline="always")
def _clip_nat(fam, th):
    if fam == GAMMA and th > -GAMMA_EPS:
        return -GAMMA_EPS
    return th


@njit(cache=True)
def _reduce(loglam, p, m, lse):
    best = -np.inf
    for k in range(m):
        if loglam[p, k] > best:
            best = loglam[p, k]
    if not lse:
        return best
    acc = 0.0
    for k in range(m):
        acc += math.exp(loglam[p, k] - best)
    return best + math.log(acc)


@njit(cache=True)
def omd_branch_step(loglam, mu, theta, lp, m, phi, theta0, lp0, fam, eta,
                    proj, radius, lo, hi, lse, stat):
    """Score, update and reduce the first ``m`` branch slots of every path.

    ``proj``: 0 none (domain clip only), 1 L1 ball of ``radius``, 2 clamp to [lo, hi].
    """
    n, _, d = mu.shape
    tt = np.empty(d)
    a = np.empty(d)
    for p in range(n):
        for k in range(m):
            inc = lp0 - lp[p, k]
            for j in range(d):
                inc += (theta[p, k, j] - theta0[j]) * phi[p, j]
            loglam[p, k] += inc
            e = eta[k]
            for j in range(d):
                u = mu[p, k, j]
                u = u - e * (u - phi[p, j])
                mu[p, k, j] = u
                tt[j] = _dual_grad(fam, u)
            if proj == 1:
                l1 = 0.0
                for j in range(d):
                    l1 += abs(tt[j])
                if l1 > radius:
                    for j in range(d):
                        a[j] = abs(tt[j])
                    srt = np.sort(a)[::-1]
                    css = 0.0
                    tau = 0.0
                    for j in range(d):
                        css += srt[j]
                        if srt[j] * (j + 1) > css - radius:
                            tau = (css - radius) / (j + 1)
                    for j in range(d):
                        v = max(abs(tt[j]) - tau, 0.0)
                        nt = v if tt[j] >= 0 else -v
                        theta[p, k, j] = nt
                        mu[p, k, j] = _mean(fam, nt)
                else:
                    for j in range(d):
                        theta[p, k, j] = tt[j]
            else:
                for j in range(d):
                    nt = tt[j]
                    if proj == 2:
                        nt = min(max(nt, lo), hi)
                    nt = _clip_nat(fam, nt)
                    if nt != tt[j]:
                        mu[p, k, j] = _mean(fam, nt)
                    theta[p, k, j] = nt
            s = 0.0
            for j in range(d):
                s += _lp(fam, theta[p, k, j])
            lp[p, k] = s
        stat[p] = _reduce(loglam, p, m, lse)


@njit(cache=True)
def glr_branch_step(total, count, m, phi, theta0, lp0, fam, stat):
    n, _, d = total.shape
    for p in range(n):
        best = -np.inf
        for k in range(m):
            nk = count[k]
            val = lp0
            for j in range(d):
                total[p, k, j] += phi[p, j]
                mean = total[p, k, j] / nk
                th = _clip_nat(fam, _dual_grad(fam, mean))
                val += (th - theta0[j]) * mean - _lp(fam, th)
            val *= nk
            if val > best:
                best = val
        stat[p] = best


# -- Bernoulli with integer success counts ------------------------------------

def bernoulli_glr_table(theta0: float, width: int):
    """GLR value of one coordinate indexed by (count, successes).

    Entry ``[n, s]`` is ``n * [(th - theta0) * s/n - A(th) + A(theta0)]`` with
    ``th`` the clamped MLE of ``s`` successes in ``n`` trials.
    """
    n = np.arange(width + 1)[:, None].astype(float)
    s = np.arange(width + 1)[None, :].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.clip(s / n, BERNOULLI_EPS, 1 - BERNOULLI_EPS)
    th_mle = np.log(mean) - np.log1p(-mean)
    with np.errstate(invalid="ignore"):
        glr = n * ((th_mle - theta0) * (s / np.maximum(n, 1)) - np.logaddexp(0.0, th_mle)
                   + np.logaddexp(0.0, theta0))
    glr[0, :] = 0.0
    return glr


@lru_cache(maxsize=8)
def bernoulli_automaton(theta0: float, offset: float, width: int, lo: float = -np.inf, hi: float = np.inf):
    """Finite-state form of one Bernoulli coordinate under mirror descent.

    With binary observations, a common ``theta0`` and a coordinatewise
    feasible set, the estimator of a coordinate after ``n`` updates can only
    be one of finitely many values.  States are enumerated level by level
    (level = number of updates), merging dual values that agree to 1e-12.

    Returns ``(trans, a, b)``: ``trans[s, x]`` is the state after observing
    ``x``; the branch log-ratio increment of a coordinate in state ``s`` is
    ``x * a[s] + b[s]``.  State 0 is the spawn state ``theta0``.
    """
    mu = np.array([1.0 / (1.0 + math.exp(-theta0))])
    thetas = [np.array([theta0])]
    trans = []
    for n in range(width):
        eta = 1.0 / (n + 1 + offset)
        u = np.concatenate([mu - eta * mu, mu - eta * (mu - 1.0)])
        c = np.clip(u, BERNOULLI_EPS, 1 - BERNOULLI_EPS)
        t = np.log(c) - np.log1p(-c)
        nt = np.clip(t, lo, hi)
        u = np.where(nt != t, 1.0 / (1.0 + np.exp(-nt)), u)
        _, first, inv = np.unique(np.round(u, 12), return_index=True, return_inverse=True)
        base = sum(len(th) for th in thetas)
        trans.append((base + inv.reshape(2, -1).T).astype(np.int32))
        mu, th = u[first], nt[first]
        thetas.append(th)
    last = sum(len(th) for th in thetas[:-1])
    # the final level is never updated before eviction; point it at itself
    trans.append(np.repeat(np.arange(last, last + len(thetas[-1]), dtype=np.int32)[:, None], 2, axis=1))
    th = np.concatenate(thetas)
    return np.concatenate(trans), th - theta0, np.logaddexp(0.0, theta0) - np.logaddexp(0.0, th)


@njit(cache=True)
def bernoulli_fsm_step(loglam, state, m, x, trans, a, b, lse, stat):
    n, _, d = state.shape
    for p in range(n):
        for k in range(m):
            inc = 0.0
            for j in range(d):
                s = state[p, k, j]
                inc += b[s]
                if x[p, j]:
                    inc += a[s]
                state[p, k, j] = trans[s, x[p, j]]
            loglam[p, k] += inc
        stat[p] = _reduce(loglam, p, m, lse)


@njit(cache=True)
def bernoulli_glr_step(succ, count, m, x, glr_tab, stat):
    n, _, d = succ.shape
    for p in range(n):
        best = -np.inf
        for k in range(m):
            nk = count[k]
            val = 0.0
            for j in range(d):
                s = succ[p, k, j] + x[p, j]
                succ[p, k, j] = s
                val += glr_tab[nk, s]
            if val > best:
                best = val
        stat[p] = best
