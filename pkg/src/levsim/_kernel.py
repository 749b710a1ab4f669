"""Compiled simulation loop.

A line-for-line port of :func:`levsim.engine.step` over flat arrays.  Operation
order matches the pure-Python rules in :mod:`levsim.model` and
:mod:`levsim.clearing` so the two paths produce identical floats; the test
suite checks this.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .model import MARGIN_SLACK

# status codes
OK = 0
BRACKET_FAILED = 1


@njit(cache=True)
def _settle(W, D, C, rp, p, p_prev, a, b, r_b, flows_in_clearing):
    if W <= 0:
        ret = 0.0
    else:
        ret = D * (p - p_prev) / W
    r_perf = (1.0 - a) * rp + a * ret
    if flows_in_clearing:
        fv = D * p + C
        rp_flow = r_perf
    else:
        fv = D * p_prev + C
        rp_flow = (1.0 - a) * rp + a * 0.0
    if fv <= 0:
        flow = 0.0
    else:
        flow = max(b * (rp_flow - r_b) * fv, -fv)
    wealth = W + (p - p_prev) * D + flow
    return wealth, ret, r_perf, flow


@njit(cache=True)
def _demand(m, wealth, p, beta, cap):
    if m <= 0 or wealth <= 0:
        return 0.0
    if m >= cap / beta:
        return cap * wealth / p
    return beta * m * wealth / p


@njit(cache=True)
def _position(m, wealth, p, beta, cap):
    d = _demand(m, wealth, p, beta, cap)
    if m > 0 and m >= cap / beta:
        return d, wealth * (1.0 - cap)
    return d, wealth - d * p


@njit(cache=True)
def _excess(p, xi, p_prev, W, D, C, rp, active, beta, caps, V, N, a, b, r_b, thresh, flows):
    total = xi / p
    for h in range(W.shape[0]):
        if not active[h]:
            continue
        w = _settle(W[h], D[h], C[h], rp[h], p, p_prev, a, b, r_b, flows)[0]
        if w < thresh or w <= 0:
            continue
        total += _demand(V - p, w, p, beta[h], caps[h])
    return total - N


@njit(cache=True)
def _variance(buf, n):
    s = 0.0
    for i in range(n):
        s += buf[i]
    mean = s / n
    ss = 0.0
    for i in range(n):
        d = buf[i] - mean
        ss += d * d
    return ss / (n - 1)


@njit(cache=True)
def run_kernel(chi, V, N, sigma, rho, a, b, r_b, W0, thresh, T_reintro,
               beta, lam, volatility_policy, kappa, tau, vol_on_price,
               flows, tol, max_iter):
    T = chi.shape[0]
    H = beta.shape[0]
    price = np.empty(T)
    xi_out = np.empty(T)
    residual = np.empty(T)
    iters = np.empty(T, dtype=np.int64)
    wealth = np.empty((T, H))
    shares = np.empty((T, H))
    cash = np.empty((T, H))
    flow = np.empty((T, H))
    ret = np.empty((T, H))
    rperf = np.empty((T, H))
    cap_out = np.empty((T, H))
    margin = np.zeros((T, H), dtype=np.bool_)
    default = np.zeros((T, H), dtype=np.bool_)
    rebirth = np.zeros((T, H), dtype=np.bool_)

    W = np.full(H, W0)
    D = np.zeros(H)
    C = np.full(H, W0)
    rp = np.zeros(H)
    reentry = np.full(H, -1, dtype=np.int64)
    active = np.ones(H, dtype=np.bool_)
    caps = lam.copy()

    # trailing window: log returns (or prices) ordered oldest first
    window = np.empty(tau)
    n_win = 0
    if vol_on_price:
        window[0] = V
        n_win = 1

    xi = V * N
    p_prev = V
    log_VN = math.log(V * N)

    for i in range(T):
        t = i + 1
        for h in range(H):
            if not active[h] and reentry[h] <= t:
                active[h] = True
                reentry[h] = -1
                W[h] = W0
                D[h] = 0.0
                C[h] = W0
                rp[h] = 0.0
                rebirth[i, h] = True

        xi = math.exp(rho * math.log(xi) + sigma * chi[i] + (1.0 - rho) * log_VN)

        if volatility_policy:
            var = 0.0
            if n_win >= 2:
                var = _variance(window, n_win)
            for h in range(H):
                caps[h] = max(1.0, lam[h] / (1.0 + kappa * var))

        # --- clearing (mirrors clearing.clear_price) ---
        lo = 1e-4 * V
        hi = max(10.0 * V, 2.0 * xi / N)
        f_lo = _excess(lo, xi, p_prev, W, D, C, rp, active, beta, caps, V, N, a, b, r_b, thresh, flows)
        f_hi = _excess(hi, xi, p_prev, W, D, C, rp, active, beta, caps, V, N, a, b, r_b, thresh, flows)
        for _ in range(8):
            if f_lo > 0 and f_hi < 0:
                break
            if f_lo <= 0:
                lo /= 10.0
                f_lo = _excess(lo, xi, p_prev, W, D, C, rp, active, beta, caps, V, N, a, b, r_b, thresh, flows)
            if f_hi >= 0:
                hi *= 10.0
                f_hi = _excess(hi, xi, p_prev, W, D, C, rp, active, beta, caps, V, N, a, b, r_b, thresh, flows)
        if not (f_lo > 0 and f_hi < 0):
            return (BRACKET_FAILED, i, price, xi_out, residual, iters, wealth, shares, cash,
                    flow, ret, rperf, cap_out, margin, default, rebirth)
        found = False
        p = lo
        res = f_lo
        it = max_iter
        for k in range(1, max_iter + 1):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                it = k
                break
            f_mid = _excess(mid, xi, p_prev, W, D, C, rp, active, beta, caps, V, N, a, b, r_b, thresh, flows)
            if abs(f_mid) <= tol:
                p = mid
                res = f_mid
                it = k
                found = True
                break
            if f_mid > 0:
                lo = mid
                f_lo = f_mid
            else:
                hi = mid
                f_hi = f_mid
        if not found:
            if abs(f_lo) <= abs(f_hi):
                p = lo
                res = f_lo
            else:
                p = hi
                res = f_hi

        # --- settlement, margin calls, defaults, new positions ---
        m = V - p
        for h in range(H):
            cap_out[i, h] = caps[h]
            if not active[h]:
                wealth[i, h] = 0.0
                shares[i, h] = 0.0
                cash[i, h] = 0.0
                flow[i, h] = 0.0
                ret[i, h] = 0.0
                rperf[i, h] = 0.0
                continue
            w_new, r_h, r_perf, f_h = _settle(W[h], D[h], C[h], rp[h], p, p_prev, a, b, r_b, flows)
            ret[i, h] = r_h
            rperf[i, h] = r_perf
            flow[i, h] = f_h
            # margin calls need an outstanding loan; a default is a call that could not be met
            if D[h] > 0 and C[h] < 0:
                if w_new <= 0 or D[h] * p > caps[h] * w_new * (1.0 + MARGIN_SLACK):
                    margin[i, h] = True
            if w_new < thresh or w_new <= 0:
                default[i, h] = True
                active[h] = False
                reentry[h] = t + T_reintro
                W[h] = 0.0
                D[h] = 0.0
                C[h] = 0.0
                rp[h] = 0.0
            else:
                d_new, c_new = _position(m, w_new, p, beta[h], caps[h])
                W[h] = w_new
                D[h] = d_new
                C[h] = c_new
                rp[h] = r_perf
            wealth[i, h] = W[h]
            shares[i, h] = D[h]
            cash[i, h] = C[h]

        if vol_on_price:
            obs = p
        else:
            obs = math.log(p) - math.log(p_prev)
        if n_win < tau:
            window[n_win] = obs
            n_win += 1
        else:
            for j in range(tau - 1):
                window[j] = window[j + 1]
            window[tau - 1] = obs

        price[i] = p
        xi_out[i] = xi
        residual[i] = res
        iters[i] = it
        p_prev = p

    return (OK, T, price, xi_out, residual, iters, wealth, shares, cash,
            flow, ret, rperf, cap_out, margin, default, rebirth)
