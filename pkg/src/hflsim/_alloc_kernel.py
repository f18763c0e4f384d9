"""Compiled inner loops for the per-edge bandwidth/frequency problem.

Per edge iteration, device ``n`` costs ``a_n f_n^2 + p_n tau_n(b_n)`` and
must finish by the shared deadline ``t``:  ``c_n / f_n + tau_n(b_n) <= t``.
With ``tau_n(b) = z / (b log2(1 + Y_n / b))`` and ``sum b_n <= B`` the edge
minimizes ``sum_n cost_n + lam * t``.

Three nested one-dimensional searches:

* deadline ``t``: Brent minimization (the objective is convex in t);
* bandwidth price ``mu``: safeguarded Newton in log(mu) on ``sum b_n = B``;
* per-device bandwidth: safeguarded Newton in log(b) on the stationarity
  condition ``h_n'(b) + mu = 0``.

Given (t, b_n) the best frequency is the smallest one meeting the deadline,
clamped to ``[f_min, f_max]``.
"""

import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)
INF = np.inf


@njit(cache=True)
def _q(x):
    # log1p(x) - x/(1+x), series below 1e-3 to avoid cancellation
    if x < 1e-3:
        return x * x * (0.5 - x * (2.0 / 3.0 - x * (0.75 - 0.8 * x)))
    return math.log1p(x) - x / (1.0 + x)


@njit(cache=True)
def tau(b, Y, z):
    if Y <= 0.0:
        return INF
    return z * LN2 / (b * math.log1p(Y / b))


@njit(cache=True)
def tau_derivs(b, Y, z):
    x = Y / b
    r = b * math.log1p(x) / LN2
    r1 = _q(x) / LN2
    r2 = -x * x / (b * (1.0 + x) ** 2 * LN2)
    t0 = z / r
    t1 = -z * r1 / (r * r)
    t2 = -z * r2 / (r * r) + 2.0 * z * r1 * r1 / (r * r * r)
    return t0, t1, t2


@njit(cache=True)
def tau_inf(Y, z):
    # limit of tau as b -> infinity
    return z * LN2 / Y


@njit(cache=True)
def h_derivs(b, t, c, a, Y, p, fmin, z):
    """(h', h'') of one device's per-iteration cost w.r.t. its bandwidth."""
    t0, t1, t2 = tau_derivs(b, Y, z)
    s = t - t0
    if s <= 0.0:
        return -INF, INF
    if c / s > fmin:
        A = a * c * c
        K = p + 2.0 * A / (s * s * s)
        return t1 * K, t2 * K + 6.0 * A * t1 * t1 / (s ** 4)
    return t1 * p, t2 * p


@njit(cache=True)
def b_for_deadline(S, Y, z, b0):
    """Bandwidth at which ``tau(b) == S``; inf if S is below the rate ceiling."""
    if S <= tau_inf(Y, z):
        return INF
    logS = math.log(S)
    lo = -INF
    hi = INF
    if b0 > 0.0 and np.isfinite(b0):
        u = math.log(b0)
    else:
        R = z / S
        u = math.log(R / max(1.0, math.log2(1.0 + Y / R)))
    for _ in range(200):
        b = math.exp(u)
        t0, t1, _t2 = tau_derivs(b, Y, z)
        g = math.log(t0) - logS  # decreasing in u
        if g > 0.0:
            lo = u
        else:
            hi = u
        if abs(g) < 1e-14:
            return b
        dg = b * t1 / t0
        un = u - g / dg if dg < 0.0 else np.nan
        if not np.isfinite(lo) or not np.isfinite(hi):
            if not np.isfinite(un):
                un = u + (2.0 if g > 0.0 else -2.0)
            step = un - u
            if step > 5.0:
                un = u + 5.0
            elif step < -5.0:
                un = u - 5.0
        elif not (lo < un < hi):
            un = 0.5 * (lo + hi)
        if abs(un - u) < 1e-14:
            return math.exp(un)
        u = un
    return math.exp(u)


@njit(cache=True)
def b_for_price(mu, t, c, a, Y, p, fmin, z, bmin, b0):
    """Minimizer of ``h(b) + mu * b`` over ``b >= bmin``; returns (b, h'')."""
    hp, hpp = h_derivs(bmin, t, c, a, Y, p, fmin, z)
    if hp + mu >= 0.0:
        return bmin, INF
    lo = math.log(bmin)
    hi = INF
    u = math.log(b0) if (b0 > bmin and np.isfinite(b0)) else lo + 1.0
    for _ in range(200):
        b = math.exp(u)
        hp, hpp = h_derivs(b, t, c, a, Y, p, fmin, z)
        g = hp + mu  # increasing in u
        if g > 0.0:
            hi = u
        else:
            lo = u
        if abs(g) <= 1e-15 * mu:
            return b, hpp
        dg = b * hpp
        un = u - g / dg if dg > 0.0 else np.nan
        if not np.isfinite(hi):
            if not (un > u):
                un = u + 2.0
            elif un - u > 5.0:
                un = u + 5.0
        elif not (lo < un < hi):
            un = 0.5 * (lo + hi)
        if abs(un - u) < 1e-14 or (np.isfinite(hi) and hi - lo < 1e-14):
            return math.exp(un), hpp
        u = un
    return math.exp(u), hpp


@njit(cache=True)
def split_bandwidth(t, c, a, Y, p, fmin, z, bmin, B, b, state):
    """Fill ``b`` with the price-optimal split of ``B`` at deadline ``t``.

    ``state[0]`` carries the last price (warm start); ``state[1]`` counts
    inner steps.  Returns False if even the minimum bandwidths exceed B.
    """
    n = c.shape[0]
    total_min = 0.0
    for i in range(n):
        total_min += bmin[i]
    if total_min > B * (1.0 + 1e-12):
        return False
    if total_min >= B * (1.0 - 1e-12):
        for i in range(n):
            b[i] = bmin[i] * B / total_min
        return True

    mu = state[0]
    if not (mu > 0.0 and np.isfinite(mu)):
        mu = 0.0
        for i in range(n):
            hp, _ = h_derivs(max(B / n, bmin[i]), t, c[i], a[i], Y[i], p[i], fmin, z)
            mu -= hp / n
        if not (mu > 0.0 and np.isfinite(mu)):
            mu = 1e-12
    v = math.log(mu)
    vlo = -INF  # k(v) > 0 side (too much bandwidth)
    vhi = INF
    logB = math.log(B)
    hpp = np.empty(n)
    for _ in range(400):
        state[1] += 1.0
        mu = math.exp(v)
        S = 0.0
        dS = 0.0
        for i in range(n):
            bi, hi2 = b_for_price(mu, t, c[i], a[i], Y[i], p[i], fmin, z, bmin[i], b[i])
            b[i] = bi
            hpp[i] = hi2
            S += bi
            if bi > bmin[i] and np.isfinite(hi2) and hi2 > 0.0:
                dS -= 1.0 / hi2
        k = math.log(S) - logB  # decreasing in v
        if k > 0.0:
            vlo = v
        else:
            vhi = v
        if abs(k) < 1e-13:
            break
        dk = mu * dS / S
        vn = v - k / dk if dk < 0.0 else np.nan
        if not np.isfinite(vlo) or not np.isfinite(vhi):
            if not np.isfinite(vn):
                vn = v + (2.0 if k > 0.0 else -2.0)
            step = vn - v
            if step > 5.0:
                vn = v + 5.0
            elif step < -5.0:
                vn = v - 5.0
        elif not (vlo < vn < vhi):
            vn = 0.5 * (vlo + vhi)
        if abs(vn - v) < 1e-15 or (np.isfinite(vlo) and np.isfinite(vhi) and vhi - vlo < 1e-15):
            v = vn
            break
        v = vn
    state[0] = math.exp(v)
    S = 0.0
    for i in range(n):
        S += b[i]
    if S > B:
        for i in range(n):
            b[i] *= B / S
    return True


@njit(cache=True)
def frequencies(t, b, c, Y, fmin, fmax, z, f):
    for i in range(c.shape[0]):
        s = t - tau(b[i], Y[i], z)
        fi = c[i] / s if s > 0.0 else INF
        if fi < fmin:
            fi = fmin
        if fi > fmax[i]:
            fi = fmax[i]
        f[i] = fi


@njit(cache=True)
def true_objective(b, f, c, a, Y, p, z, lam):
    """Per-iteration ``sum(a f^2 + p tau) + lam * max(c/f + tau)`` and its max."""
    e = 0.0
    tmax = 0.0
    for i in range(c.shape[0]):
        ti = tau(b[i], Y[i], z)
        e += a[i] * f[i] * f[i] + p[i] * ti
        tt = c[i] / f[i] + ti
        if tt > tmax:
            tmax = tt
    return e + lam * tmax, tmax


@njit(cache=True)
def deadline_cost(t, c, a, Y, p, fmin, fmax, z, B, lam, b, bmin, f, state):
    """Inner optimum of the epigraph problem at fixed deadline ``t``."""
    n = c.shape[0]
    for i in range(n):
        bmin[i] = b_for_deadline(t - c[i] / fmax[i], Y[i], z, bmin[i])
        if not np.isfinite(bmin[i]):
            return INF
    if not split_bandwidth(t, c, a, Y, p, fmin, z, bmin, B, b, state):
        return INF
    frequencies(t, b, c, Y, fmin, fmax, z, f)
    e = 0.0
    for i in range(n):
        e += a[i] * f[i] * f[i] + p[i] * tau(b[i], Y[i], z)
    return e + lam * t


@njit(cache=True)
def solve_kernel(c, a, Y, p, fmax, z, B, lam, fmin, xtol, max_inner):
    """Returns (b, f, deadline, per-iteration objective, inner steps, converged)."""
    n = c.shape[0]
    b = np.full(n, B / n)
    bmin = np.full(n, np.nan)
    f = np.empty(n)
    state = np.zeros(2)
    fmin_eff = min(fmin, fmax.min())

    # Upper deadline: pure-energy split at the lowest frequency.  Beyond it
    # the cost is lam * t plus a constant.
    split_bandwidth(INF, c, a, Y, p, fmin_eff, z, np.full(n, B * 1e-12), B, b, state)
    t_hi = 0.0
    for i in range(n):
        ti = c[i] / fmin_eff + tau(b[i], Y[i], z)
        if ti > t_hi:
            t_hi = ti
    if lam == 0.0:
        frequencies(t_hi, b, c, Y, fmin_eff, fmax, z, f)
        G, T = true_objective(b, f, c, a, Y, p, z, lam)
        return b, f, T, G, int(state[1]), True
    b_energy = b.copy()
    mu_energy = state[0]

    # Lower deadline: every device at f_max and the bandwidth exhausted.
    t_floor = 0.0
    t_eq = 0.0
    for i in range(n):
        tf = c[i] / fmax[i] + tau_inf(Y[i], z)
        if tf > t_floor:
            t_floor = tf
        te = c[i] / fmax[i] + tau(B / n, Y[i], z)
        if te > t_eq:
            t_eq = te
    lo = t_floor
    hi = t_eq
    bm = np.full(n, np.nan)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        total = 0.0
        for i in range(n):
            bm[i] = b_for_deadline(mid - c[i] / fmax[i], Y[i], z, bm[i])
            total += bm[i]
        if total > B:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    t_lo = hi
    if t_hi < t_lo:
        t_hi = t_lo

    # Brent minimization of the convex deadline cost on [t_lo, t_hi].
    golden = 0.3819660112501051
    aa = t_lo
    bb = t_hi
    x = w = v = aa + golden * (bb - aa)
    state[0] = mu_energy
    fx = deadline_cost(x, c, a, Y, p, fmin_eff, fmax, z, B, lam, b, bmin, f, state)
    fw = fv = fx
    d = 0.0
    e = 0.0
    converged = False
    for _ in range(500):
        xm = 0.5 * (aa + bb)
        tol1 = xtol * abs(x) + 1e-300
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (bb - aa):
            converged = True
            break
        if state[1] > max_inner:
            break
        use_golden = True
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            pp = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                pp = -pp
            q = abs(q)
            etemp = e
            e = d
            if abs(pp) < abs(0.5 * q * etemp) and pp > q * (aa - x) and pp < q * (bb - x):
                d = pp / q
                u = x + d
                if u - aa < tol2 or bb - u < tol2:
                    d = tol1 if xm >= x else -tol1
                use_golden = False
        if use_golden:
            e = (aa - x) if x >= xm else (bb - x)
            d = golden * e
        u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
        fu = deadline_cost(u, c, a, Y, p, fmin_eff, fmax, z, B, lam, b, bmin, f, state)
        if fu <= fx:
            if u >= x:
                aa = x
            else:
                bb = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                aa = u
            else:
                bb = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v = u
                fv = fu

    # Endpoints can be optimal (very large or very small lam).
    best_t = x
    best = fx
    for cand in (t_lo, t_hi):
        fc = deadline_cost(cand, c, a, Y, p, fmin_eff, fmax, z, B, lam, b, bmin, f, state)
        if fc < best:
            best = fc
            best_t = cand
    deadline_cost(best_t, c, a, Y, p, fmin_eff, fmax, z, B, lam, b, bmin, f, state)
    G, T = true_objective(b, f, c, a, Y, p, z, lam)
    # The energy-optimal point is always feasible; keep it if it wins.
    fe = np.empty(n)
    frequencies(t_hi, b_energy, c, Y, fmin_eff, fmax, z, fe)
    Ge, Te = true_objective(b_energy, fe, c, a, Y, p, z, lam)
    if Ge < G:
        return b_energy, fe, Te, Ge, int(state[1]), converged
    return b, f, T, G, int(state[1]), converged
