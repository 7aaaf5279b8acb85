"""Compiled evaluation kernels for piecewise losses and the gradient-descent loop.

A loss is flattened into three arrays: ``bps`` (sorted breakpoints), ``kinds``
(one integer code per segment) and ``params`` (one row of up to five floats per
segment).  Segment ``k`` covers ``[bps[k-1], bps[k])``; a point sitting exactly
on a breakpoint is evaluated with the segment to its right.
"""
import math

import numpy as np
from numba import njit

EXPONENTIAL = 0      # a * exp(-b z)
POWER = 1            # a * (z + s)^(-q)
AFFINE = 2           # c0 + c1 z
QUADRATIC = 3        # c0 + c1 z + c2 z^2
RECIP_PRIMITIVE = 4  # a / (b - 1) * z^(-(b - 1))
LOGISTIC = 5         # log(1 + exp(-z))
TANGENT = 6          # exp(log_v) + exp(log_d) * (z_ref - z), for z <= z_ref
BRIDGE = 7           # derivative interpolates linearly on [zl, zr]

NPARAMS = 5
NEG_INF = -np.inf


@njit(cache=True)
def _log(x):
    if x > 0.0:
        return math.log(x)
    if x == 0.0:
        return NEG_INF
    return np.nan


@njit(cache=True)
def _logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _softplus(x):
    # log(1 + exp(x))
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def piece_plain(kind, p, z):
    """Value, first and second derivative of one piece at ``z``."""
    if kind == EXPONENTIAL:
        e = p[0] * math.exp(-p[1] * z)
        return e, -p[1] * e, p[1] * p[1] * e
    if kind == POWER:
        u = z + p[2]
        v = p[0] * u ** (-p[1])
        return v, -p[1] * v / u, p[1] * (p[1] + 1.0) * v / (u * u)
    if kind == AFFINE:
        return p[0] + p[1] * z, p[1], 0.0
    if kind == QUADRATIC:
        return p[0] + p[1] * z + p[2] * z * z, p[1] + 2.0 * p[2] * z, 2.0 * p[2]
    if kind == RECIP_PRIMITIVE:
        a = p[0]
        b = p[1]
        zb = z ** (-b)
        return a / (b - 1.0) * z * zb, -a * zb, a * b * zb / z
    if kind == LOGISTIC:
        if z > 0.0:
            ez = math.exp(-z)
            v = math.log1p(ez)
            s_neg = ez / (1.0 + ez)
        else:
            ez = math.exp(z)
            v = -z + math.log1p(ez)
            s_neg = 1.0 / (1.0 + ez)
        # s(1-s) = e^{-|z|} / (1 + e^{-|z|})^2, without cancelling 1 - s
        return v, -s_neg, ez / ((1.0 + ez) * (1.0 + ez))
    if kind == TANGENT:
        d = math.exp(p[2])
        return math.exp(p[1]) + d * (p[0] - z), -d, 0.0
    if kind == BRIDGE:
        w = p[1] - p[0]
        t = (z - p[0]) / w
        s = (p[1] - z) / w
        dl = math.exp(p[2])
        dr = math.exp(p[3])
        v = math.exp(p[4]) + w * (0.5 * dl * s * s + 0.5 * dr * s * (1.0 + t))
        return v, -(s * dl + t * dr), (dl - dr) / w
    return np.nan, np.nan, np.nan


@njit(cache=True)
def piece_log(kind, p, z):
    """log value, log(-first derivative) and log(second derivative).

    Computed in closed form so that tails far beyond the float64 underflow
    threshold (exp(-z) at z ~ 1e6, say) keep their relative precision.
    """
    if kind == EXPONENTIAL:
        base = math.log(p[0]) - p[1] * z
        lb = math.log(p[1])
        return base, base + lb, base + 2.0 * lb
    if kind == POWER:
        lu = math.log(z + p[2])
        base = math.log(p[0]) - p[1] * lu
        return base, base + math.log(p[1]) - lu, base + math.log(p[1] * (p[1] + 1.0)) - 2.0 * lu
    if kind == AFFINE:
        return _log(p[0] + p[1] * z), _log(-p[1]), NEG_INF
    if kind == QUADRATIC:
        return (_log(p[0] + p[1] * z + p[2] * z * z), _log(-(p[1] + 2.0 * p[2] * z)),
                _log(2.0 * p[2]))
    if kind == RECIP_PRIMITIVE:
        a = p[0]
        b = p[1]
        lz = math.log(z)
        return (math.log(a / (b - 1.0)) - (b - 1.0) * lz, math.log(a) - b * lz,
                math.log(a * b) - (b + 1.0) * lz)
    if kind == LOGISTIC:
        lnd1 = -_softplus(z)
        if z > 35.0:
            lv = -z - 0.5 * math.exp(-z)
        else:
            lv = math.log(_softplus(-z))
        return lv, lnd1, lnd1 - _softplus(-z)
    if kind == TANGENT:
        return _logaddexp(p[1], p[2] + _log(p[0] - z)), p[2], NEG_INF
    if kind == BRIDGE:
        w = p[1] - p[0]
        t = (z - p[0]) / w
        s = (p[1] - z) / w
        ls = _log(s)
        lt = _log(t)
        lw = math.log(w)
        lnd1 = _logaddexp(ls + p[2], lt + p[3])
        lv = _logaddexp(p[4], lw - math.log(2.0) + _logaddexp(p[2] + 2.0 * ls,
                                                             p[3] + ls + math.log1p(t)))
        if p[3] < p[2]:
            ld2 = p[2] + math.log1p(-math.exp(p[3] - p[2])) - lw
        else:
            ld2 = NEG_INF
        return lv, lnd1, ld2
    return np.nan, np.nan, np.nan


@njit(cache=True)
def eval_plain(z, bps, kinds, params):
    n = z.shape[0]
    v = np.empty(n)
    d1 = np.empty(n)
    d2 = np.empty(n)
    idx = np.searchsorted(bps, z, side="right")
    for i in range(n):
        k = idx[i]
        v[i], d1[i], d2[i] = piece_plain(kinds[k], params[k], z[i])
    return v, d1, d2


@njit(cache=True)
def eval_log(z, bps, kinds, params):
    n = z.shape[0]
    lv = np.empty(n)
    lnd1 = np.empty(n)
    ld2 = np.empty(n)
    idx = np.searchsorted(bps, z, side="right")
    for i in range(n):
        k = idx[i]
        lv[i], lnd1[i], ld2[i] = piece_log(kinds[k], params[k], z[i])
    return lv, lnd1, ld2


@njit(cache=True)
def eval_piece_plain(kind, p, z):
    """Evaluate a single piece on an array (used for one-sided breakpoint checks)."""
    n = z.shape[0]
    v = np.empty(n)
    d1 = np.empty(n)
    d2 = np.empty(n)
    for i in range(n):
        v[i], d1[i], d2[i] = piece_plain(kind, p, z[i])
    return v, d1, d2


@njit(cache=True)
def eval_piece_log(kind, p, z):
    n = z.shape[0]
    lv = np.empty(n)
    lnd1 = np.empty(n)
    ld2 = np.empty(n)
    for i in range(n):
        lv[i], lnd1[i], ld2[i] = piece_log(kind, p, z[i])
    return lv, lnd1, ld2


@njit(cache=True)
def _risk_grad(Z, w, bps, kinds, params, g):
    """Empirical risk at ``w``; the gradient is written into ``g``."""
    n, d = Z.shape
    r = 0.0
    for j in range(d):
        g[j] = 0.0
    for i in range(n):
        z = 0.0
        for j in range(d):
            z += Z[i, j] * w[j]
        k = np.searchsorted(bps, z, side="right")
        v, d1, _ = piece_plain(kinds[k], params[k], z)
        r += v
        for j in range(d):
            g[j] += d1 * Z[i, j]
    for j in range(d):
        g[j] /= n
    return r / n


@njit(cache=True)
def gd_loop(Z, w0, eta, max_steps, target_norm, target_risk, rec_steps,
            bps, kinds, params, descent_tol):
    """Run ``w <- w - eta * grad R(w)`` with a per-step descent check.

    Records iterates at the steps listed in ``rec_steps`` (sorted) plus the
    final step.  Status codes: 0 step budget exhausted, 1 descent inequality
    violated, 2 non-finite value, 3 target norm reached, 4 target risk reached.
    """
    n, d = Z.shape
    cap = rec_steps.shape[0] + 1
    T = np.empty(cap, dtype=np.int64)
    W = np.empty((cap, d))
    R = np.empty(cap)
    G = np.empty(cap)
    RES = np.empty(cap)

    w = w0.copy()
    g = np.empty(d)
    g_new = np.empty(d)
    r = _risk_grad(Z, w, bps, kinds, params, g)
    gg = 0.0
    for j in range(d):
        gg += g[j] * g[j]

    cnt = 0
    ri = 0
    if ri < rec_steps.shape[0] and rec_steps[ri] == 0:
        T[cnt] = 0
        W[cnt] = w
        R[cnt] = r
        G[cnt] = math.sqrt(gg)
        RES[cnt] = np.nan
        cnt += 1
        ri += 1

    status = 0
    max_res = NEG_INF
    last_res = np.nan
    t = 0
    w_new = np.empty(d)
    while t < max_steps:
        for j in range(d):
            w_new[j] = w[j] - eta * g[j]
        r_new = _risk_grad(Z, w_new, bps, kinds, params, g_new)
        res = r_new - r + 0.5 * eta * gg
        t += 1
        if not (math.isfinite(r_new) and math.isfinite(res)):
            status = 2
            last_res = res
            break
        if res > max_res:
            max_res = res
        last_res = res
        if res > descent_tol:
            status = 1
            break
        for j in range(d):
            w[j] = w_new[j]
            g[j] = g_new[j]
        r = r_new
        gg = 0.0
        nrm = 0.0
        for j in range(d):
            gg += g[j] * g[j]
            nrm += w[j] * w[j]
        while ri < rec_steps.shape[0] and rec_steps[ri] < t:
            ri += 1
        if ri < rec_steps.shape[0] and rec_steps[ri] == t:
            T[cnt] = t
            W[cnt] = w
            R[cnt] = r
            G[cnt] = math.sqrt(gg)
            RES[cnt] = res
            cnt += 1
            ri += 1
        if math.sqrt(nrm) >= target_norm:
            status = 3
            break
        if r <= target_risk:
            status = 4
            break

    if status in (1, 2):
        # report the offending iterate as the final record
        T[cnt] = t
        W[cnt] = w_new
        R[cnt] = r_new
        G[cnt] = np.nan
        RES[cnt] = last_res
        cnt += 1
    elif cnt == 0 or T[cnt - 1] != t:
        T[cnt] = t
        W[cnt] = w
        R[cnt] = r
        G[cnt] = math.sqrt(gg)
        RES[cnt] = last_res if t > 0 else np.nan
        cnt += 1
    return T[:cnt], W[:cnt], R[:cnt], G[:cnt], RES[:cnt], max_res, t, status
