"""The l2-constrained minimizers w(B) = argmin_{||w|| <= B} R(w).

The main solver is a projected Newton method.  Each iteration minimizes the
local quadratic model of R over the ball (a trust-region subproblem solved
via an eigendecomposition and a secular equation) and backtracks along the
chord from the current point.  Gradients and Hessians are rescaled by the
largest ``|l'|`` term so that heavy and light tails alike stay in range;
the risk itself is compared through its logarithm.
"""
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, ParameterError
from .risk import log_risk, pick_step_size, scaled_terms

CERT_TOL = 1e-8
NEWTON_CAP = 2000
PGD_CAP = 10**7
BOUNDARY_RTOL = 1e-10
ARMIJO = 1e-4
EPS = np.finfo(float).eps


@dataclass
class RegPathPoint:
    B: float
    w_bar: np.ndarray
    risk: float
    log_risk: float
    boundary: bool
    collinearity_residual: float
    grad_norm: float
    iterations: int
    method: str = "newton"
    interior_residual: float = math.nan

    @property
    def direction(self):
        return self.w_bar / self.B

    @property
    def certificate(self):
        return self.collinearity_residual if self.boundary else self.interior_residual


def _interior_residual(gn, m, lr):
    """|grad R| / min(1, R) from the scaled gradient norm, in log space.

    Dividing by R (when R < 1) keeps the interior test meaningful far out on
    a separable path, where |grad R| itself underflows although the point is
    nowhere near stationary.
    """
    if gn == 0.0:
        return 0.0
    return math.exp(min(math.log(gn) + m - min(0.0, lr), 700.0))


def _certificate(p, w, B):
    """(boundary, collinearity residual, |grad R|, interior residual) at w."""
    lr, m, g, _ = scaled_terms(p, w)
    gn = float(np.linalg.norm(g))
    nrm = float(np.linalg.norm(w))
    boundary = nrm >= B * (1.0 - BOUNDARY_RTOL)
    col = float(np.linalg.norm(w / B + g / gn)) if gn > 0 else math.inf
    return boundary, col, gn * math.exp(m) if gn > 0 else 0.0, _interior_residual(gn, m, lr)


def _make_point(p, w, B, its, method):
    boundary, col, gn, ires = _certificate(p, w, B)
    lr = log_risk(p, w)
    return RegPathPoint(float(B), w, math.exp(lr), lr, boundary, col, gn, its, method, ires)


def _ball_quadratic(H, c, B):
    """argmin 0.5 x'Hx + c'x over ||x|| <= B for symmetric PSD H.

    Returns (x, mu) with mu the multiplier of the ball constraint.
    """
    lam, Q = np.linalg.eigh(H)
    lam = np.maximum(lam, 0.0)
    ch = Q.T @ c
    # the minimizer is unchanged by scaling the objective; work at unit scale
    scale = max(lam[-1], np.linalg.norm(ch) / B)
    if not scale > 0:
        return np.zeros_like(c), 0.0
    lam, ch = lam / scale, ch / scale
    pos = lam > 1e-14
    if np.all(pos) or np.all(np.abs(ch[~pos]) <= 1e-14 * np.linalg.norm(ch)):
        xh = np.where(pos, -ch / np.where(pos, lam, 1.0), 0.0)
        if np.linalg.norm(xh) <= B:
            return Q @ xh, 0.0

    def norm_x(mu):
        den = lam + mu
        if np.any((den <= 0) & (ch != 0)):
            return math.inf
        return np.linalg.norm(np.divide(ch, den, out=np.zeros_like(ch), where=den > 0))

    # 1/B - 1/||x(mu)|| is decreasing and nearly linear in mu; ||x(hi)|| <= B
    hi = np.linalg.norm(ch) / B
    if not hi > 0:
        return np.zeros_like(c), 0.0
    mu = brentq(lambda mu: 1.0 / B - 1.0 / norm_x(mu), 0.0, hi,
                xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    den = lam + mu
    x = Q @ -np.divide(ch, den, out=np.zeros_like(ch), where=den > 0)
    return x * (B / np.linalg.norm(x)), mu * scale


def _project(w, B):
    nrm = np.linalg.norm(w)
    return w * (B / nrm) if nrm > B else w


def solve_ball(p, B, warm=None, tol=CERT_TOL, method="newton", max_iter=None):
    """Certified minimizer of R over the ball of radius B.

    ``method="newton"`` (default) is the projected Newton method described in
    the module docstring; ``method="pgd"`` is plain projected gradient descent
    with the GD step size and radial projection.  Either way the returned
    point carries the collinearity residual (boundary) or gradient norm
    (interior) and :class:`ConvergenceError` is raised if the certificate is
    not reached within ``max_iter``.
    """
    if not (B > 0 and math.isfinite(B)):
        raise ParameterError(f"B must be positive, got {B!r}")
    w = np.zeros(p.d) if warm is None else _project(np.array(warm, dtype=float), B)
    if method == "pgd":
        return _solve_pgd(p, B, w, tol, PGD_CAP if max_iter is None else max_iter)
    if method != "newton":
        raise ParameterError(f"unknown method {method!r}")
    cap = NEWTON_CAP if max_iter is None else max_iter

    best = None
    stall = 0
    lr, m, g, H = scaled_terms(p, w)
    for it in range(cap + 1):
        nrm = np.linalg.norm(w)
        gn = np.linalg.norm(g)
        boundary = nrm >= B * (1.0 - BOUNDARY_RTOL)
        if gn == 0.0:
            return _make_point(p, w, B, it, "newton")
        cert = np.linalg.norm(w / B + g / gn) if boundary else _interior_residual(gn, m, lr)
        if best is None or cert < best[0]:
            best = (cert, w.copy())
        if cert <= tol:
            return _make_point(p, w, B, it, "newton")
        if it == cap:
            break
        x, mu = _ball_quadratic(H, g - H @ w, B)
        s = x - w
        slope = float(g @ s)
        # predicted relative decrease of R along s, and the size of its rounding error
        scale = math.exp(m - lr)
        pred = slope * scale
        noise = 64 * EPS * (max(1.0, abs(lr)) + np.linalg.norm(w) * gn * scale)
        accepted = False
        if not (slope >= 0.0 or abs(pred) < noise):
            alpha = 1.0
            for _ in range(80):
                w_new = w + alpha * s
                if mu > 0 and alpha == 1.0:
                    w_new = x
                lr_new = log_risk(p, w_new)
                if lr_new < lr and math.expm1(lr_new - lr) <= ARMIJO * alpha * pred:
                    accepted = True
                    break
                alpha *= 0.5
        if accepted and mu == 0 and alpha == 1.0:
            # an interior Newton step on an exponential-like tail only gains
            # a constant amount of log-risk; extrapolate while that keeps paying
            for _ in range(200):
                w_try = _project(w + 2.0 * (w_new - w), B)
                lr_try = log_risk(p, w_try)
                if not lr_try < lr_new - noise:
                    break
                w_new, lr_new = w_try, lr_try
                if np.linalg.norm(w_new) >= B * (1.0 - BOUNDARY_RTOL):
                    break
        if accepted:
            w = w_new
            lr, m, g, H = scaled_terms(p, w)
            continue
        # the change in R is below what float64 resolves: judge the full step
        # by the certificate instead
        lr_new, m_new, g_new, H_new = scaled_terms(p, x)
        gn_new = np.linalg.norm(g_new)
        if gn_new == 0.0:
            return _make_point(p, x, B, it + 1, "newton")
        bnd = np.linalg.norm(x) >= B * (1.0 - BOUNDARY_RTOL)
        cert_new = (np.linalg.norm(x / B + g_new / gn_new) if bnd
                    else _interior_residual(gn_new, m_new, lr_new))
        if cert_new < cert and lr_new <= lr + noise:
            w, lr, m, g, H = x, lr_new, m_new, g_new, H_new
        else:
            stall += 1
            if stall > 3:
                break
    floor = certificate_floor(p, best[1])
    hint = (f"; float64 rounding alone limits the residual to about {floor:.1e} here"
            if floor > tol else "")
    raise ConvergenceError(f"no certificate at B={B:g} (best residual {best[0]:.3e}, tol {tol:g}{hint})",
                           best=best[1], residual=best[0])


def certificate_floor(p, w):
    """Rough size of the rounding error in grad R(w) / |grad R(w)|.

    When the per-point gradient terms nearly cancel (points no direction can
    separate, far out on the path) the normalized gradient is only known to
    about ``eps * sum |terms| / |sum terms|``; residuals below that cannot be
    certified in float64.
    """
    lnd1 = p.loss.evaluate_log(p.Z @ w)[1]
    wd = np.exp(lnd1 - np.max(lnd1))
    g = wd @ p.Z
    total = wd @ np.linalg.norm(p.Z, axis=1)
    gn = np.linalg.norm(g)
    return math.inf if gn == 0 else float(4 * np.finfo(float).eps * total / gn)


def _solve_pgd(p, B, w, tol, cap):
    eta = pick_step_size(p, w)
    best = (math.inf, w)
    for it in range(cap + 1):
        lr, m, g, _ = scaled_terms(p, w)
        gn = np.linalg.norm(g)
        if gn == 0.0:
            return _make_point(p, w, B, it, "pgd")
        boundary = np.linalg.norm(w) >= B * (1.0 - BOUNDARY_RTOL)
        cert = np.linalg.norm(w / B + g / gn) if boundary else _interior_residual(gn, m, lr)
        if cert < best[0]:
            best = (cert, w)
        if cert <= tol:
            return _make_point(p, w, B, it, "pgd")
        w = _project(w - eta * math.exp(m) * g, B)
    raise ConvergenceError(f"projected gradient: no certificate at B={B:g}",
                           best=best[1], residual=best[0])


@dataclass
class RegPath:
    points: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def B(self):
        return np.array([q.B for q in self.points])

    @property
    def W(self):
        return np.array([q.w_bar for q in self.points])

    @property
    def directions(self):
        return np.array([q.direction for q in self.points])

    @property
    def log_risks(self):
        return np.array([q.log_risk for q in self.points])

    def to_csv(self, path):
        d = self.points[0].w_bar.shape[0]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["B", "risk", "boundary", "collinearity_residual"]
                        + [f"w_{j}" for j in range(d)] + [f"dir_{j}" for j in range(d)])
            for q in self.points:
                wr.writerow([repr(q.B), repr(q.risk), int(q.boundary), repr(q.collinearity_residual)]
                            + [repr(float(x)) for x in q.w_bar]
                            + [repr(float(x)) for x in q.direction])


def geometric_grid(B_min, B_max, factor=2.0):
    if not (0 < B_min <= B_max) or factor <= 1:
        raise ParameterError("need 0 < B_min <= B_max and factor > 1")
    k = int(math.floor(math.log(B_max / B_min) / math.log(factor) + 1e-9))
    return [B_min * factor**i for i in range(k + 1)]


def solve_path(p, B_grid, tol=CERT_TOL, method="newton", jobs=1, warm=None):
    """Solve along an increasing grid of radii with radial warm starts.

    With ``jobs > 1`` every radius after the first is solved concurrently from
    the radially rescaled first solution, so results do not depend on
    scheduling.
    """
    grid = [float(b) for b in B_grid]
    if not grid:
        raise ParameterError("empty B grid")
    if any(not (b > 0) for b in grid) or any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
        raise ParameterError("B grid must be positive and strictly increasing")

    def solve(B, w0):
        try:
            return solve_ball(p, B, warm=w0, tol=tol, method=method)
        except ConvergenceError as exc:
            raise ConvergenceError(f"path solve failed at B={B:g}: {exc}", exc.best, exc.residual) from exc

    first = solve(grid[0], warm)
    points = [first]
    if jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            points += list(ex.map(lambda B: solve(B, first.w_bar * (B / grid[0])), grid[1:]))
    else:
        for B in grid[1:]:
            prev = points[-1]
            points.append(solve(B, prev.w_bar * (B / prev.B)))
    return RegPath(points)


@dataclass
class SMinimizer:
    v_bar: np.ndarray
    coords: np.ndarray
    grad_norm: float
    iterations: int
    empty: bool = False


def minimize_on_S(p, x0=None, tol=1e-10, max_iter=10**6):
    """Minimizer of R_s over S, in ambient coordinates.

    R_s sums the loss over D_s only (divided by n).  Damped Newton steps in
    coordinates of ``basis_S``, with a gradient step of size 1/beta (of the
    restricted problem) whenever Newton fails to decrease R_s, until the
    gradient norm is below ``tol``.
    """
    dec = p.decomposition
    if dec is None:
        raise ParameterError("minimize_on_S needs a decomposition")
    Q = dec.basis_S
    if len(dec.sc_indices) == 0 or Q.shape[0] == 0:
        return SMinimizer(np.zeros(p.d), np.zeros(0), 0.0, 0, empty=True)
    A = p.Z[list(dec.sc_indices)] @ Q.T          # signed points in S coordinates
    loss, n = p.loss, p.n

    def parts(c):
        v, d1, d2 = loss.evaluate(A @ c)
        return v.sum() / n, d1 @ A / n, (A * d2[:, None]).T @ A / n

    c = np.zeros(Q.shape[0]) if x0 is None else np.asarray(x0, dtype=float) @ Q.T
    beta = loss.smoothness * np.linalg.eigvalsh(A.T @ A / n)[-1]
    eta = 1.0 / beta if math.isfinite(beta) and beta > 0 else None
    f, g, H = parts(c)
    for it in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= tol:
            return SMinimizer(c @ Q, c, float(gn), it)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = None
        t = 1.0
        moved = False
        if step is not None and np.all(np.isfinite(step)) and g @ step > 0:
            while t > 1e-12:
                c_new = c - t * step
                f_new, g_new, H_new = parts(c_new)
                if f_new <= f - ARMIJO * t * (g @ step) or (f_new <= f and np.linalg.norm(g_new) < gn):
                    moved = True
                    break
                t *= 0.5
        if not moved:
            lr = eta if eta is not None else 1.0 / max(np.linalg.eigvalsh(H)[-1], 1e-12)
            c_new = c - lr * g
            f_new, g_new, H_new = parts(c_new)
        c, f, g, H = c_new, f_new, g_new, H_new
    raise ConvergenceError("minimize_on_S did not reach the gradient tolerance",
                           best=c @ Q, residual=float(np.linalg.norm(g)))

