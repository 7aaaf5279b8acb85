"""Experiments comparing the gradient-descent path with the regularization path."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Decomposition, decompose, make_margin_scaling_dataset, max_margin
from .errors import CoverageError, InconclusiveError, ParameterError, StaleInputError
from .losses import build_oscillating, make_exponential, make_tail_power
from .regpath import geometric_grid, minimize_on_S, solve_ball, solve_path
from .risk import RiskProblem, gd_run

NORM_MATCH = 0.05
NOISE_FLOOR = 1e-8


def angle(u, v):
    """Angle in [0, pi] between two nonzero vectors.

    Uses ``2 atan2(|a - b|, |a + b|)`` on the normalized vectors, which stays
    accurate for nearly parallel and nearly opposite inputs.
    """
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ParameterError("angle of a zero vector")
    a, b = a / na, b / nb
    return float(2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def _decreasing(x, slack=0.0):
    x = np.asarray(x, dtype=float)
    return bool(np.all(np.diff(x) <= slack))


# -- direction comparison ------------------------------------------------------------

@dataclass
class DirectionComparison:
    pairs: list                    # (t, B, gd_norm, angle)
    final_angle: float
    decreasing: bool
    unmatched: list = field(default_factory=list)

    @property
    def angles(self):
        return np.array([a for *_, a in self.pairs])

    def to_dict(self):
        return {"final_angle": self.final_angle, "decreasing": self.decreasing,
                "final_B": self.pairs[-1][1], "pairs": [list(p) for p in self.pairs],
                "unmatched_B": self.unmatched}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "B", "gd_norm", "angle"])
            for t, B, nrm, a in self.pairs:
                w.writerow([t, repr(B), repr(nrm), repr(a)])


def compare_directions(trace, path, rtol=NORM_MATCH):
    """Pair each path radius with the trace record of nearest norm (within ``rtol``)."""
    if len(trace) == 0 or len(path) == 0:
        raise ParameterError("empty trace or path")
    pairs, missing = [], []
    for q in path:
        i = trace.nearest_norm(q.B)
        nrm = float(trace.norms[i])
        if abs(nrm - q.B) <= rtol * q.B and nrm > 0:
            pairs.append((int(trace.t[i]), float(q.B), nrm, angle(trace.W[i], q.w_bar)))
        else:
            missing.append(float(q.B))
    if not pairs:
        raise CoverageError(
            f"no trace norm within {rtol:.0%} of any path radius: trace norms span "
            f"[{trace.norms.min():.4g}, {trace.norms.max():.4g}], radii span "
            f"[{path[0].B:.4g}, {path[-1].B:.4g}]")
    B_last = pairs[-1][1]
    tail = [a for _, B, _, a in pairs if B >= B_last / 8 * (1 - 1e-12)]
    return DirectionComparison(pairs, pairs[-1][3], _decreasing(tail, slack=1e-12), missing)


# -- limit directions ------------------------------------------------------------------

@dataclass
class LimitDirection:
    u: np.ndarray
    B: float
    consecutive: list              # (B, angle to the point at B/2)
    converged: bool

    @property
    def last_step(self):
        return self.consecutive[-1][1] if self.consecutive else math.nan


def limit_direction(path, tol=1e-3, noise_floor=NOISE_FLOOR):
    """Empirical limit of w(B)/B with a finite-budget convergence verdict.

    The verdict requires the angle between the directions at B_max and B_max/2
    to be below ``tol`` and the octave-to-octave angles to decrease over the
    last three octaves; angles below ``noise_floor`` count as converged.
    """
    Bs = path.B
    cons = []
    for j, q in enumerate(path):
        half = np.nonzero(np.isclose(Bs[:j], q.B / 2, rtol=1e-9))[0]
        if half.size:
            cons.append((float(q.B), angle(path[int(half[0])].w_bar, q.w_bar)))
    last = cons[-3:]
    vals = [a for _, a in last]
    converged = bool(cons) and vals[-1] < tol and (
        vals[-1] <= noise_floor or (len(vals) == 3 and _decreasing(vals, slack=noise_floor)))
    return LimitDirection(path[-1].direction, float(path[-1].B), cons, converged)


# -- margins -----------------------------------------------------------------------------

@dataclass
class MarginReport:
    gamma_bar: float
    gamma_hat: float
    bound: float
    satisfied: bool
    general: bool
    count: int

    def to_dict(self):
        return dict(self.__dict__)


def margin_bound_check(p, limit_dir, converged=None, slack=1e-6):
    """Compare the margin of a limit direction with the guaranteed lower bound.

    Without D_s points the bound is ``gamma_hat^2 / (2n)``.  When the
    decomposition has D_s points the margin is taken over D_c only and
    ``gamma_hat`` is the maximum margin of D_c within the orthogonal
    complement of S, with bound ``gamma_hat^2 / (8 |D_c|)``.
    """
    if isinstance(limit_dir, LimitDirection):
        if converged is None:
            converged = limit_dir.converged
        u = limit_dir.u
    else:
        u = np.asarray(limit_dir, dtype=float)
        converged = True if converged is None else converged
    if not converged:
        raise StaleInputError("limit direction has not converged (octave test failed)")
    u = u / np.linalg.norm(u)
    dec = p.decomposition
    Z = p.Z
    if dec is not None and len(dec.sc_indices) > 0:
        if not dec.comp_indices:
            raise ParameterError("no separable points: the margin bound does not apply")
        comp = list(dec.comp_indices)
        P = np.array([dec.proj_perp(z) for z in Z[comp]])
        g_hat = max_margin(P).gamma_hat
        g_bar = float(np.min(Z[comp] @ u))
        bound = g_hat**2 / (8 * len(comp))
        return MarginReport(g_bar, g_hat, bound, g_bar >= bound - slack, True, len(comp))
    g_hat = max_margin(Z).gamma_hat
    g_bar = float(np.min(Z @ u))
    bound = g_hat**2 / (2 * p.n)
    return MarginReport(g_bar, g_hat, bound, g_bar >= bound - slack, False, p.n)


# -- margin scaling ------------------------------------------------------------------------

@dataclass
class ScalingReport:
    b: float
    ns: list
    margins: list
    gamma_hats: list
    u_diffs: list
    pq: list
    converged: list
    slope: float
    intercept: float
    residual: float
    pq_slope: float
    target: float
    slope_tol: float

    @property
    def slope_ok(self):
        return abs(self.slope - self.target) <= self.slope_tol

    @property
    def gamma_hat_spread(self):
        return float(np.ptp(self.gamma_hats))

    @property
    def verdict(self):
        return (self.slope_ok and all(m > 0 for m in self.margins)
                and all(d > 0.2 for d in self.u_diffs) and all(self.converged))

    def to_dict(self):
        d = dict(self.__dict__)
        d.update(slope_ok=self.slope_ok, gamma_hat_spread=self.gamma_hat_spread,
                 verdict=self.verdict)
        return d

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "margin_xn", "gamma_hat", "u1_minus_u2", "p_over_q", "converged"])
            for row in zip(self.ns, self.margins, self.gamma_hats, self.u_diffs, self.pq, self.converged):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:5]] + [int(row[5])])


def scaling_experiment(b, n_grid=(10, 20, 40, 80, 160), B_max=2.0**12, tol=1e-8, slope_tol=0.08,
                       jobs=1):
    """Margin of the last point under the loss ``z^(-b)`` (z >= 1) as n grows.

    Fits ``log margin`` against ``log n``; the expected exponent is
    ``-1/(b+1)``.  Also reports ``p/q`` with ``p = <u, z_1>^(-b-1)`` and
    ``q = <u, z_n>^(-b-1)`` and its fitted exponent in n.
    """
    ns = sorted(int(n) for n in n_grid)
    if len(ns) < 4 or ns[-1] < 10 * ns[0]:
        raise ParameterError("n grid needs at least 4 values spanning a decade")
    if not b > 0:
        raise ParameterError("b must be positive")
    loss = make_tail_power(b)
    grid = geometric_grid(1.0, B_max)

    def one(n):
        ds = make_margin_scaling_dataset(n)
        p = RiskProblem(loss, ds)
        try:
            path = solve_path(p, grid, tol=tol)
        except Exception as exc:
            raise type(exc)(f"n={n}: {exc}") from exc
        lim = limit_direction(path)
        u = lim.u
        m1, mn = float(ds.Z[0] @ u), float(ds.Z[-1] @ u)
        pq = (mn / m1) ** (b + 1) if m1 > 0 and mn > 0 else math.nan
        return mn, max_margin(ds).gamma_hat, float(u[0] - u[1]), pq, lim.converged

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(one, ns))
    else:
        rows = [one(n) for n in ns]
    margins, ghats, udiff, pq, conv = (list(c) for c in zip(*rows))
    ln = np.log(ns)
    ok = np.array(margins) > 0
    slope, icpt = np.polyfit(ln[ok], np.log(np.array(margins)[ok]), 1) if ok.sum() >= 2 else (math.nan,) * 2
    resid = float(np.sqrt(np.mean((np.log(np.array(margins)[ok]) - (slope * ln[ok] + icpt)) ** 2)))
    pq_arr = np.array(pq)
    pq_slope = float(np.polyfit(ln, np.log(pq_arr), 1)[0]) if np.all(pq_arr > 0) else math.nan
    return ScalingReport(float(b), ns, margins, ghats, udiff, pq, conv, float(slope), float(icpt),
                         resid, pq_slope, -1.0 / (b + 1.0), slope_tol)


# -- non-separable part ------------------------------------------------------------------------

@dataclass
class DecompositionConvergence:
    v_bar: np.ndarray
    gd_t: np.ndarray
    gd_dist: np.ndarray
    path_B: np.ndarray
    path_dist: np.ndarray
    dir_S_norm: float
    final_gd: float
    final_path: float
    gd_monotone: bool
    path_monotone: bool
    tol: float = 1e-3

    @property
    def verdict(self):
        return (self.final_gd < self.tol and self.final_path < self.tol and self.gd_monotone
                and self.path_monotone and self.dir_S_norm < self.tol)

    def to_dict(self):
        return {"v_bar": self.v_bar.tolist(), "final_gd": self.final_gd,
                "final_path": self.final_path, "dir_S_norm": self.dir_S_norm,
                "gd_monotone": self.gd_monotone, "path_monotone": self.path_monotone,
                "verdict": self.verdict}


def decomposition_convergence(p, trace, path, tol=1e-3, slack=1e-8):
    """Distances of the S-components of both paths to the minimizer on S.

    Monotonicity is judged on the second half of each sequence, up to
    ``slack`` (path points are only certified to about that accuracy).
    """
    dec = p.decomposition
    if dec is None:
        dec = decompose(p.ds)
        p = p.with_decomposition(dec)
    if not dec.sc_indices:
        raise ParameterError("dataset is separable (D_s is empty); nothing converges on S")
    v_bar = dec.v_bar if dec.v_bar is not None else minimize_on_S(p).v_bar
    gd = np.array([np.linalg.norm(dec.proj_S(w) - v_bar) for w in trace.W])
    pd = np.array([np.linalg.norm(dec.proj_S(q.w_bar) - v_bar) for q in path])
    half = lambda x: x[len(x) // 2:]
    dir_S = float(np.linalg.norm(dec.proj_S(path[-1].direction)))
    return DecompositionConvergence(v_bar, trace.t.copy(), gd, path.B, pd, dir_S, float(gd[-1]),
                                    float(pd[-1]), _decreasing(half(gd), slack),
                                    _decreasing(half(pd), slack), tol)


# -- oscillation ------------------------------------------------------------------------------

@dataclass
class OscillationReport:
    n: int
    switches: int
    u_exp: np.ndarray
    u_recip: np.ndarray
    separation: float
    gamma_bar: float
    radii: list                      # (label, B, angle to u_recip, angle to u_exp)
    verdict: bool
    B0: float = 1.0
    u_hat_angle: float = math.nan    # angle between u_exp and the min-norm-point direction

    def to_dict(self):
        return {"n": self.n, "switches": self.switches, "separation": self.separation,
                "gamma_bar": self.gamma_bar, "u_exp": self.u_exp.tolist(),
                "u_recip": self.u_recip.tolist(), "u_hat_angle": self.u_hat_angle,
                "radii": [list(r) for r in self.radii], "verdict": self.verdict}


def oscillation_experiment(B0=1.0, n=50, switches=2, tol=1e-8, B_max=2.0**12, min_separation=0.05):
    """Regularization path of the tail-switching loss on the margin-scaling data.

    At every radius ``d_k`` (end of a ``1/z`` stretch) the path direction
    should sit near the ``1/z`` limit direction, and at every ``b_k`` (end of an
    ``exp(-z)`` stretch) near the exponential one.  Raises
    :class:`InconclusiveError` when the two reference directions are closer
    than ``min_separation``.
    """
    if int(switches) != switches or switches < 0:
        raise ParameterError("switches must be a nonnegative count")
    ds = make_margin_scaling_dataset(n)
    grid = geometric_grid(1.0, B_max)
    exp_path = solve_path(RiskProblem(make_exponential(), ds), grid, tol=tol)
    rec_path = solve_path(RiskProblem(make_tail_power(1.0), ds), grid, tol=tol)
    u_exp, u_rec = exp_path[-1].direction, rec_path[-1].direction
    u_hat = max_margin(ds).u_hat
    s = angle(u_exp, u_rec)
    gamma_bar = float(np.min(ds.Z @ u_rec))
    report = OscillationReport(int(n), int(switches), u_exp, u_rec, s, gamma_bar, [], False,
                               float(B0), angle(u_exp, u_hat))
    if switches >= 1 and s < min_separation:
        raise InconclusiveError(
            f"the 1/z and exp(-z) limit directions differ by only {s:.4f} rad at n={n} "
            f"(need > {min_separation}); use a larger n", report=report)
    loss = build_oscillating(B0, n, min(gamma_bar, 1.0), switches)
    p = RiskProblem(loss, ds)
    radii = []
    for rec in loss.info["switches"]:
        if rec["tail"] == "recip":
            radii.append((f"d_{rec['k']}", rec["d"], "recip"))
        else:
            radii.append((f"b_{rec['k']}", rec["b"], "exp"))
    if switches == 0:
        radii = [(f"B={B:g}", B, "exp") for B in grid[-3:]]
    ok = True
    for label, B, kind in radii:
        warm = B * (u_rec if kind == "recip" else u_exp)
        q = solve_ball(p, B, warm=warm, tol=tol)
        a_rec, a_exp = angle(q.w_bar, u_rec), angle(q.w_bar, u_exp)
        report.radii.append((label, float(B), a_rec, a_exp, q.collinearity_residual))
        near = a_rec if kind == "recip" else a_exp
        ok &= (near < s / 3) if switches else (near < 0.02)
    report.verdict = bool(ok and (s > 0 or switches == 0))
    return report


# -- one-shot comparison used by the CLI and the acceptance suite ---------------------------

@dataclass
class PathRun:
    problem: RiskProblem
    trace: object
    path: object
    comparison: DirectionComparison
    limit: LimitDirection


def run_comparison(loss, ds, B_max=2.0**12, max_steps=100_000, tol=1e-8, factor=2.0,
                   record_every="geometric"):
    p = RiskProblem(loss, ds)
    trace = gd_run(p, max_steps=max_steps, record_every=record_every)
    path = solve_path(p, geometric_grid(1.0, B_max, factor), tol=tol)
    return PathRun(p, trace, path, compare_directions(trace, path), limit_direction(path))
