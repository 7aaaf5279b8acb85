"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary.  Lines tagged ``info`` are diagnostics that do not count
towards any criterion.
"""
import math
import time

import numpy as np
import pytest

from implicit_paths.analysis import (angle, compare_directions, decomposition_convergence,
                                     limit_direction, margin_bound_check, oscillation_experiment,
                                     scaling_experiment)
from implicit_paths.data import (decompose, make_clouds, make_margin_scaling_dataset, make_mixed,
                                 make_single_point, make_two_point, max_margin)
from implicit_paths.errors import ConvergenceError, InconclusiveError
from implicit_paths.losses import (build_oscillating, make_exponential, make_figure_poly,
                                   make_logistic, make_poly_tail, make_tail_power,
                                   splice_exp_to_recip, splice_recip_to_exp, validate)
from implicit_paths.regpath import RegPath, certificate_floor, geometric_grid, minimize_on_S, solve_ball
from implicit_paths.risk import RiskProblem, check_distance_inequality, gd_run, grad, risk

import oracles
from test_data import _random_case
from test_regpath import ORACLE_CASES

LINES = []
B_MAX = 2.0**12
GRID = geometric_grid(1.0, B_MAX)


def record(label, ok, detail, counted=True):
    tag = ("PASS" if ok else "FAIL") if counted else "info"
    line = f"[{tag}] {label}: {detail}"
    LINES.append(line)
    print(line)
    return ok


LOSSES = {
    "exp": make_exponential(),
    "logistic": make_logistic(),
    "poly(b=1)": make_tail_power(1.0),
    "poly(b=2)": make_tail_power(2.0),
    "figure_poly(p=1)": make_figure_poly(1.0),
    "figure_poly(p=2)": make_figure_poly(2.0),
}
DATASETS = {
    "single": make_single_point(),
    "two_point": make_two_point(),
    "margin_scaling(n=20)": make_margin_scaling_dataset(20),
    "clouds(seed=1)": make_clouds(seed=1),
    "mixed": make_mixed(),
}
SEPARABLE = ["single", "two_point", "margin_scaling(n=20)", "clouds(seed=1)"]
CELLS = [(l, d) for l in LOSSES for d in DATASETS]


def certified_path(p, grid=GRID):
    """Solve along the grid until float64 can no longer certify a radius."""
    points, w = [], None
    for B in grid:
        try:
            q = solve_ball(p, B, warm=w)
        except ConvergenceError as exc:
            return RegPath(points), (B, certificate_floor(p, exc.best))
        points.append(q)
        w = q.w_bar * 2.0
    return RegPath(points), None


@pytest.fixture(scope="module")
def matrix():
    out = {}
    t0 = time.perf_counter()
    for l, d in CELLS:
        p = RiskProblem(LOSSES[l], DATASETS[d])
        out[l, d] = {"p": p, "trace": gd_run(p, max_steps=100_000, check=False)}
    gd_time = time.perf_counter() - t0
    for l, d in CELLS:
        cell = out[l, d]
        cell["path"], cell["stopped"] = certified_path(cell["p"])
    return out, gd_time


def test_c01_descent_inequality(matrix):
    cells, elapsed = matrix
    worst = max(c["trace"].max_residual for c in cells.values())
    statuses = {c["trace"].status for c in cells.values()}
    ok = worst <= 1e-12 and statuses == {"max_steps"} and elapsed < 120
    record("C1 descent inequality", ok,
           f"{len(cells)} runs x 1e5 steps, max residual {worst:.3e} (tol 1e-12), "
           f"statuses {sorted(statuses)}, GD time {elapsed:.1f} s (limit 120 s)")
    assert ok


def test_c02_distance_inequality(matrix):
    cells, _ = matrix
    worst, detail = -math.inf, []
    for (l, d), c in cells.items():
        p, path = c["p"], c["path"]
        anchor = path[-1].w_bar
        tr = gd_run(p, max_steps=10_000, record_every=1)
        rep = check_distance_inequality(p, tr, anchor)
        worst = max(worst, rep.max_violation)
        if path[-1].B < B_MAX:
            detail.append(f"{l}/{d} anchor at B={path[-1].B:g}")
    ok = worst <= 1e-10
    record("C2 distance inequality", ok,
           f"max violation {worst:.3e} (tol 1e-10) over 30 prefixes of 1e4 steps; anchors below "
           f"B_max (float64 floor): {', '.join(detail) or 'none'}")
    assert ok


def test_c03_path_equivalence(matrix):
    cells, _ = matrix
    bad, rows = [], []
    for l in LOSSES:
        for d in SEPARABLE:
            c = cells[l, d]
            cmp1 = compare_directions(c["trace"], c["path"])
            tr4 = gd_run(c["p"], max_steps=400_000)
            cmp4 = compare_directions(tr4, c["path"])
            a1, a4 = cmp1.final_angle, cmp4.final_angle
            ok = a1 <= 0.02 and a4 <= a1 + 1e-12
            rows.append((l, d, cmp1.pairs[-1][1], a1, cmp4.pairs[-1][1], a4, ok))
            if not ok:
                bad.append(f"{l}/{d}: {a1:.4f} at B={cmp1.pairs[-1][1]:g} -> {a4:.4f} at "
                           f"B={cmp4.pairs[-1][1]:g}")
    for l, d, B1, a1, B4, a4, ok in rows:
        record(f"C3 cell {l}/{d}", ok, f"final angle {a1:.2e} at B={B1:g} (1e5 steps), "
               f"{a4:.2e} at B={B4:g} (4e5 steps)", counted=False)
    ok = not bad
    record("C3 path equivalence", ok,
           f"{len(rows) - len(bad)}/{len(rows)} separable cells within 0.02 rad at the largest "
           f"norm-matched radius (GD cannot reach 4096 in budget); failing: {'; '.join(bad) or 'none'}")
    assert ok


def test_c04_exponential_tail_max_margin(matrix):
    cells, _ = matrix
    worst = 0.0
    for l in ("exp", "logistic"):
        for d in SEPARABLE:
            path = cells[l, d]["path"]
            assert path[-1].B == B_MAX
            worst = max(worst, angle(path[-1].direction, max_margin(DATASETS[d]).u_hat))
    ok = worst < 0.02
    record("C4 exponential tail -> max margin", ok,
           f"max angle to u_hat {worst:.2e} (tol 0.02) over 8 cells at B={B_MAX:g}")
    assert ok


def test_c05_margin_lower_bound(matrix):
    cells, _ = matrix
    checked, failures, worst_slack = 0, [], math.inf
    for (l, d), c in cells.items():
        lim = limit_direction(c["path"])
        if not lim.converged:
            continue
        p = c["p"]
        if d == "mixed":
            p = p.with_decomposition(decompose(DATASETS[d]))
        rep = margin_bound_check(p, lim)
        checked += 1
        worst_slack = min(worst_slack, rep.gamma_bar - rep.bound)
        if not rep.satisfied:
            failures.append(f"{l}/{d}")
    ok = checked > 0 and not failures
    record("C5 margin lower bound", ok,
           f"{checked} converged limit directions, min gamma_bar - bound {worst_slack:.3e}; "
           f"violations: {', '.join(failures) or 'none'}")
    assert ok


@pytest.mark.parametrize("b", [1.0, 2.0])
def test_c06_margin_scaling(b):
    t0 = time.perf_counter()
    rep = scaling_experiment(b)
    elapsed = time.perf_counter() - t0
    oracle_margins = [oracles.poly_limit_oracle(n, b) @ [0.6, -0.8] for n in rep.ns]
    oracle_slope = np.polyfit(np.log(rep.ns), np.log(oracle_margins), 1)[0]
    spread = rep.gamma_hat_spread
    g_ok = spread <= 1e-3 and abs(rep.gamma_hats[0] - 0.135980020730017) < 1e-3
    ok = rep.slope_ok and g_ok and all(rep.converged) and elapsed < 600
    record(f"C6 margin scaling b={b:g}", ok,
           f"slope {rep.slope:+.4f} vs -1/(b+1) = {rep.target:+.4f} +/- 0.08 "
           f"(stationarity oracle slope {oracle_slope:+.4f}); gamma_hat spread {spread:.1e}; "
           f"{elapsed:.1f} s")
    assert ok


def test_c07_collinearity_certificate(matrix):
    cells, _ = matrix
    resid = [q.collinearity_residual for c in cells.values() for q in c["path"] if q.boundary]
    worst = max(resid)
    mismatches, used = [], 0
    for loss, ds, B in ORACLE_CASES:
        p = RiskProblem(loss, ds)
        try:
            q = solve_ball(p, B)
        except ConvergenceError:
            mismatches.append(f"{loss.name}/{ds.name}/B={B:g}: not certified")
            continue
        f = lambda w: risk(p, np.asarray(w))
        w_o = oracles.ball_oracle(f, B, interior_start=q.w_bar)
        if q.boundary:
            differ = angle(q.w_bar, w_o) >= 1e-3
        else:
            differ = np.linalg.norm(q.w_bar - w_o) >= 1e-3 * max(1, np.linalg.norm(w_o))
        flat = math.isclose(f(0.5 * (w_o + q.w_bar)), f(q.w_bar), rel_tol=1e-12) and \
            math.isclose(f(w_o), f(q.w_bar), rel_tol=1e-12)
        if differ and flat:
            continue      # risk is flat between the two: minimizer not unique
        used += 1
        if differ:
            mismatches.append(f"{loss.name}/{ds.name}/B={B:g}")
    ok = worst <= 1e-8 and not mismatches
    record("C7 collinearity certificate", ok,
           f"{len(resid)} boundary points, max residual {worst:.2e} (tol 1e-8); grid oracle agrees "
           f"on {used} unique-minimizer cases; mismatches: {', '.join(mismatches) or 'none'}")
    assert ok


def test_c08_decomposition():
    bad = []
    for seed in range(50):
        ds = _random_case(seed)
        dec = decompose(ds)
        if dec.comp_indices != oracles.dc_oracle(ds.Z):
            bad.append(f"seed {seed}: verdicts")
            continue
        if dec.has_separator:
            comp = list(dec.comp_indices)
            if np.min(ds.Z[comp] @ dec.separator_u) < dec.separator_gamma - 1e-10:
                bad.append(f"seed {seed}: separator margin")
            if dec.basis_S.shape[0] and np.max(np.abs(dec.basis_S @ dec.separator_u)) > 1e-8:
                bad.append(f"seed {seed}: separator not orthogonal to S")
    ok = not bad
    record("C8 decomposition", ok, f"50 random datasets (d<=3, n<=8) against exhaustive enumeration; "
           f"failures: {', '.join(bad) or 'none'}")
    assert ok


def test_c09_nonseparable_convergence():
    ds = make_mixed()
    dec = decompose(ds)
    loss = make_figure_poly(1.0)
    p = RiskProblem(loss, ds, dec)
    v_bar = minimize_on_S(p).v_bar
    # S is the first axis; D_s = {(0.5, 0), -(1, 0)}
    v_gold = oracles.golden_oracle(lambda v: loss.value(0.5 * v) + loss.value(-v), -5.0, 5.0)
    trace = gd_run(p, max_steps=100_000)
    path, stopped = certified_path(p)
    rep = decomposition_convergence(p, trace, path)
    cross = abs(v_bar[0] - v_gold)
    ok = (stopped is None and rep.final_gd < 1e-3 and rep.final_path < 1e-3
          and rep.dir_S_norm < 1e-3 and cross < 1e-6)
    record("C9 nonseparable convergence", ok,
           f"{loss.name}: |P_S w_T - v_bar| {rep.final_gd:.2e}, |P_S w(B_max) - v_bar| "
           f"{rep.final_path:.2e}, |P_S dir| {rep.dir_S_norm:.2e} (tol 1e-3); v_bar vs golden "
           f"section {cross:.1e}")
    for name in ("logistic", "exp"):
        lp = RiskProblem(LOSSES[name], ds, dec)
        tr = gd_run(lp, max_steps=100_000)
        vb = minimize_on_S(lp).v_bar
        _, stop = certified_path(lp)
        record(f"C9 {name}", True, f"GD |P_S w_T - v_bar| {np.linalg.norm(dec.proj_S(tr.W[-1]) - vb):.2e}; "
               f"path certifiable only up to B={stop[0] / 2:g} (float64 floor {stop[1]:.1e})",
               counted=False)
    assert ok


def test_c10_oscillation():
    t0 = time.perf_counter()
    for n in (100, 200):
        try:
            rep = oscillation_experiment(n=n, switches=2)
            rad = "; ".join(f"{lab} B={B:.4g}: to u_rec {ar:.1e}, to u_exp {ae:.1e}"
                            for lab, B, ar, ae, _ in rep.radii)
            record(f"C10 n={n}", rep.verdict, f"s={rep.separation:.4f}, {rad}", counted=False)
        except InconclusiveError as exc:
            record(f"C10 n={n}", False, str(exc), counted=False)
    try:
        rep = oscillation_experiment(n=50, switches=2)
        ok = rep.verdict and rep.separation > 0.05
        detail = f"s={rep.separation:.4f}, radii {rep.radii}"
    except InconclusiveError as exc:
        ok, detail = False, f"inconclusive: {exc}"
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600
    record("C10 oscillation (n=50, K=2)", ok, f"{detail} ({elapsed:.1f} s)")
    assert ok


def test_c11_splice_construction():
    worst, msgs = 0.0, []
    for c0 in (1.0, 2.0, 5.0):
        for fn in (splice_exp_to_recip, splice_recip_to_exp):
            worst = max(worst, fn(c0).gap_residual)
    c1 = splice_exp_to_recip(1.0).upper
    c1_oracle = oracles_c1(1.0)
    losses_ok = all(validate(build_oscillating(1.0, 50, 0.1, k)).ok for k in (1, 2))
    ok = worst <= 1e-10 and c1 == 11 and c1_oracle == 11 and losses_ok
    record("C11 splice construction", ok,
           f"max gap residual {worst:.1e} (tol 1e-10) for C0 in {{1,2,5}}; C1(C0=1) = {c1:g} "
           f"(inequality oracle {c1_oracle}); spliced losses validate: {losses_ok}")
    assert ok


def oracles_c1(c0):
    from test_losses import _oracle_c1
    return _oracle_c1(c0)


def test_c12_gradient_correctness():
    rng = np.random.default_rng(12)
    families = dict(LOSSES, **{"poly_tail(a=0.5,b=1.5)": make_poly_tail(0.5, 1.5),
                               "oscillating(K=2)": build_oscillating(1.0, 50, 0.1, 2)})
    worst, ds = 0.0, make_clouds(seed=1)
    for name, loss in families.items():
        z = rng.uniform(-5.0, 50.0, 100)
        for zi in z:
            h = 1e-5 * max(1.0, abs(zi))
            if np.any(np.abs(loss.breakpoints - zi) < 2 * h):
                zi += 4 * h
            fd = (loss.value(zi + h) - loss.value(zi - h)) / (2 * h)
            d = loss.deriv(zi)
            if abs(d) > 1e-12:
                worst = max(worst, abs(fd - d) / abs(d))
        p = RiskProblem(loss, ds)
        for w in rng.normal(scale=2.0, size=(100, 2)):
            g = grad(p, w)
            e = np.eye(2) * 1e-6
            fd = np.array([(risk(p, w + e[j]) - risk(p, w - e[j])) / 2e-6 for j in range(2)])
            if np.all(np.abs(np.subtract.outer(ds.Z @ w, loss.breakpoints)) > 1e-4):
                worst = max(worst, np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))
    ok = worst < 1e-6
    record("C12 gradient correctness", ok,
           f"max relative finite-difference error {worst:.1e} (tol 1e-6), {len(families)} families "
           f"x 100 probes of l' and of grad R")
    assert ok
