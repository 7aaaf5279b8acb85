import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from implicit_paths.data import make_clouds, make_margin_scaling_dataset, make_mixed, make_single_point
from implicit_paths.errors import DataError, DescentViolation, ParameterError
from implicit_paths.losses import (make_exponential, make_figure_poly, make_logistic,
                                   make_tail_power)
from implicit_paths.risk import (RiskProblem, check_distance_inequality, gd_run, grad,
                                 hessian, log_risk, pick_step_size, record_schedule, risk,
                                 risk_grad, risk_split, scaled_terms)
from implicit_paths.data import decompose

LOSSES = [make_exponential(), make_logistic(), make_tail_power(1.0), make_tail_power(2.0),
          make_figure_poly(1.0), make_figure_poly(2.0)]
LIDS = ["exp", "logistic", "tp1", "tp2", "fp1", "fp2"]


@pytest.fixture(scope="module")
def clouds():
    return make_clouds(seed=1)


@pytest.mark.parametrize("loss", LOSSES, ids=LIDS)
def test_risk_is_mean_of_losses(loss, clouds):
    p = RiskProblem(loss, clouds)
    w = np.array([0.7, -1.3])
    assert risk(p, w) == pytest.approx(np.mean([loss.value(z) for z in clouds.Z @ w]), rel=1e-14)
    assert log_risk(p, w) == pytest.approx(math.log(risk(p, w)), abs=1e-13)


@pytest.mark.parametrize("loss", LOSSES, ids=LIDS)
def test_gradient_and_hessian_finite_differences(loss, clouds):
    p = RiskProblem(loss, clouds)
    rng = np.random.default_rng(7)
    for _ in range(20):
        w = rng.normal(scale=3.0, size=2)
        r, g = risk_grad(p, w)
        H = hessian(p, w)
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-6
            fd = (risk(p, w + e) - risk(p, w - e)) / 2e-6
            assert abs(fd - g[j]) <= 1e-6 * max(1.0, np.abs(g).max())
            fdg = (grad(p, w + e) - grad(p, w - e)) / 2e-6
            # skip probes that straddle a join of the piece table
            if np.all(np.abs(np.subtract.outer(clouds.Z @ w, loss.breakpoints)) > 1e-4):
                np.testing.assert_allclose(fdg, H[:, j], atol=1e-5 * max(1.0, np.abs(H).max()))


def test_scaled_terms_reassemble_gradient(clouds):
    p = RiskProblem(make_logistic(), clouds)
    w = np.array([3.0, 1.0])
    lr, m, g, H = scaled_terms(p, w)
    np.testing.assert_allclose(math.exp(m) * g, grad(p, w), rtol=1e-13)
    np.testing.assert_allclose(math.exp(m) * H, hessian(p, w), rtol=1e-12)


def test_scaled_terms_far_past_underflow():
    p = RiskProblem(make_exponential(), make_single_point())
    lr, m, g, H = scaled_terms(p, np.array([5000.0, 0.0]))
    assert risk(p, np.array([5000.0, 0.0])) == 0.0
    assert lr == pytest.approx(-5000.0) and m == pytest.approx(-5000.0)
    np.testing.assert_allclose(g, [-1.0, 0.0])


def test_log_risk_against_extended_precision():
    ds = make_margin_scaling_dataset(10)
    p = RiskProblem(make_exponential(), ds)
    w = np.array([900.0, 500.0])
    with mp.workdps(30):
        want = mp.log(mp.fsum(mp.e ** (-mp.mpf(float(z))) for z in ds.Z @ w) / ds.n)
    assert log_risk(p, w) == pytest.approx(float(want), rel=1e-14)


def test_dimension_checks(clouds):
    p = RiskProblem(make_logistic(), clouds)
    with pytest.raises(DataError):
        risk(p, np.zeros(3))
    with pytest.raises(DataError):
        RiskProblem(make_logistic(), np.zeros((2, 2)))


def test_invalid_loss_rejected():
    from implicit_paths.losses import Loss, Segment, Tail
    bad = Loss([Segment(-math.inf, math.inf, "quadratic", (1.0, 0.0, 1.0))], Tail("polynomial", 1, 2))
    with pytest.raises(ParameterError):
        RiskProblem(bad, make_single_point())


def test_risk_split_sums_to_risk():
    ds = make_mixed()
    p = RiskProblem(make_logistic(), ds, decompose(ds))
    w = np.array([0.3, 2.0])
    rs, rc = risk_split(p, w)
    assert rs + rc == pytest.approx(risk(p, w), rel=1e-14)
    with pytest.raises(ParameterError):
        risk_split(RiskProblem(make_logistic(), ds), w)


@pytest.mark.parametrize("loss,want", [
    (make_exponential(), 0.5),          # 1/(b^2 R0) = 1 vs 1/(2 R0) = 1/2
    (make_logistic(), 1 / (2 * math.log(2))),
    (make_figure_poly(1.0), 0.5),
    (make_tail_power(2.0), 1 / 6),      # beta = 6 on the single point (lambda_max = 1)
])
def test_step_size_single_point(loss, want):
    p = RiskProblem(loss, make_single_point())
    assert pick_step_size(p) == pytest.approx(want, rel=1e-14)


def test_step_size_needs_smoothness():
    p = RiskProblem(make_exponential(2.0, 3.0), make_single_point())
    assert pick_step_size(p) == pytest.approx(min(1 / (9 * 2.0), 1 / (2 * 2.0)))


@given(st.integers(1, 10**7))
def test_record_schedule_geometric(max_steps):
    s = record_schedule(max_steps)
    assert s[0] == 0 and s[-1] <= max_steps
    assert np.all(np.diff(s) > 0)
    assert len(s) <= 17 + 16 * math.log2(max(max_steps, 2)) + 1
    assert set(range(min(16, max_steps) + 1)) <= set(s.tolist())


def test_record_schedule_every():
    np.testing.assert_array_equal(record_schedule(10, 5), [0, 5, 10])
    with pytest.raises(ParameterError):
        record_schedule(10, 0)


def test_gd_matches_scalar_recurrence():
    # exp loss on one point: w_{t+1} = w_t + eta exp(-w_t), iterated in 30 digits
    p = RiskProblem(make_exponential(), make_single_point())
    tr = gd_run(p, max_steps=200, record_every=1)
    with mp.workdps(30):
        w = mp.mpf(0)
        ref = [w]
        for _ in range(200):
            w = w + mp.mpf(tr.eta) * mp.e ** (-w)
            ref.append(w)
    np.testing.assert_allclose(tr.W[:, 0], [float(x) for x in ref], rtol=1e-13)
    assert np.all(tr.W[:, 1] == 0.0)


@pytest.mark.parametrize("loss", LOSSES, ids=LIDS)
def test_gd_descent_and_monotone_risk(loss, clouds):
    tr = gd_run(RiskProblem(loss, clouds), max_steps=5000)
    assert tr.status == "max_steps" and tr.steps == 5000
    assert tr.max_residual <= 1e-12
    assert np.all(np.diff(tr.risks) <= 1e-15)


def test_gd_descent_violation_raises(clouds):
    p = RiskProblem(make_logistic(), clouds)
    with pytest.raises(DescentViolation) as exc:
        gd_run(p, eta=200.0, max_steps=100)
    assert exc.value.trace is not None and exc.value.residual > 1e-12
    tr = gd_run(p, eta=200.0, max_steps=100, check=False)
    assert tr.status in ("descent_violation", "non_finite")


def test_gd_targets(clouds):
    p = RiskProblem(make_logistic(), clouds)
    tr = gd_run(p, max_steps=10**6, target_norm=5.0)
    assert tr.status == "target_norm" and tr.norms[-1] >= 5.0
    tr = gd_run(p, max_steps=10**6, target_risk=0.1)
    assert tr.status == "target_risk" and tr.risks[-1] <= 0.1


def test_gd_bad_arguments(clouds):
    p = RiskProblem(make_logistic(), clouds)
    with pytest.raises(ParameterError):
        gd_run(p, eta=-1.0)
    with pytest.raises(DataError):
        gd_run(p, w0=np.zeros(3))


def test_trace_csv_deterministic(tmp_path, clouds):
    p = RiskProblem(make_logistic(), clouds)
    gd_run(p, max_steps=300).to_csv(tmp_path / "a.csv")
    gd_run(p, max_steps=300).to_csv(tmp_path / "b.csv")
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert a.splitlines()[0] == b"t,risk,grad_norm,norm,dir_0,dir_1,descent_residual"
    # w_0 = 0 has no direction
    assert a.splitlines()[1].split(b",")[4] == b""


def test_trace_accessors(clouds):
    tr = gd_run(RiskProblem(make_logistic(), clouds), max_steps=100)
    assert tr.direction(0) is None
    rec = tr.final
    assert rec.t == 100 and rec.norm == pytest.approx(np.linalg.norm(rec.w))
    assert abs(tr.norms[tr.nearest_norm(1.0)] - 1.0) == np.min(np.abs(tr.norms - 1.0))


@pytest.mark.parametrize("loss", LOSSES[:3], ids=LIDS[:3])
def test_distance_inequality(loss, clouds):
    p = RiskProblem(loss, clouds)
    tr = gd_run(p, max_steps=2000, record_every=1)
    rep = check_distance_inequality(p, tr, anchor=tr.W[-1] * 1.5)
    assert rep.pairs == 2000 and rep.max_violation <= 1e-10


@given(arrays(np.float64, 2, elements=st.floats(-3, 3)))
def test_distance_inequality_any_anchor(a):
    p = RiskProblem(make_logistic(), make_margin_scaling_dataset(10))
    tr = gd_run(p, max_steps=200, record_every=1)
    assert check_distance_inequality(p, tr, a).max_violation <= 1e-10
