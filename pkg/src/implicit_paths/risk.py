"""Empirical risk of a linear predictor and the gradient-descent runner."""
import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from .data import Dataset
from .errors import DataError, DescentViolation, ParameterError
from .losses import validate

DESCENT_TOL = 1e-12
DIRECTION_FLOOR = 1e-12

_validated = {}


class RiskProblem:
    """A loss, a dataset and (optionally) its D_s / D_c decomposition.

    The loss is validated once per loss object unless ``check_loss`` is False.
    """

    def __init__(self, loss, ds, decomposition=None, check_loss=True):
        if not isinstance(ds, Dataset):
            raise DataError("ds must be a Dataset")
        if decomposition is not None and decomposition.d not in (0, ds.d):
            raise DataError("decomposition dimension does not match the dataset")
        if check_loss:
            key = id(loss)
            if key not in _validated or _validated[key][0] is not loss:
                _validated[key] = (loss, validate(loss, grid=(-10.0, 10.0, 2000)))
            rep = _validated[key][1]
            if not rep.ok:
                raise ParameterError(f"loss {loss} fails validation: {rep.violations[:3]}")
        self.loss = loss
        self.ds = ds
        self.decomposition = decomposition
        self.Z = ds.Z
        self._lam = None

    @property
    def n(self):
        return self.ds.n

    @property
    def d(self):
        return self.ds.d

    def with_decomposition(self, dec):
        return RiskProblem(self.loss, self.ds, dec, check_loss=False)

    @property
    def gram_lambda_max(self):
        """Largest eigenvalue of (1/n) sum z_i z_i^T (at most 1)."""
        if self._lam is None:
            self._lam = float(np.linalg.eigvalsh(self.Z.T @ self.Z / self.n)[-1])
        return self._lam

    @property
    def smoothness(self):
        """Certified Lipschitz constant of grad R (``inf`` when the loss has none)."""
        return self.loss.smoothness * self.gram_lambda_max

    def _margins(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.d,):
            raise DataError(f"w has shape {w.shape}, expected ({self.d},)")
        return self.Z @ w


def risk(p, w):
    return float(np.mean(p.loss.evaluate(p._margins(w))[0]))


def grad(p, w):
    d1 = p.loss.evaluate(p._margins(w))[1]
    return d1 @ p.Z / p.n


def risk_grad(p, w):
    v, d1, _ = p.loss.evaluate(p._margins(w))
    return float(np.mean(v)), d1 @ p.Z / p.n


def hessian(p, w):
    d2 = p.loss.evaluate(p._margins(w))[2]
    return (p.Z * d2[:, None]).T @ p.Z / p.n


def log_risk(p, w):
    """log R(w), accurate when R underflows in float64."""
    lv = p.loss.evaluate_log(p._margins(w))[0]
    return float(logsumexp(lv) - math.log(p.n))


def scaled_terms(p, w):
    """(log R, m, g, H) with grad R = e^m g and Hessian = e^m H.

    ``m`` is the largest log|l'(<w, z_i>)|, so ``g`` and ``H`` have entries of
    order one even when the true gradient is far below float64 range.
    """
    lv, lnd1, ld2 = p.loss.evaluate_log(p._margins(w))
    m = float(np.max(lnd1))
    wd1 = np.exp(lnd1 - m)
    wd2 = np.exp(ld2 - m)
    g = -(wd1 @ p.Z) / p.n
    H = (p.Z * wd2[:, None]).T @ p.Z / p.n
    return float(logsumexp(lv) - math.log(p.n)), m, g, H


def risk_split(p, w):
    """(R_s, R_c): risk summed over D_s and over D_c, both divided by n."""
    dec = p.decomposition
    if dec is None:
        raise ParameterError("risk_split needs a decomposition")
    v = p.loss.evaluate(p._margins(w))[0]
    s = list(dec.sc_indices)
    c = list(dec.comp_indices)
    return float(v[s].sum() / p.n), float(v[c].sum() / p.n)


def pick_step_size(p, w0=None):
    """min(1/beta_R, 1/(2 R(w0))).

    For a pure exponential loss a exp(-b z), which has no global smoothness
    constant, ``1/beta_R`` is replaced by the local bound ``1/(b^2 R(w0))``
    valid on the sublevel set of w0 (the Hessian is at most b^2 R there).
    """
    w0 = np.zeros(p.d) if w0 is None else np.asarray(w0, dtype=float)
    r0 = risk(p, w0)
    beta = p.smoothness
    if math.isfinite(beta):
        first = 1.0 / beta if beta > 0 else math.inf
    else:
        segs = p.loss.segments
        if len(segs) != 1 or segs[0].piece != "exponential":
            raise ParameterError(f"no step-size rule for {p.loss} (unbounded smoothness)")
        b = segs[0].params[1]
        first = 1.0 / (b * b * r0)
    return min(first, 1.0 / (2.0 * r0))


def record_schedule(max_steps, record_every="geometric", ratio=2 ** (1 / 16)):
    """Steps at which full iterates are kept.

    ``"geometric"`` keeps steps 0..16 and then one step per factor ``ratio``;
    an integer ``k`` keeps every k-th step.
    """
    max_steps = int(max_steps)
    if record_every == "geometric":
        steps = [np.arange(0, min(16, max_steps) + 1)]
        if max_steps > 16:
            k = np.arange(math.ceil(math.log(16) / math.log(ratio)),
                          math.floor(math.log(max_steps) / math.log(ratio)) + 1)
            steps.append(np.round(ratio ** k).astype(np.int64))
        out = np.unique(np.concatenate(steps))
        return out[out <= max_steps].astype(np.int64)
    k = int(record_every)
    if k < 1:
        raise ParameterError("record_every must be >= 1")
    return np.arange(0, max_steps + 1, k, dtype=np.int64)


@dataclass(frozen=True)
class GdRecord:
    t: int
    w: np.ndarray
    risk: float
    grad_norm: float
    norm: float
    direction: np.ndarray
    descent_residual: float


STATUS = {0: "max_steps", 1: "descent_violation", 2: "non_finite", 3: "target_norm", 4: "target_risk"}


class GdTrace:
    """Recorded gradient-descent iterates (columnar storage)."""

    def __init__(self, t, W, R, G, RES, eta, w0, status, max_residual, steps):
        self.t = np.asarray(t)
        self.W = np.asarray(W)
        self.risks = np.asarray(R)
        self.grad_norms = np.asarray(G)
        self.residuals = np.asarray(RES)
        self.norms = np.linalg.norm(self.W, axis=1)
        self.eta = float(eta)
        self.w0 = np.asarray(w0, dtype=float)
        self.status = STATUS[int(status)]
        self.max_residual = float(max_residual)
        self.steps = int(steps)

    def __len__(self):
        return self.t.shape[0]

    def __repr__(self):
        return (f"GdTrace({len(self)} records, steps={self.steps}, eta={self.eta:.4g}, "
                f"status={self.status}, final norm={self.norms[-1]:.4g})")

    def direction(self, i):
        nrm = self.norms[i]
        return None if nrm < DIRECTION_FLOOR else self.W[i] / nrm

    def record(self, i):
        return GdRecord(int(self.t[i]), self.W[i], float(self.risks[i]), float(self.grad_norms[i]),
                        float(self.norms[i]), self.direction(i), float(self.residuals[i]))

    @property
    def records(self):
        return [self.record(i) for i in range(len(self))]

    @property
    def final(self):
        return self.record(len(self) - 1)

    def nearest_norm(self, B):
        """Index of the record whose norm is closest to ``B``."""
        return int(np.argmin(np.abs(self.norms - B)))

    def to_csv(self, path):
        d = self.W.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "risk", "grad_norm", "norm"] + [f"dir_{j}" for j in range(d)]
                       + ["descent_residual"])
            for i in range(len(self)):
                u = self.direction(i)
                dirs = [""] * d if u is None else [repr(float(x)) for x in u]
                w.writerow([int(self.t[i]), repr(float(self.risks[i])), repr(float(self.grad_norms[i])),
                            repr(float(self.norms[i]))] + dirs + [repr(float(self.residuals[i]))])


def gd_run(p, w0=None, eta=None, max_steps=100_000, target_norm=math.inf, target_risk=0.0,
           record_every="geometric", descent_tol=DESCENT_TOL, check=True):
    """Constant-step gradient descent ``w <- w - eta grad R(w)``.

    The descent inequality is checked at every step; with ``check`` a
    violation (or a non-finite value) raises :class:`DescentViolation`
    carrying the trace up to and including the offending iterate.
    """
    w0 = np.zeros(p.d) if w0 is None else np.array(w0, dtype=float)
    if w0.shape != (p.d,):
        raise DataError(f"w0 has shape {w0.shape}, expected ({p.d},)")
    if eta is None:
        eta = pick_step_size(p, w0)
    if not (eta > 0 and math.isfinite(eta)):
        raise ParameterError(f"eta must be positive, got {eta!r}")
    if int(max_steps) < 0:
        raise ParameterError("max_steps must be nonnegative")
    rec = record_schedule(max_steps, record_every)
    bps, kinds, params = p.loss.table
    out = K.gd_loop(p.Z, w0, float(eta), int(max_steps), float(target_norm), float(target_risk),
                    rec, bps, kinds, params, float(descent_tol))
    trace = GdTrace(*out[:5], eta=eta, w0=w0, status=out[7], max_residual=out[5], steps=out[6])
    if check and trace.status in ("descent_violation", "non_finite"):
        res = float(trace.residuals[-1])
        raise DescentViolation(
            f"{trace.status} at step {trace.steps}: residual {res:.3e} with eta={eta:.6g} "
            f"(step size too large for this problem?)", step=trace.steps, residual=res, trace=trace)
    return trace


@dataclass
class DistanceReport:
    pairs: int
    max_violation: float
    worst_step: int
    # pairs where f(anchor) <= f(w_{t+1}), so the distance to the anchor may not grow
    monotone_pairs: int
    max_distance_increase: float

    def ok(self, tol=1e-10):
        return self.pairs > 0 and self.max_violation <= tol and self.max_distance_increase <= tol

    def to_dict(self):
        return dict(self.__dict__)


def check_distance_inequality(p, trace, anchor, anchor_risk=None):
    """Check ``||w_{t+1}-a||^2 <= ||w_t-a||^2 + 2 eta (R(a) - R(w_{t+1}))``.

    Only consecutive records (t, t+1) are used.  The left-minus-right side is
    evaluated as ``<w_{t+1}-w_t, w_{t+1}+w_t-2a> - 2 eta (R(a) - R(w_{t+1}))``,
    which avoids cancelling two large squared distances.
    """
    a = np.asarray(anchor, dtype=float)
    if a.shape != (trace.W.shape[1],):
        raise DataError("anchor dimension mismatch")
    fa = risk(p, a) if anchor_risk is None else float(anchor_risk)
    idx = np.nonzero(np.diff(trace.t) == 1)[0]
    if idx.size == 0:
        return DistanceReport(0, -math.inf, -1, 0, -math.inf)
    W0, W1 = trace.W[idx], trace.W[idx + 1]
    f1 = trace.risks[idx + 1]
    delta = W1 - W0
    lhs = np.einsum("ij,ij->i", delta, W1 + W0 - 2.0 * a)
    viol = lhs - 2.0 * trace.eta * (fa - f1)
    k = int(np.argmax(viol))
    mono = fa <= f1
    inc = lhs[mono]
    # distance growth, measured as ||w_{t+1}-a|| - ||w_t-a||
    dist_inc = inc / (np.linalg.norm(W1[mono] - a, axis=1) + np.linalg.norm(W0[mono] - a, axis=1) + 1e-300)
    return DistanceReport(int(idx.size), float(viol[k]), int(trace.t[idx[k]]), int(mono.sum()),
                          float(dist_inc.max()) if inc.size else -math.inf)
