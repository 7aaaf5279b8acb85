"""Datasets, the maximum-margin problem and the separable/non-separable split."""
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import linprog

from .errors import ConvergenceError, DataError, ParameterError, SolverError

NORM_SLACK = 1e-12
RANK_TOL = 1e-10
FW_BUDGET = 20_000


class Dataset:
    """Labelled points ``(x_i, y_i)`` with ``||x_i|| <= 1`` and ``y_i = +-1``.

    ``Z`` caches the signed points ``z_i = y_i x_i``.  Arrays are read-only.
    """

    def __init__(self, X, y, name=None):
        X = np.array(X, dtype=float, ndmin=2)
        y = np.array(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DataError("need at least one point of dimension >= 1")
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{X.shape[0]} points but {y.shape[0]} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError("labels must be +1 or -1")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite coordinates")
        norms = np.linalg.norm(X, axis=1)
        if norms.max() > 1.0 + NORM_SLACK:
            i = int(norms.argmax())
            raise DataError(f"point {i} has norm {norms[i]:.6g} > 1 (rescale with normalize)")
        self.X = X
        self.y = y
        self.Z = np.ascontiguousarray(X * y[:, None])
        self.name = name
        for a in (self.X, self.y, self.Z):
            a.setflags(write=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Dataset({self.n} points, d={self.d}{tag})"

    def __eq__(self, other):
        return (isinstance(other, Dataset) and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx], name=self.name)


def normalized(X, y, name=None):
    """Dataset rescaled by ``1 / max ||x_i||`` (when that exceeds 1)."""
    X = np.array(X, dtype=float, ndmin=2)
    m = np.linalg.norm(X, axis=1).max() if X.size else 0.0
    if m > 1.0:
        X = X / m
    return Dataset(X, y, name=name)


def load_csv(path, normalize=False):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row]
            if not row or all(c == "" for c in row) or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: need features and a label")
            if rows and len(row) != len(rows[0]):
                raise DataError(f"{path}:{lineno}: ragged row ({len(row)} fields, expected {len(rows[0])})")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if vals[-1] not in (1.0, -1.0):
                raise DataError(f"{path}:{lineno}: label {row[-1]!r} is not +1/-1")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    X, y = arr[:, :-1], arr[:, -1]
    return normalized(X, y, name=str(path)) if normalize else Dataset(X, y, name=str(path))


def save_csv(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + ["+1" if y > 0 else "-1"])


# -- maximum margin ---------------------------------------------------------------

@njit(cache=True)
def _min_norm_point(Z, max_iter, tol):
    """Away-step Frank-Wolfe for the point of conv{z_i} nearest the origin.

    Returns (q, p, gap, best_dir, best_margin, iterations, status) where status
    is 0 converged, 1 origin reached (not separable), 2 iteration cap.
    """
    n, d = Z.shape
    sq = np.empty(n)
    for i in range(n):
        sq[i] = np.dot(Z[i], Z[i])
    i0 = np.argmin(sq)
    q = np.zeros(n)
    q[i0] = 1.0
    p = Z[i0].copy()
    best_dir = np.zeros(d)
    best_margin = -np.inf
    gap = np.inf
    status = 2
    it = 0
    while it < max_iter:
        if it % 1000 == 999:
            p = Z.T @ q
        pz = Z @ p
        pp = np.dot(p, p)
        nrm = math.sqrt(pp)
        s = np.argmin(pz)
        if nrm > 0.0:
            m = pz[s] / nrm
            if m > best_margin:
                best_margin = m
                best_dir = p / nrm
            gap = nrm - m
        if nrm <= tol:
            status = 1
            break
        if gap <= tol:
            status = 0
            break
        a = -1
        amax = -np.inf
        for i in range(n):
            if q[i] > 0.0 and pz[i] > amax:
                amax = pz[i]
                a = i
        fw_gap = pp - pz[s]
        away_gap = amax - pp
        if fw_gap >= away_gap or q[a] >= 1.0:
            dv = Z[s] - p
            gmax = 1.0
            fw = True
        else:
            dv = p - Z[a]
            gmax = q[a] / (1.0 - q[a])
            fw = False
        dd = np.dot(dv, dv)
        if dd == 0.0:
            break
        g = min(gmax, -np.dot(p, dv) / dd)
        if g <= 0.0:
            break
        if fw:
            q *= 1.0 - g
            q[s] += g
            if g == 1.0:
                q[:] = 0.0
                q[s] = 1.0
        else:
            q *= 1.0 + g
            q[a] -= g
            if g == gmax:
                q[a] = 0.0
        p = p + g * dv
        it += 1
    return q, p, gap, best_dir, best_margin, it, status


@dataclass(frozen=True)
class MaxMargin:
    """``u_hat`` maximizes ``min_i <u, z_i>`` over unit ``u``.

    ``certificate`` holds simplex weights ``q`` with ``p = sum q_i z_i`` and
    ``duality_gap = ||p|| - min_i <p / ||p||, z_i>``; ``gamma_hat = ||p||``
    whenever the data are separable through the origin.
    """

    u_hat: np.ndarray
    gamma_hat: float
    certificate: np.ndarray
    p: np.ndarray
    duality_gap: float
    separable: bool
    iterations: int

    def to_dict(self):
        return {"u_hat": self.u_hat.tolist(), "gamma_hat": self.gamma_hat,
                "duality_gap": self.duality_gap, "separable": self.separable,
                "certificate": self.certificate.tolist()}


def _signed(ds_or_Z):
    if isinstance(ds_or_Z, Dataset):
        return ds_or_Z.Z
    return np.ascontiguousarray(np.array(ds_or_Z, dtype=float, ndmin=2))


def _wolfe_polish(Z, q, tol, max_iter=10_000):
    """Wolfe's active-set nearest-point method, started from the support of q.

    Frank-Wolfe slows to a crawl when hull vertices nearly coincide; the
    active-set iteration solves the affine subproblems exactly instead.
    Returns (q, status) with the status codes of ``_min_norm_point``.
    """
    n = Z.shape[0]
    # start from the heaviest FW vertex; the corral is rebuilt from there
    S = [int(np.argmax(q))]
    lam = np.array([1.0])
    for _ in range(max_iter):
        x = lam @ Z[S]
        nrm = np.linalg.norm(x)
        if nrm <= tol:
            break
        pz = Z @ x
        j = int(np.argmin(pz))
        if nrm - pz[j] / nrm <= tol or j in S:
            qq = np.zeros(n)
            qq[S] = lam
            return qq, 0 if nrm - pz[j] / nrm <= tol else 2
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            # affine minimum-norm point of the corral, by least squares on differences
            D = Z[S[1:]] - Z[S[0]]
            beta = np.linalg.lstsq(D.T, -Z[S[0]], rcond=None)[0]
            alpha = np.concatenate([[1.0 - beta.sum()], beta])
            if np.all(alpha > 0):
                lam = alpha
                break
            neg = alpha <= 0
            theta = np.min(lam[neg] / (lam[neg] - alpha[neg]))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-15
            if not keep.any():
                keep[np.argmax(lam)] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep] / lam[keep].sum()
            if len(S) == 1:
                break
    qq = np.zeros(n)
    qq[S] = lam
    return qq, 1 if np.linalg.norm(lam @ Z[S]) <= tol else 2


def max_margin(ds, tol=1e-10, max_iter=10**6):
    """Maximum-margin direction via the min-norm point of the signed hull.

    Away-step Frank-Wolfe does the bulk of the work; if it stalls, an
    exact active-set polish finishes.  For data that cannot be separated
    through the origin the min-norm point is the origin; ``gamma_hat`` is then
    the best (nonpositive) margin seen among the iterates and ``separable``
    is False.
    """
    Z = _signed(ds)
    if Z.shape[0] == 0:
        raise DataError("empty dataset")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    fw_cap = min(int(max_iter), FW_BUDGET)
    q, p, gap, best_dir, best_margin, its, status = _min_norm_point(Z, fw_cap, float(tol))
    if status == 2:
        q, status = _wolfe_polish(Z, q, tol)
    p = Z.T @ q
    nrm = float(np.linalg.norm(p))
    if status == 1 or nrm <= tol:
        u = best_dir if np.any(best_dir) else np.eye(Z.shape[1])[0]
        gamma = float(np.min(Z @ u))
        return MaxMargin(u, gamma, q, p, float("nan"), False, int(its))
    u = p / nrm
    gap = nrm - float(np.min(Z @ u))
    if status == 2 and gap > tol:
        raise ConvergenceError(f"min-norm point not certified after {its} iterations",
                               best=u, residual=gap)
    return MaxMargin(u, nrm, q, p, max(gap, 0.0), True, int(its))


def margin(u, ds, indices=None):
    """``min_i <u, z_i>`` over all points (or over ``indices``)."""
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ParameterError(f"direction must be a unit vector (norm {np.linalg.norm(u):.3g})")
    Z = _signed(ds)
    if indices is not None:
        Z = Z[np.asarray(indices, dtype=int)]
        if Z.shape[0] == 0:
            raise DataError("margin over an empty index set")
    return float(np.min(Z @ u))


# -- decomposition -----------------------------------------------------------------

def feasibility_lp(Z, i):
    """Optimal ``delta`` of max delta s.t. <u,z_i> >= delta, <u,z_j> >= 0, |u|_inf <= 1."""
    n, d = Z.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = np.hstack([-Z, np.zeros((n, 1))])
    A[i, -1] = 1.0
    bounds = [(-1.0, 1.0)] * d + [(None, None)]
    res = linprog(c, A_ub=A, b_ub=np.zeros(n), bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverError(f"feasibility LP for point {i} failed: {res.message}", index=i)
    return float(-res.fun), res.x[:d]


def gram_schmidt(V, tol=RANK_TOL):
    """Orthonormal basis (rows) of span of the rows of ``V``, modified Gram-Schmidt."""
    V = np.array(V, dtype=float, ndmin=2)
    basis = []
    for v in V:
        w = v.copy()
        for b in basis:
            w -= np.dot(b, w) * b
        for b in basis:          # second pass for numerical orthogonality
            w -= np.dot(b, w) * b
        nrm = np.linalg.norm(w)
        if nrm > tol:
            basis.append(w / nrm)
    d = V.shape[1] if V.size else 0
    return np.array(basis).reshape(len(basis), d)


@dataclass
class Decomposition:
    """``sc_indices`` (D_s) and ``comp_indices`` (D_c) with the subspace
    ``S = span{x_i : i in D_s}`` and a separator of D_c living in S-perp."""

    sc_indices: tuple
    comp_indices: tuple
    basis_S: np.ndarray
    separator_u: np.ndarray = None
    separator_gamma: float = None
    v_bar: np.ndarray = None
    deltas: np.ndarray = None
    d: int = 0

    @property
    def has_separator(self):
        return self.separator_u is not None

    def proj_S(self, v):
        v = np.asarray(v, dtype=float)
        if self.basis_S.shape[0] == 0:
            return np.zeros_like(v)
        return (v @ self.basis_S.T) @ self.basis_S

    def proj_perp(self, v):
        v = np.asarray(v, dtype=float)
        return v - self.proj_S(v)

    def to_dict(self):
        out = {
            "sc_indices": list(self.sc_indices),
            "comp_indices": list(self.comp_indices),
            "basis_S": [[repr(float(x)) for x in row] for row in self.basis_S],
            "separator": None,
        }
        if self.has_separator:
            out["separator"] = {"u": self.separator_u.tolist(), "gamma": self.separator_gamma}
        if self.v_bar is not None:
            out["v_bar"] = self.v_bar.tolist()
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def decompose(ds, tol=1e-9, jobs=1):
    """Split the points into D_s and D_c by per-point feasibility LPs.

    Point i joins D_c when its optimal ``delta`` exceeds ``tol``; ties go to D_s.
    """
    Z = _signed(ds)
    n, d = Z.shape
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            deltas = [r[0] for r in ex.map(lambda i: feasibility_lp(Z, i), range(n))]
    else:
        deltas = [feasibility_lp(Z, i)[0] for i in range(n)]
    deltas = np.array(deltas)
    comp = tuple(int(i) for i in np.nonzero(deltas > tol)[0])
    sc = tuple(int(i) for i in np.nonzero(~(deltas > tol))[0])
    X = ds.X if isinstance(ds, Dataset) else Z
    basis = gram_schmidt(X[list(sc)]) if sc else np.zeros((0, d))
    dec = Decomposition(sc, comp, basis, deltas=deltas, d=d)
    if comp:
        P = np.array([dec.proj_perp(Z[i]) for i in comp])
        mm = max_margin(P)
        if not mm.separable:
            raise SolverError("D_c points are not separable in S-perp", index=comp[0])
        u = dec.proj_perp(mm.u_hat)
        u /= np.linalg.norm(u)
        dec.separator_u = u
        dec.separator_gamma = float(np.min(Z[list(comp)] @ u))
    return dec


# -- generators -------------------------------------------------------------------------

def make_margin_scaling_dataset(n):
    """n-1 copies of (0.1, 0.1) and one (0.6, -0.8), all labelled +1."""
    if int(n) != n or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n!r}")
    n = int(n)
    X = np.tile([0.1, 0.1], (n, 1))
    X[-1] = [0.6, -0.8]
    return Dataset(X, np.ones(n), name=f"margin_scaling(n={n})")


DEFAULT_CLOUDS = (
    ((-0.4, 0.0), 0.1, 10, -1),
    ((0.4, 0.0), 0.1, 10, +1),
    ((0.6, 0.7), 0.1, 10, +1),
)


def make_clouds(spec=DEFAULT_CLOUDS, seed=0):
    """Uniform samples from discs ``(center, radius, count, label)``.

    The result is rescaled by ``1 / max ||x||`` when needed so all norms are at
    most 1.  Deterministic for a given seed.
    """
    spec = list(spec)
    if not spec:
        raise ParameterError("empty cloud specification")
    rng = np.random.default_rng(seed)
    X, y = [], []
    for center, radius, count, label in spec:
        center = np.asarray(center, dtype=float)
        k = int(count)
        if center.ndim != 1 or k < 1 or radius < 0:
            raise ParameterError(f"bad cloud {(center, radius, count, label)}")
        d = center.shape[0]
        g = rng.standard_normal((k, d))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        r = radius * rng.random(k) ** (1.0 / d)
        X.append(center + g * r[:, None])
        y.append(np.full(k, float(label)))
    return normalized(np.vstack(X), np.concatenate(y), name=f"clouds(seed={seed})")


def make_single_point():
    return Dataset([[1.0, 0.0]], [1.0], name="single")


def make_two_point():
    return Dataset([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0], name="two_point")


def make_antipodal():
    return Dataset([[1.0, 0.0], [1.0, 0.0]], [1.0, -1.0], name="antipodal")


def make_mixed():
    """Two points that no direction separates plus one that is separable."""
    return Dataset([[0.5, 0.0], [1.0, 0.0], [0.0, 1.0]], [1.0, -1.0, 1.0], name="mixed")


def random_unit_ball(n, d, rng, labels=None):
    """Points uniform in the unit ball with random (or given) labels."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    X = g * (rng.random(n) ** (1.0 / d))[:, None]
    y = rng.choice([-1.0, 1.0], n) if labels is None else np.asarray(labels, dtype=float)
    return Dataset(X, y)
