"""Convex, strictly decreasing scalar losses and their constructions.

Every loss is a table of closed-form pieces over consecutive intervals.  The
table is evaluated by compiled kernels (see ``_kernels``) both in plain
float64 and in the log domain; the latter keeps far tails such as
``exp(-z)`` at ``z ~ 1e6`` meaningful where float64 would underflow to zero.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ParameterError, ImplicitPathsError

PIECE_PARAMS = {
    "exponential": ("a", "b"),
    "power": ("a", "q", "s"),
    "affine": ("c0", "c1"),
    "quadratic": ("c0", "c1", "c2"),
    "recip_primitive": ("a", "b"),
    "logistic": (),
    "tangent": ("z_ref", "log_v", "log_d"),
    "bridge": ("zl", "zr", "log_dl", "log_dr", "log_vr"),
}
PIECE_CODES = {
    "exponential": K.EXPONENTIAL,
    "power": K.POWER,
    "affine": K.AFFINE,
    "quadratic": K.QUADRATIC,
    "recip_primitive": K.RECIP_PRIMITIVE,
    "logistic": K.LOGISTIC,
    "tangent": K.TANGENT,
    "bridge": K.BRIDGE,
}
SEARCH_CAP = 10**6


@dataclass(frozen=True)
class Tail:
    """Behaviour as z -> inf: ``exponential`` means l(z) ~ a exp(-b z),
    ``polynomial`` means -l'(z) ~ a z^(-b)."""

    kind: str
    a: float = float("nan")
    b: float = float("nan")

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    piece: str
    params: tuple

    def __post_init__(self):
        if self.piece not in PIECE_PARAMS:
            raise ParameterError(f"unknown piece tag {self.piece!r}")
        if len(self.params) != len(PIECE_PARAMS[self.piece]):
            raise ParameterError(f"piece {self.piece!r} takes {PIECE_PARAMS[self.piece]}")
        if not self.lo < self.hi:
            raise ParameterError(f"empty segment [{self.lo}, {self.hi})")

    def curvature_bound(self):
        """Supremum of l'' over the segment (in closed form)."""
        p, lo, hi = self.params, self.lo, self.hi
        if self.piece == "exponential":
            return math.inf if lo == -math.inf else p[0] * p[1] ** 2 * math.exp(-p[1] * lo)
        if self.piece == "power":
            return p[0] * p[1] * (p[1] + 1.0) * (lo + p[2]) ** (-p[1] - 2.0)
        if self.piece == "quadratic":
            return 2.0 * p[2]
        if self.piece == "recip_primitive":
            return p[0] * p[1] * lo ** (-p[1] - 1.0)
        if self.piece == "logistic":
            return 0.25
        if self.piece == "bridge":
            return (math.exp(p[2]) - math.exp(p[3])) / (p[1] - p[0])
        return 0.0

    def to_dict(self):
        return {
            "lo": repr(float(self.lo)),
            "hi": repr(float(self.hi)),
            "piece": self.piece,
            "params": dict(zip(PIECE_PARAMS[self.piece], self.params)),
        }

    @classmethod
    def from_dict(cls, d):
        names = PIECE_PARAMS[d["piece"]]
        return cls(float(d["lo"]), float(d["hi"]), d["piece"],
                   tuple(float(d["params"][k]) for k in names))


class Loss:
    """Piecewise closed-form loss with a certified smoothness constant.

    Instances are immutable after construction and can be shared freely.
    ``spec`` holds the constructor call that rebuilds the loss (``None`` for
    hand-assembled segment tables); ``info`` carries construction metadata
    such as switch locations.
    """

    def __init__(self, segments, tail, name="composite", spec=None, info=None):
        segments = tuple(segments)
        if not segments:
            raise ParameterError("a loss needs at least one segment")
        if segments[0].lo != -math.inf or segments[-1].hi != math.inf:
            raise ParameterError("segments must cover the whole real line")
        for left, right in zip(segments, segments[1:]):
            if left.hi != right.lo:
                raise ParameterError(f"gap or overlap at {left.hi} / {right.lo}")
        self.segments = segments
        self.tail = tail
        self.name = name
        self.spec = spec
        self.info = dict(info or {})
        self.breakpoints = np.array([s.lo for s in segments[1:]], dtype=float)
        self._kinds = np.array([PIECE_CODES[s.piece] for s in segments], dtype=np.int64)
        params = np.zeros((len(segments), K.NPARAMS))
        for k, s in enumerate(segments):
            params[k, :len(s.params)] = s.params
        self._params = params
        self.smoothness = max(s.curvature_bound() for s in segments)
        for arr in (self.breakpoints, self._kinds, self._params):
            arr.setflags(write=False)

    def __repr__(self):
        return f"Loss({self.name}, segments={len(self.segments)}, beta={self.smoothness:g})"

    @property
    def table(self):
        return self.breakpoints, self._kinds, self._params

    @property
    def strictly_convex(self):
        """True when l'' > 0 everywhere (no affine or flat-curvature pieces)."""
        return all(s.piece not in ("affine", "tangent") for s in self.segments) and all(
            not (s.piece == "bridge" and s.params[2] == s.params[3]) for s in self.segments)

    def smoothness_on(self, z_min):
        """Lipschitz constant of l' restricted to [z_min, inf)."""
        best = 0.0
        for s in self.segments:
            if s.hi <= z_min:
                continue
            lo = max(s.lo, z_min)
            best = max(best, Segment(lo, s.hi, s.piece, s.params).curvature_bound())
        return best

    def _as_array(self, z):
        return np.ascontiguousarray(np.atleast_1d(np.asarray(z, dtype=float)))

    def evaluate(self, z):
        """(value, first derivative, second derivative) as float64 arrays."""
        zz = self._as_array(z)
        return K.eval_plain(zz, self.breakpoints, self._kinds, self._params)

    def evaluate_log(self, z):
        """(log l, log(-l'), log l'') as float64 arrays."""
        zz = self._as_array(z)
        return K.eval_log(zz, self.breakpoints, self._kinds, self._params)

    def _shape(self, z, out):
        return out if np.ndim(z) else float(out[0])

    def value(self, z):
        return self._shape(z, self.evaluate(z)[0])

    __call__ = value

    def deriv(self, z):
        return self._shape(z, self.evaluate(z)[1])

    def second(self, z):
        return self._shape(z, self.evaluate(z)[2])

    def log_value(self, z):
        return self._shape(z, self.evaluate_log(z)[0])

    def log_neg_deriv(self, z):
        return self._shape(z, self.evaluate_log(z)[1])

    def segment_index(self, z):
        return np.searchsorted(self.breakpoints, self._as_array(z), side="right")

    def one_sided(self, k, z, log=False):
        """Evaluate segment ``k``'s formula at ``z`` regardless of its interval."""
        zz = self._as_array(z)
        fn = K.eval_piece_log if log else K.eval_piece_plain
        return fn(self._kinds[k], self._params[k], zz)

    def to_dict(self):
        d = {"kind": self.spec[0], "params": dict(self.spec[1])} if self.spec else {
            "kind": "composite", "params": {}}
        if self.spec is None or self.spec[0] == "oscillating":
            d["segments"] = [s.to_dict() for s in self.segments]
            d["tail"] = self.tail.to_dict()
            d["name"] = self.name
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def loss_from_dict(d):
    """Inverse of :meth:`Loss.to_dict`."""
    kind = d.get("kind")
    params = d.get("params", {})
    builders = {
        "exponential": make_exponential,
        "logistic": make_logistic,
        "poly_tail": make_poly_tail,
        "figure_poly": make_figure_poly,
        "tail_power": make_tail_power,
    }
    if kind in builders:
        return builders[kind](**params)
    if kind == "oscillating":
        return build_oscillating(**params)
    if kind == "composite":
        tail = Tail(**d["tail"])
        segs = [Segment.from_dict(s) for s in d["segments"]]
        return Loss(segs, tail, name=d.get("name", "composite"))
    raise ParameterError(f"unknown loss kind {kind!r}")


def loss_from_json(text):
    return loss_from_dict(json.loads(text))


def _positive(**kw):
    for k, v in kw.items():
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ParameterError(f"{k} must be a positive real, got {v!r}")


def make_exponential(a=1.0, b=1.0):
    _positive(a=a, b=b)
    a, b = float(a), float(b)
    seg = Segment(-math.inf, math.inf, "exponential", (a, b))
    return Loss([seg], Tail("exponential", a, b), name=f"exp(a={a:g},b={b:g})",
                spec=("exponential", {"a": a, "b": b}))


def make_logistic():
    seg = Segment(-math.inf, math.inf, "logistic", ())
    return Loss([seg], Tail("exponential", 1.0, 1.0), name="logistic",
                spec=("logistic", {}))


def make_poly_tail(a, b):
    """The loss a/(b-1) z^(1-b) for z >= 1, extended by its tangent line below 1.

    Here ``-l'(z) = a z^(-b)`` on the tail, so ``b > 1`` is needed for the
    loss itself to be finite.
    """
    _positive(a=a)
    if not (math.isfinite(b) and b > 1):
        raise ParameterError(f"b must exceed 1 (the tail integral diverges otherwise), got {b!r}")
    a, b = float(a), float(b)
    segs = [
        Segment(-math.inf, 1.0, "affine", (a * b / (b - 1.0), -a)),
        Segment(1.0, math.inf, "recip_primitive", (a, b)),
    ]
    return Loss(segs, Tail("polynomial", a, b), name=f"poly_tail(a={a:g},b={b:g})",
                spec=("poly_tail", {"a": a, "b": b}))


def make_tail_power(b):
    """Loss equal to ``z^(-b)`` for ``z >= 1`` (so ``-l' = b z^(-b-1)``).

    This is :func:`make_poly_tail` with ``a = b`` and exponent ``b + 1``; it is
    the family indexed by the loss exponent used in the margin-scaling runs.
    """
    _positive(b=b)
    loss = make_poly_tail(float(b), float(b) + 1.0)
    loss.name = f"tail_power(b={b:g})"
    loss.spec = ("tail_power", {"b": float(b)})
    return loss


def make_figure_poly(p):
    """(1+z)^(-p) for z >= 0 with a quadratic extension for z < 0.

    The quadratic matches value, slope and curvature at 0, so the loss is C^2.
    """
    _positive(p=p)
    p = float(p)
    segs = [
        Segment(-math.inf, 0.0, "quadratic", (1.0, -p, 0.5 * p * (p + 1.0))),
        Segment(0.0, math.inf, "power", (1.0, p, 1.0)),
    ]
    return Loss(segs, Tail("polynomial", p, p + 1.0), name=f"figure_poly(p={p:g})",
                spec=("figure_poly", {"p": p}))


# -- tail switching -------------------------------------------------------------

@dataclass
class SpliceResult:
    """A convex 2-smooth bridge between two tails on ``[lower, upper]``.

    ``derivative_pieces`` lists ``(z0, z1, slope0, slope1)``: the bridge's
    derivative is linear from ``slope0`` at ``z0`` to ``slope1`` at ``z1``.
    ``segments`` are the loss pieces on ``[lower, upper)`` ready to splice into
    a table.
    """

    lower: float
    upper: float
    c_switch: float
    derivative_pieces: list
    segments: list
    integral: float
    required_gap: float
    direction: str = "exp_to_recip"

    @property
    def gap_residual(self):
        return abs(self.integral - self.required_gap)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, np.nan)
        for z0, z1, s0, s1 in self.derivative_pieces:
            m = (z >= z0) & (z <= z1)
            out[m] = s0 + (s1 - s0) * (z[m] - z0) / (z1 - z0)
        return out


def _smallest_integer(cond, start, what):
    c = start
    for _ in range(SEARCH_CAP):
        if cond(c):
            return c
        c += 1
    raise ImplicitPathsError(f"no admissible {what} within {SEARCH_CAP} integers of {start}")


def _exp_recip_condition(c0, c1):
    e = math.exp(-c0)
    lhs = 1.0 / c1 + (c1 - c0) / c1**2 + 0.5 * e - 0.5 / c1**2
    return lhs < e and c1 > c0 + 1.5


def _recip_exp_condition(c0, c2):
    e = math.exp(-c2)
    rhs = e - e * (c0 - c2) + 0.5 / c0**2 - 0.5 * e
    return 1.0 / c0 > rhs and c2 > 2.0 * c0 + 1.0


def splice_exp_to_recip(C0):
    """Bridge from ``exp(-z)`` on ``(.., C0]`` to ``1/z`` on ``[C1, ..)``.

    ``C1`` is the smallest integer from ``ceil(C0) + 2`` on that satisfies the
    switching inequalities.  The derivative is ``-e^{-C0}`` up to the crossing
    point ``C`` of the two tangent-type lines, ramps linearly to ``-1/C1^2`` on
    ``[C, C+1]`` and stays there until ``C1``.
    """
    if not (math.isfinite(C0) and C0 >= 1):
        raise ParameterError(f"C0 must be >= 1, got {C0!r}")
    C0 = float(C0)
    e = math.exp(-C0)
    start = math.ceil(C0) + 2
    # the admissible integers form an up-set whose boundary is close to
    # 1/x_root; the linear search starts just below it
    h = C0 + 0.5
    x_root = (2.0 - math.sqrt(4.0 - 2.0 * h * e)) / (2.0 * h)
    if x_root <= 0 or 1.0 / x_root > start + SEARCH_CAP:
        raise ImplicitPathsError(f"no admissible C1 within {SEARCH_CAP} integers of {start}")
    jump = max(start, int(math.floor(1.0 / x_root)) - 2)
    cond = lambda c: _exp_recip_condition(C0, c)
    C1 = _smallest_integer(cond, jump, "C1")
    if C1 - start > SEARCH_CAP or (C1 > start and cond(C1 - 1)):
        raise ImplicitPathsError(f"C1 search for C0={C0} left its admissible range")
    C1 = float(C1)

    inv = 1.0 / C1
    dr = inv * inv
    C = (2.0 * inv - 0.5 * dr - 0.5 * e - e * C0) / (dr - e)
    if not (C0 < C < C1 - 1.0):
        raise ImplicitPathsError(f"crossing point {C} outside ({C0}, {C1 - 1})")

    v_right = inv + (C1 - C - 1.0) * dr        # value at C + 1
    v_mid = v_right + 0.5 * (e + dr)            # value at C
    segs = [
        Segment(C0, C, "tangent", (C, math.log(v_mid), -C0)),
        Segment(C, C + 1.0, "bridge", (C, C + 1.0, -C0, math.log(dr), math.log(v_right))),
        Segment(C + 1.0, C1, "tangent", (C1, math.log(inv), math.log(dr))),
    ]
    integral = -(e * (C - C0) + 0.5 * (e + dr) + dr * (C1 - C - 1.0))
    pieces = [(C0, C, -e, -e), (C, C + 1.0, -e, -dr), (C + 1.0, C1, -dr, -dr)]
    return SpliceResult(C0, C1, C, pieces, segs, integral, inv - e, "exp_to_recip")


def splice_recip_to_exp(C0):
    """Bridge from ``1/z`` on ``(.., C0]`` to ``exp(-z)`` on ``[C2, ..)``.

    Mirror image of :func:`splice_exp_to_recip`; ``C2 > 2 C0 + 1``.  The
    exponential side is handled through log-magnitudes so that very large
    ``C2`` (where ``exp(-C2)`` underflows) is still exact.
    """
    if not (math.isfinite(C0) and C0 >= 1):
        raise ParameterError(f"C0 must be >= 1, got {C0!r}")
    C0 = float(C0)
    start = max(math.ceil(C0) + 2, math.floor(2.0 * C0 + 1.0) + 1)
    C2 = float(_smallest_integer(lambda c: _recip_exp_condition(C0, c), start, "C2"))

    dl = 1.0 / C0**2
    E = math.exp(-C2)
    Cp = (2.0 / C0 - 0.5 * dl - E * (0.5 + C2)) / (dl - E)
    if not (C0 < Cp < C2 - 1.0):
        raise ImplicitPathsError(f"crossing point {Cp} outside ({C0}, {C2 - 1})")

    log_dl = math.log(dl)
    log_vr = -C2 + math.log(C2 - Cp)   # E * (C2 - C')
    log_vmid = float(np.logaddexp(log_vr, math.log(0.5) + np.logaddexp(log_dl, -C2)))
    segs = [
        Segment(C0, Cp, "tangent", (Cp, log_vmid, log_dl)),
        Segment(Cp, Cp + 1.0, "bridge", (Cp, Cp + 1.0, log_dl, -C2, log_vr)),
        Segment(Cp + 1.0, C2, "tangent", (C2, -C2, -C2)),
    ]
    integral = -(dl * (Cp - C0) + 0.5 * (dl + E) + E * (C2 - Cp - 1.0))
    pieces = [(C0, Cp, -dl, -dl), (Cp, Cp + 1.0, -dl, -E), (Cp + 1.0, C2, -E, -E)]
    return SpliceResult(C0, C2, Cp, pieces, segs, integral, E - 1.0 / C0, "recip_to_exp")


def build_oscillating(B0, n, gamma_bar, switches):
    """Loss that alternates between ``exp(-z)`` and ``1/z`` tails.

    Starts as ``z^2 - z + 1`` on ``z < 0`` and ``exp(-z)`` on ``[0, B0]``.  Each
    of the ``switches`` switches alternates the tail: an odd switch moves to
    ``1/z`` on ``[c_k, d_k]`` with ``d_k = 2 n c_k / gamma_bar``, an even switch
    back to ``exp(-z)`` on ``[a_k, b_k]`` with ``b_k = 2 (a_k + ln n) / gamma_bar``.
    The last tail continues to infinity.  Switch locations are recorded in
    ``loss.info["switches"]``.
    """
    if not (math.isfinite(B0) and B0 >= 1):
        raise ParameterError(f"B0 must be >= 1, got {B0!r}")
    if not (0 < gamma_bar <= 1):
        raise ParameterError(f"gamma_bar must lie in (0, 1], got {gamma_bar!r}")
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive count, got {n!r}")
    if int(switches) != switches or switches < 0:
        raise ParameterError(f"switches must be a nonnegative count, got {switches!r}")
    B0, gamma_bar, n, switches = float(B0), float(gamma_bar), int(n), int(switches)

    segs = [Segment(-math.inf, 0.0, "quadratic", (1.0, -1.0, 1.0))]
    tail_start, end = 0.0, B0
    tail_piece = ("exponential", (1.0, 1.0))
    records = []
    for j in range(1, switches + 1):
        segs.append(Segment(tail_start, end, *tail_piece))
        if j % 2 == 1:
            sp = splice_exp_to_recip(end)
            c = sp.upper
            d = 2.0 * n * c / gamma_bar
            records.append({"k": (j + 1) // 2, "tail": "recip", "c": c, "d": d,
                            "bridge_from": end, "C": sp.c_switch})
            tail_start, end = c, d
            tail_piece = ("power", (1.0, 1.0, 0.0))
        else:
            sp = splice_recip_to_exp(end)
            a = sp.upper
            b = 2.0 * (a + math.log(n)) / gamma_bar
            records.append({"k": j // 2, "tail": "exp", "a": a, "b": b,
                            "bridge_from": end, "C": sp.c_switch})
            tail_start, end = a, b
            tail_piece = ("exponential", (1.0, 1.0))
        segs.extend(sp.segments)
    segs.append(Segment(tail_start, math.inf, *tail_piece))
    tail = Tail("exponential", 1.0, 1.0) if tail_piece[0] == "exponential" else Tail(
        "polynomial", 1.0, 2.0)
    spec = ("oscillating", {"B0": B0, "n": n, "gamma_bar": gamma_bar, "switches": switches})
    return Loss(segs, tail, name=f"oscillating(K={switches})", spec=spec,
                info={"B0": B0, "n": n, "gamma_bar": gamma_bar, "switches": records})


# -- validation -----------------------------------------------------------------

@dataclass
class ValidationReport:
    declared_beta: float
    measured_beta: float
    convexity_violations: list = field(default_factory=list)
    monotonicity_violations: list = field(default_factory=list)
    continuity: list = field(default_factory=list)
    continuity_violations: list = field(default_factory=list)
    smoothness_violations: list = field(default_factory=list)
    tends_to_zero: bool = True
    n_points: int = 0

    @property
    def violations(self):
        out = [("convexity", v) for v in self.convexity_violations]
        out += [("monotonicity", v) for v in self.monotonicity_violations]
        out += [("continuity", v) for v in self.continuity_violations]
        out += [("smoothness", v) for v in self.smoothness_violations]
        if not self.tends_to_zero:
            out.append(("limit", "l(z) does not decrease towards 0 at the largest probe"))
        return out

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "ok": self.ok,
            "declared_beta": self.declared_beta,
            "measured_beta": self.measured_beta,
            "n_points": self.n_points,
            "violations": [[k, repr(v)] for k, v in self.violations],
            "continuity": self.continuity,
        }


def _probe_grid(loss, grid):
    lo, hi, num = grid
    pts = [np.linspace(lo, hi, int(num))]
    bps = loss.breakpoints[np.isfinite(loss.breakpoints)]
    top = max(hi, float(bps.max()) * 4.0 if bps.size else hi)
    if top > max(hi, 1.0):
        pts.append(np.geomspace(max(hi, 1.0), top, 2000))
    for b in bps:
        eps = 1e-6 * max(1.0, abs(b))
        pts.append(b + np.array([-eps, -eps / 10, 0.0, eps / 10, eps]))
        pts.append(np.linspace(b - 0.5, b + 1.5, 41))
    z = np.unique(np.concatenate(pts))
    return z[np.isfinite(z)]


def validate(loss, grid=(-10.0, 10.0, 10_000), tol=1e-12, log_tol=1e-9, max_report=20):
    """Check convexity, strict decrease, C^1 joins and the declared smoothness.

    Violations are returned as data; nothing is raised.
    """
    if int(grid[2]) < 2:
        raise ParameterError("grid needs at least two points")
    z = _probe_grid(loss, grid)
    v, d1, _ = loss.evaluate(z)
    lv, lnd1, _ = loss.evaluate_log(z)
    dz = np.diff(z)
    rep = ValidationReport(declared_beta=loss.smoothness, measured_beta=0.0, n_points=z.size)

    bad = np.nonzero((d1[:-1] > d1[1:] + tol) | (lnd1[1:] > lnd1[:-1] + log_tol * (1 + np.abs(lnd1[:-1]))))[0]
    rep.convexity_violations = [(z[i], z[i + 1], d1[i], d1[i + 1]) for i in bad[:max_report]]
    # strict decrease is certified by l' < 0; adjacent probes can sit one ulp
    # apart, so the value sequence itself is only required not to increase
    # (the log domain is authoritative where float64 values underflow)
    nonneg = ~(d1 <= 0) | ~(v >= 0) | ~np.isfinite(lv) | ~np.isfinite(lnd1)
    rises = (v[1:] > v[:-1] + tol * np.abs(v[:-1])) | (lv[1:] > lv[:-1] + 1e-15 * (1 + np.abs(lv[:-1])))
    mono = np.nonzero(rises | nonneg[1:] | nonneg[:-1])[0]
    rep.monotonicity_violations = [(z[i], z[i + 1], v[i], v[i + 1]) for i in mono[:max_report]]

    slopes = np.abs(np.diff(d1)) / dz
    rep.measured_beta = float(np.nanmax(slopes)) if slopes.size else 0.0
    if rep.measured_beta > loss.smoothness * (1 + 1e-9) + 1e-9:
        worst = int(np.nanargmax(slopes))
        rep.smoothness_violations.append((z[worst], z[worst + 1], rep.measured_beta))

    for k, b in enumerate(loss.breakpoints):
        arr = np.array([b])
        vl, dl, _ = loss.one_sided(k, arr)
        vr, dr, _ = loss.one_sided(k + 1, arr)
        lvl, lndl, _ = loss.one_sided(k, arr, log=True)
        lvr, lndr, _ = loss.one_sided(k + 1, arr, log=True)
        entry = {
            "z": float(b),
            "value": float(abs(vl[0] - vr[0])),
            "deriv": float(abs(dl[0] - dr[0])),
            "log_value": float(abs(lvl[0] - lvr[0])),
            "log_deriv": float(abs(lndl[0] - lndr[0])),
        }
        rep.continuity.append(entry)
        if (entry["value"] > tol or entry["deriv"] > tol or entry["log_value"] > log_tol
                or entry["log_deriv"] > log_tol or not all(map(math.isfinite, entry.values()))):
            rep.continuity_violations.append(entry)

    zstar = 1e300
    lz = loss.evaluate_log(np.array([zstar / 2.0, zstar]))[0]
    rep.tends_to_zero = bool(lz[1] < lz[0])
    return rep
