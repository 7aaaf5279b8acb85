"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``), lets flags
override it, writes CSV/JSON reports into the output directory and exits
with 0 (success), 2 (the experiment ran but its verdict is false) or 1
(operational error).
"""
import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as A
from . import data as D
from . import losses as L
from .errors import ImplicitPathsError, InconclusiveError
from .regpath import geometric_grid, solve_path
from .risk import RiskProblem, gd_run

OUT_ENV = "IMPLICIT_PATHS_OUT"
EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2

LOSS_ALIASES = {
    "exp": "exponential",
    "exponential": "exponential",
    "logistic": "logistic",
    "poly": "tail_power",
    "tail_power": "tail_power",
    "poly_tail": "poly_tail",
    "figure_poly": "figure_poly",
    "oscillating": "oscillating",
}

DATA_GENERATORS = {
    "single": lambda seed: D.make_single_point(),
    "two_point": lambda seed: D.make_two_point(),
    "antipodal": lambda seed: D.make_antipodal(),
    "mixed": lambda seed: D.make_mixed(),
    "margin_scaling": lambda seed, n=20: D.make_margin_scaling_dataset(int(n)),
    "clouds": lambda seed: D.make_clouds(seed=seed),
    "random": lambda seed, n=8, d=2: D.random_unit_ball(int(n), int(d), np.random.default_rng(seed)),
}


class ConfigError(ImplicitPathsError):
    pass


def _kv(text):
    """'a=1,b=2.5' -> {'a': 1.0, 'b': 2.5}."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"{key}: {val!r} is not a number") from None
    return out


def parse_loss(spec):
    """Loss from a name (``exp``, ``tail_power:b=2``), a JSON document or a JSON file."""
    if isinstance(spec, dict):
        return L.loss_from_dict(spec)
    text = str(spec).strip()
    if text.startswith("{"):
        try:
            return L.loss_from_json(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"loss JSON: {exc}") from None
    if text.endswith(".json"):
        if not os.path.exists(text):
            raise ConfigError(f"loss file {text} does not exist")
        return L.loss_from_json(Path(text).read_text())
    name, _, rest = text.partition(":")
    kind = LOSS_ALIASES.get(name)
    if kind is None:
        raise ConfigError(f"unknown loss {name!r} (known: {', '.join(sorted(LOSS_ALIASES))})")
    params = _kv(rest)
    if kind == "oscillating":
        params.setdefault("B0", 1.0)
        if "switches" in params:
            params["switches"] = int(params["switches"])
        if "n" in params:
            params["n"] = int(params["n"])
    try:
        return L.loss_from_dict({"kind": kind, "params": params})
    except TypeError as exc:
        raise ConfigError(f"loss {text!r}: {exc}") from None


def parse_data(spec, seed=0):
    """Dataset from a CSV path or a generator spec such as ``margin_scaling:n=20``."""
    text = str(spec).strip()
    if text.endswith(".csv") or os.sep in text:
        if not os.path.exists(text):
            raise ConfigError(f"data file {text} does not exist")
        return D.load_csv(text)
    name, _, rest = text.partition(":")
    gen = DATA_GENERATORS.get(name)
    if gen is None:
        raise ConfigError(f"unknown dataset {name!r} (known: {', '.join(sorted(DATA_GENERATORS))})")
    params = _kv(rest)
    seed = int(params.pop("seed", seed))
    try:
        return gen(seed, **params)
    except TypeError as exc:
        raise ConfigError(f"dataset {text!r}: {exc}") from None


@dataclass
class ExperimentConfig:
    loss: object = "logistic"
    data: str = "margin_scaling:n=20"
    seed: int = 0
    max_steps: int = 100_000
    bmax: float = 2.0**12
    factor: float = 2.0
    tol: float = 1e-8
    angle_tol: float = 0.02
    out: str = ""
    jobs: int = 1
    b: list = field(default_factory=lambda: [1.0, 2.0])
    ns: list = field(default_factory=lambda: [10, 20, 40, 80, 160])
    n: int = 50
    switches: int = 2
    b0: float = 1.0

    def check(self):
        if int(self.max_steps) < 1:
            raise ConfigError("max_steps must be positive")
        for key in ("bmax", "tol", "angle_tol"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"{key} must be a positive number, got {v!r}")
        if not self.factor > 1:
            raise ConfigError("factor must exceed 1")
        if int(self.jobs) < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.out:
            self.out = os.environ.get(OUT_ENV, "results")
        return self


def load_config(args):
    """Merge the JSON config file (if any) with explicit flags; flags win."""
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in known:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return ExperimentConfig(**cfg).check()


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, L.Loss):
        return x.to_dict()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(msg):
    print(msg, flush=True)


# -- subcommands ------------------------------------------------------------------------
# each returns an exit code; with ``dry`` they stop after building their inputs

def cmd_validate_loss(cfg, dry):
    loss = parse_loss(cfg.loss)
    if dry:
        return EXIT_OK
    rep = L.validate(loss)
    out = _outdir(cfg)
    doc = {"loss": loss.to_dict(), **rep.to_dict()}
    _write_json(out / "validation.json", doc)
    _say(f"{loss.name}: {len(rep.violations)} violations")
    return EXIT_OK if rep.ok else EXIT_VERDICT


def cmd_gen_data(cfg, dry):
    ds = parse_data(cfg.data, cfg.seed)
    if dry:
        return EXIT_OK
    out = _outdir(cfg)
    D.save_csv(ds, out / "data.csv")
    _say(f"{ds.name}: n={ds.n}, d={ds.d}")
    return EXIT_OK


def cmd_decompose(cfg, dry):
    ds = parse_data(cfg.data, cfg.seed)
    if dry:
        return EXIT_OK
    dec = D.decompose(ds, jobs=cfg.jobs)
    mm = D.max_margin(ds)
    out = _outdir(cfg)
    _write_json(out / "decomposition.json", {"dataset": ds.name, "max_margin": mm.to_dict(),
                                             **dec.to_dict()})
    _say(f"{ds.name}: |D_s|={len(dec.sc_indices)}, |D_c|={len(dec.comp_indices)}, "
         f"separable={mm.separable}")
    return EXIT_OK


def cmd_gd(cfg, dry):
    loss, ds = parse_loss(cfg.loss), parse_data(cfg.data, cfg.seed)
    p = RiskProblem(loss, ds)
    if dry:
        return EXIT_OK
    trace = gd_run(p, max_steps=cfg.max_steps)
    out = _outdir(cfg)
    trace.to_csv(out / "gd_trace.csv")
    _write_json(out / "gd_summary.json", {
        "loss": loss.to_dict(), "dataset": ds.name, "eta": trace.eta, "steps": trace.steps,
        "status": trace.status, "max_descent_residual": trace.max_residual,
        "final_norm": float(trace.norms[-1]), "final_risk": float(trace.risks[-1])})
    _say(repr(trace))
    return EXIT_OK


def cmd_regpath(cfg, dry):
    loss, ds = parse_loss(cfg.loss), parse_data(cfg.data, cfg.seed)
    p = RiskProblem(loss, ds)
    grid = geometric_grid(1.0, cfg.bmax, cfg.factor)
    if dry:
        return EXIT_OK
    path = solve_path(p, grid, tol=cfg.tol, jobs=cfg.jobs)
    lim = A.limit_direction(path)
    out = _outdir(cfg)
    path.to_csv(out / "regpath.csv")
    _write_json(out / "regpath.json", {
        "loss": loss.to_dict(), "dataset": ds.name, "B_max": float(path.B[-1]),
        "limit_direction": lim.u, "converged": lim.converged, "octave_angles": lim.consecutive,
        "max_residual": max(q.certificate for q in path)})
    _say(f"limit direction {lim.u} (converged={lim.converged})")
    return EXIT_OK


def cmd_compare(cfg, dry):
    loss, ds = parse_loss(cfg.loss), parse_data(cfg.data, cfg.seed)
    p = RiskProblem(loss, ds)
    grid = geometric_grid(1.0, cfg.bmax, cfg.factor)
    if dry:
        return EXIT_OK
    # the two paths are independent jobs; results are merged in a fixed order
    with ThreadPoolExecutor(max_workers=min(cfg.jobs, 2)) as ex:
        fut_gd = ex.submit(gd_run, p, max_steps=cfg.max_steps)
        fut_path = ex.submit(solve_path, p, grid, tol=cfg.tol)
        trace, path = fut_gd.result(), fut_path.result()
    cmp = A.compare_directions(trace, path)
    lim = A.limit_direction(path)
    out = _outdir(cfg)
    trace.to_csv(out / "gd_trace.csv")
    path.to_csv(out / "regpath.csv")
    cmp.to_csv(out / "comparison.csv")
    ok = cmp.final_angle <= cfg.angle_tol
    _write_json(out / "comparison.json", {
        "loss": loss.to_dict(), "dataset": ds.name, **cmp.to_dict(), "angle_tol": cfg.angle_tol,
        "limit_direction": lim.u, "limit_converged": lim.converged, "verdict": ok})
    _say(f"final angle {cmp.final_angle:.3e} at B={cmp.pairs[-1][1]:g} -> {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_margin_scaling(cfg, dry):
    bs = [float(b) for b in cfg.b]
    ns = [int(n) for n in cfg.ns]
    if any(b <= 0 for b in bs) or len(ns) < 4:
        raise ConfigError("need positive --b values and at least 4 --ns values")
    if dry:
        return EXIT_OK
    out = _outdir(cfg)
    ok = True
    for b in sorted(bs):
        rep = A.scaling_experiment(b, ns, B_max=cfg.bmax, tol=cfg.tol, jobs=cfg.jobs)
        tag = f"b{b:g}"
        rep.to_csv(out / f"scaling_{tag}.csv")
        _write_json(out / f"scaling_{tag}.json", rep.to_dict())
        _say(f"b={b:g}: slope {rep.slope:+.4f} (target {rep.target:+.4f} +/- {rep.slope_tol}) "
             f"-> {'ok' if rep.verdict else 'FAIL'}")
        ok &= rep.verdict
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_oscillate(cfg, dry):
    if int(cfg.switches) < 0 or int(cfg.n) < 2:
        raise ConfigError("need n >= 2 and switches >= 0")
    if dry:
        return EXIT_OK
    out = _outdir(cfg)
    try:
        rep = A.oscillation_experiment(cfg.b0, int(cfg.n), int(cfg.switches), tol=cfg.tol,
                                       B_max=cfg.bmax)
        doc = {**rep.to_dict(), "status": "ran"}
    except InconclusiveError as exc:
        doc = {**exc.report.to_dict(), "status": "inconclusive", "message": str(exc)}
        rep = None
    _write_json(out / "oscillation.json", doc)
    _say(f"n={cfg.n}: separation {doc['separation']:.4f}, status {doc['status']}, "
         f"verdict {doc['verdict']}")
    return EXIT_OK if rep is not None and rep.verdict else EXIT_VERDICT


COMMANDS = {
    "decompose": (cmd_decompose, "split a dataset into D_s and D_c"),
    "gd": (cmd_gd, "run gradient descent and record its path"),
    "regpath": (cmd_regpath, "solve the regularization path on a geometric grid"),
    "compare": (cmd_compare, "compare GD and regularization-path directions"),
    "margin-scaling": (cmd_margin_scaling, "margin of the last point against n"),
    "oscillate": (cmd_oscillate, "path of the tail-switching loss"),
    "validate-loss": (cmd_validate_loss, "check the loss invariants"),
    "gen-data": (cmd_gen_data, "write a generated dataset as CSV"),
}


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--loss", help="loss name (exp, logistic, tail_power:b=2, ...), JSON or .json file")
    common.add_argument("--data", help="generator spec (margin_scaling:n=20, clouds, mixed, ...) or CSV path")
    common.add_argument("--seed", type=int)
    common.add_argument("--max-steps", dest="max_steps", type=int)
    common.add_argument("--bmax", type=float)
    common.add_argument("--factor", type=float, help="ratio of consecutive grid radii")
    common.add_argument("--tol", type=float, help="certificate tolerance")
    common.add_argument("--angle-tol", dest="angle_tol", type=float)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    common.add_argument("--jobs", type=int)
    common.add_argument("--dry-run", action="store_true", help="validate the configuration and stop")

    ap = argparse.ArgumentParser(prog="implicit-paths", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "margin-scaling":
            sp.add_argument("--b", type=_floats, help="comma-separated loss exponents")
            sp.add_argument("--ns", type=_ints, help="comma-separated dataset sizes")
        if name == "oscillate":
            sp.add_argument("--n", type=int)
            sp.add_argument("--switches", type=int)
            sp.add_argument("--b0", type=float)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = load_config(args)
        code = fn(cfg, args.dry_run)
        if args.dry_run:
            _say(f"{args.command}: configuration ok")
            _say(json.dumps(asdict(cfg), sort_keys=True, default=_jsonable))
        return code
    except (ImplicitPathsError, ValueError, OSError) as exc:
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
