"""Command-line front end: map specifications in, JSON reports and plot-ready data out."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MultRigidError
from .inducing import induce
from .markov import DensityGrid, invariant_density, unimodal_two_branch
from .periodic import orbit_table
from .rigidity import RunConfig, normalize, rigidity_test
from .unimodal import attractor_interval, itinerary, map_from_spec, membership_check

log = logging.getLogger("multrigid")


class InputError(Exception):
    """Unreadable or invalid input file; the message names the file and the offending field."""


# ---------------------------------------------------------------- input

def load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_map(path):
    try:
        return map_from_spec(load_json(path))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def load_config(path, overrides):
    data = {} if path is None else load_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be an object")
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise InputError(f"{path}: unknown field '{key}'")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {exc}") from None


# ---------------------------------------------------------------- output

def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def columns_text(header, *cols):
    lines = [f"# {h}" for h in header]
    for row in zip(*cols):
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


class Sink:
    """Writes named outputs into the --out directory, or the primary one to stdout."""

    def __init__(self, out):
        self.out = Path(out) if out else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)

    def emit(self, name, text, primary=False):
        if self.out:
            (self.out / name).write_text(text)
        elif primary:
            sys.stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_analyze(args):
    f = load_map(args.map)
    rep = membership_check(f)
    out = {"map": f.to_record(), "membership": rep.as_dict(), "critical_point": f.critical_point}
    try:
        out["attractor_interval"] = list(attractor_interval(f))
    except MultRigidError as exc:
        out["attractor_interval"] = None
        out["attractor_error"] = str(exc)
    orbit, x = [], f.critical_point
    for _ in range(args.orbit_length):
        x = float(f(np.asarray(x)))
        orbit.append(x)
    out["critical_orbit"] = orbit
    out["critical_itinerary"] = itinerary(f, f.critical_value, args.orbit_length)
    Sink(args.out).emit("analyze.json", dumps(out), primary=True)
    return 0


def orbit_rows(f, max_period):
    return sorted(orbit_table(f, max_period), key=lambda o: (o.period, o.word))


def orbits_csv(rows):
    lines = ["word,period,points,multiplier"]
    for o in rows:
        pts = ";".join(repr(float(p)) for p in o.points)
        lines.append(f"{o.word},{o.period},{pts},{float(o.multiplier)!r}")
    return "\n".join(lines) + "\n"


def cmd_orbits(args):
    f = load_map(args.map)
    Sink(args.out).emit("orbits.csv", orbits_csv(orbit_rows(f, args.max_period)), primary=True)
    return 0


def _induced(f, args):
    return induce(f, center=args.center, max_period=args.window_period,
                  max_time=args.max_time, coverage_target=args.coverage)


def _markov(f, args):
    if args.presentation == "two-branch":
        return unimodal_two_branch(f)
    return _induced(f, args).F


def cmd_induce(args):
    f = load_map(args.map)
    ind = _induced(f, args)
    Sink(args.out).emit("induce.json", dumps({"map": f.to_record(), **ind.as_dict()}), primary=True)
    return 0


def density_text(d, label):
    rho = d.density
    header = [
        f"invariant density ({label}); cell centre, cell average",
        f"residual {d.residual!r} iterations {d.iterations} converged {d.converged} leak {d.leak!r}",
        "x rho",
    ]
    return columns_text(header, rho.nodes, rho.values)


def cmd_density(args):
    f = load_map(args.map)
    F = _markov(f, args)
    d = invariant_density(F, args.grid, tol=args.tol)
    Sink(args.out).emit("density.dat", density_text(d, args.presentation), primary=True)
    return 0 if d.converged else 3


def branch_table(F0):
    lines = ["# normalized branches: index, domain_lo, domain_hi, orientation", "index,lo,hi,orientation"]
    for i, b in enumerate(F0.branches):
        lines.append(f"{i},{float(b.domain.lo)!r},{float(b.domain.hi)!r},{b.orientation}")
    return "\n".join(lines) + "\n"


def map_samples_text(F0, label, n=2001):
    y = np.linspace(-1.0, 1.0, n)
    k = F0.locate(y)
    v = np.full(n, np.nan)
    for i in np.unique(k[k >= 0]):
        v[k == i] = F0.branches[int(i)](y[k == i])
    keep = np.isfinite(v)
    return columns_text([f"{label} on a uniform grid (gaps omitted)", "y value"], y[keep], v[keep])


def h_samples_text(H, label):
    return columns_text([f"{label}: normalizing distribution map at cell boundaries", "x H(x)"],
                        H.knots, H.values)


def cmd_normalize(args):
    f = load_map(args.map)
    F = _markov(f, args)
    d = invariant_density(F, args.grid, tol=args.tol)
    n = normalize(F, d.density, tol=max(10 * args.tol, 1e-8), check_nodes=args.grid)
    sink = Sink(args.out)
    report = {"input_residual": n.input_residual, "uniform_residual": n.uniform_residual,
              "branches": len(n.F0.branches), "presentation": args.presentation}
    sink.emit("normalize.json", dumps(report), primary=True)
    sink.emit("branches.csv", branch_table(n.F0))
    sink.emit("H.dat", h_samples_text(n.H, "H"))
    sink.emit("F0.dat", map_samples_text(n.F0, "F0"))
    return 0


def cmd_rigidity(args):
    f, g = load_map(args.map_f), load_map(args.map_g)
    cfg = load_config(args.config, {
        "grid_nodes": args.grid, "max_period": args.max_period, "max_induce_time": args.max_time,
        "coverage_target": args.coverage, "verdict_tol": args.tol, "threads": args.threads,
        "window_center": args.center, "seed": args.seed,
    })
    rep = rigidity_test(f, g, cfg)
    out = {"report": rep.as_dict(), "config": asdict(cfg),
           "inputs": {"f": f.to_record(), "g": g.to_record()}, "version": __version__}
    sink = Sink(args.out)
    sink.emit("report.json", dumps(out), primary=True)
    a = rep.artifacts
    mc = rep.stages.get("multipliers")
    if mc:
        lines = ["word,period,multiplier_f,multiplier_g,rel_diff"]
        lines += [f"{r['word']},{r['period']},{float(r['multiplier_f'])!r},{float(r['multiplier_g'])!r},"
                  f"{float(r['rel_diff'])!r}" for r in mc["rows"]]
        sink.emit("multipliers.csv", "\n".join(lines) + "\n")
    for side in ("f", "g"):
        if f"rho_{side}" in a:
            rho = a[f"rho_{side}"]
            sink.emit(f"rho_{side}.dat", columns_text([f"invariant density of the induced map of {side}", "x rho"],
                                                      rho.nodes, rho.values))
        if f"norm_{side}" in a:
            nm = a[f"norm_{side}"]
            sink.emit(f"H_{side}.dat", h_samples_text(nm.H, f"H_{side}"))
            name = "F0" if side == "f" else "G0"
            sink.emit(f"{name}.dat", map_samples_text(nm.F0, name))
        if f"ind_{side}" in a:
            sink.emit(f"induced_{side}.json", dumps(a[f"ind_{side}"].as_dict()))
    if "H" in a:
        H = a["H"]
        sink.emit("conjugacy.dat", columns_text(["conjugacy anchors of the induced maps", "x H(x)"], H.x, H.y))
    if not args.out or args.quiet:
        return rep.exit_code
    print(f"verdict: {rep.verdict} (exit {rep.exit_code})", file=sys.stderr)
    return rep.exit_code


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="multrigid", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", metavar="DIR", help="write outputs into DIR instead of stdout")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    def inducing(sp):
        sp.add_argument("--center", type=float, default=None, help="window centre (default inside A_f)")
        sp.add_argument("--window-period", type=int, default=4, help="max period of window endpoints")
        sp.add_argument("--max-time", type=int, default=25, help="max return time for good intervals")
        sp.add_argument("--coverage", type=float, default=0.99)

    sp = sub.add_parser("analyze", help="membership heuristics, attractor interval, critical orbit")
    sp.add_argument("map")
    sp.add_argument("--orbit-length", type=int, default=16)
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("orbits", help="periodic orbit table as CSV")
    sp.add_argument("map")
    sp.add_argument("--max-period", type=int, default=8)
    common(sp)
    sp.set_defaults(func=cmd_orbits)

    sp = sub.add_parser("induce", help="window search and first-generation induced Markov map")
    sp.add_argument("map")
    inducing(sp)
    common(sp)
    sp.set_defaults(func=cmd_induce)

    for name, func, helptext in (("density", cmd_density, "invariant density as two-column data"),
                                 ("normalize", cmd_normalize, "Lebesgue-preserving normalized map")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("map")
        sp.add_argument("--presentation", choices=("two-branch", "induced"), default="two-branch")
        sp.add_argument("--grid", type=int, default=2048)
        sp.add_argument("--tol", type=float, default=1e-9, help="transfer-operator fixed-point tolerance")
        inducing(sp)
        common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("rigidity", help="full pipeline and verdict for two maps")
    sp.add_argument("map_f")
    sp.add_argument("map_g")
    sp.add_argument("--config", help="JSON file with run configuration fields")
    sp.add_argument("--grid", type=int)
    sp.add_argument("--max-period", type=int)
    sp.add_argument("--max-time", type=int)
    sp.add_argument("--coverage", type=float)
    sp.add_argument("--tol", type=float, help="verdict tolerance on the normalized maps")
    sp.add_argument("--center", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--quiet", action="store_true")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(func=cmd_rigidity)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 64
    except MultRigidError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
