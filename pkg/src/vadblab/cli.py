"""Command-line entry point: ``vadblab <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .families import (
    DOMINATES_BACKGROUND, PROFILE_IDS, background_spec, family_domain, family_spec, resolve_params,
    sample_metric,
)
from .flat import MODES, epsilon_for, good_set, vadb_report
from .geometry import (
    boundary_area, boundary_lp_distance, distance_matrix, dominance_check, estimate_diameter,
    lp_metric_distance, stratified_samples, volume, weighted_graph,
)
from .mesh import build_grid_mesh
from . import experiments, report

log = logging.getLogger("vadblab")

# family parameters that may be given as flags or config keys
PARAM_KEYS = ("h0", "eta", "mass", "n", "r", "r0", "domain", "boundary_cinches", "inner")
# graph-class constants; accepted and echoed, gamma and depth feed the pmt bounds
CLASS_KEYS = ("gamma", "alpha", "Lambda", "depth")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _common(p: argparse.ArgumentParser, *, family_default="flat"):
    p.add_argument("--family", choices=PROFILE_IDS, default=family_default)
    p.add_argument("--domain", help="domain for the flat family (cylinder, torus, square, strip, cap)")
    p.add_argument("--j", type=_int_list, default=None, help="sequence indices, e.g. 4,8,16")
    p.add_argument("--res", type=_int_list, default=None,
                   help="nodes per coordinate: one value for all axes or one per axis")
    p.add_argument("--stencil", type=int, default=3, help="stencil radius")
    p.add_argument("--samples", type=int, default=512, help="stratified sample count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="Dijkstra worker processes (default: VADB_WORKERS or 1)")
    p.add_argument("--kappa", type=float, default=4.0)
    p.add_argument("--volume-tol", type=float, default=1e-4, dest="volume_tol")
    p.add_argument("--h0", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--mass", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--r0", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--Lambda", type=float)
    p.add_argument("--depth", type=float)
    p.add_argument("--config", help="JSON file whose keys override the flags")
    p.add_argument("--out", help="output directory (CSV, summary.txt, config.json)")
    p.add_argument("--strict", action="store_true", help="exit 1 when a hypothesis check fails")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vadblab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geom", help="volume, diameter, distances and norms of one metric")
    _common(p)

    p = sub.add_parser("dominance", help="smallest eigenvalue of g_j - g_0 per j")
    _common(p)
    p.add_argument("--slack", action="store_true", help="compare against (1 - 1/j) g_0")

    p = sub.add_parser("double", help="build the doubled manifold and verify the neck")
    _common(p, family_default="single-ridge")
    p.add_argument("--delta", type=_float_list, default=[0.1, 0.05, 0.025])
    p.add_argument("--distances", action="store_true",
                   help="also compare sampled distances with the doubled space")

    p = sub.add_parser("good-set", help="good set of sampled points for one j")
    _common(p)
    p.add_argument("--eps", type=float, default=None)

    p = sub.add_parser("flat-bound", help="hypothesis report and flat-distance bound per j")
    _common(p)
    p.add_argument("--mode", choices=MODES, default="boundary-norm")

    p = sub.add_parser("example", help="family experiments")
    ex = p.add_subparsers(dest="action", required=True)
    _common(ex.add_parser("run", help="run one family's example"))

    p = sub.add_parser("pmt", help="Schwarzschild graph experiment")
    pm = p.add_subparsers(dest="action", required=True)
    q = pm.add_parser("run", help="volume excess and bounds over a mass list")
    _common(q, family_default="pmt-graph")
    q.add_argument("--masses", type=_float_list, default=[0.1, 0.05, 0.01])
    return parser


def _apply_config(args, parser):
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {args.config}: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("--config: expected a JSON object")
    known = vars(args)
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "action", "config") or dest not in known:
            raise UsageError(f"--config: unknown key {key!r}")
        if dest in ("j", "res") and not isinstance(val, list):
            val = [val]
        setattr(args, dest, val)


def _params(args) -> dict:
    out = {}
    for k in PARAM_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _resolution(args, family, params, default):
    res = args.res if args.res is not None else default
    if isinstance(res, int):
        res = [res]
    dim = family_domain(family, params, res[0]).dim
    if len(res) == 1:
        return tuple(res) * dim
    if len(res) != dim:
        raise UsageError(f"--res: expected 1 or {dim} values for {family}, got {len(res)}")
    return tuple(int(x) for x in res)


def _config_echo(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    return cfg


def _fmt(v):
    return report.format_value(v)


def cmd_geom(args):
    fam = args.family
    params = _params(args)
    res = _resolution(args, fam, params, [64])
    j = (args.j or [1])[0]
    mesh = build_grid_mesh(family_domain(fam, params, res), res, args.stencil)
    g = sample_metric(family_spec(fam, j, params, res), mesh)
    g0 = sample_metric(background_spec(fam, params, res), mesh)
    samples = stratified_samples(mesh, args.samples, args.seed)
    graph = weighted_graph(g)
    dj = distance_matrix(g, samples, args.workers, graph=graph)
    d0 = distance_matrix(g0, samples, args.workers)
    vol = volume(g, refine_tol=args.volume_tol or None)
    diam = max(float(dj.distances.max()), estimate_diameter(g, graph=graph))
    has_bdry = bool(mesh.component_faces)
    m = mesh.dim
    row = {"family": fam, "j": j, "vol": vol, "diam": diam,
           "bdry_area": boundary_area(g) if has_bdry else 0.0,
           "bdry_norm": boundary_lp_distance(g, g0, g0, (m - 1) / 2.0) if has_bdry else 0.0,
           "interior_norm": lp_metric_distance(g, g0, g0, m / 2.0) if m >= 2 else float("nan")}
    cols = tuple(row)
    lines = [f"{k} = {_fmt(row[k])}" for k in cols]
    lines.append(f"vertices = {mesh.n_vertices}, edges = {len(mesh.edges.src)}, seed = {args.seed}")
    extra = {"distances": report.rows_to_csv(report.DISTANCE_HEADER, report.distance_rows(d0, dj))}
    return "geom", report.rows_to_csv(cols, [row]), lines, True, extra


def cmd_dominance(args):
    fam = args.family
    params = _params(args)
    res = _resolution(args, fam, params, [64])
    mesh = build_grid_mesh(family_domain(fam, params, res), res, args.stencil)
    g0 = sample_metric(background_spec(fam, params, res), mesh)
    rows, ok = [], True
    for j in sorted(args.j or [4, 8, 16, 32]):
        gj = sample_metric(family_spec(fam, j, params, res), mesh)
        lower = g0
        if args.slack:
            from .geometry import MetricField
            lower = MetricField(mesh, (1.0 - 1.0 / j) * g0.values, check=False)
        rep = dominance_check(lower, gj, 0.0)
        ok &= rep.passed
        rows.append({"j": j, "dominance_pass": rep.passed, "min_eigenvalue": rep.min_eigenvalue,
                     "violations": int(rep.violations)})
    lines = [f"j={r['j']} min_eigenvalue={_fmt(r['min_eigenvalue'])} "
             f"{'PASS' if r['dominance_pass'] else 'FAIL'}" for r in rows]
    lines.append(f"expected dominance for {fam}: {DOMINATES_BACKGROUND[fam]}")
    return "dominance", report.rows_to_csv(("j", "dominance_pass", "min_eigenvalue", "violations"),
                                           rows), lines, ok, {}


def cmd_double(args):
    fam = args.family
    params = _params(args)
    res = _resolution(args, fam, params, [33]) if args.res is not None else None
    j = (args.j or [None])[0]
    rep = experiments.doubling_run(fam, args.delta, resolution=res, j=j, params=params,
                                   stencil_radius=min(args.stencil, 2))
    extra = {}
    lines = [f"delta={_fmt(r['delta'])} C={_fmt(r['C'])} eta={_fmt(r['eta'])} "
             f"max_deviation={_fmt(r['max_deviation'])} bound={_fmt(r['deviation_bound'])} "
             f"mirror={_fmt(r['mirror_exact'])}" for r in rep.rows]
    ok = rep.passed
    if args.distances:
        drep = experiments.doubled_distance_run(fam, args.delta, j=j or 4,
                                                resolution=res or (65, 64),
                                                n_samples=min(args.samples, 100), seed=args.seed,
                                                params=params, stencil_radius=args.stencil)
        extra["doubled_distances"] = report.rows_to_csv(drep.columns, drep.rows)
        lines += [f"delta={_fmt(r['delta'])} max|d - d_doubled|={_fmt(r['max_difference'])} "
                  f"bound+slack={_fmt(r['bound'] + r['slack'])}" for r in drep.rows]
        lines += [_observable_line(o) for o in drep.observables[-1:]]
        ok &= drep.passed
    return "double", report.rows_to_csv(rep.columns, rep.rows), lines, ok, extra


def cmd_good_set(args):
    fam = args.family
    params = _params(args)
    res = _resolution(args, fam, params, [64])
    j = (args.j or [8])[0]
    mesh = build_grid_mesh(family_domain(fam, params, res), res, args.stencil)
    g0 = sample_metric(background_spec(fam, params, res), mesh)
    gj = sample_metric(family_spec(fam, j, params, res), mesh)
    samples = stratified_samples(mesh, args.samples, args.seed)
    d0 = distance_matrix(g0, samples, args.workers)
    dj = distance_matrix(gj, samples, args.workers)
    eps = args.eps
    if eps is None:
        eps = epsilon_for(d0, float(d0.distances.max()) / 16.0, args.kappa)
    gs = good_set(d0, dj, eps, args.kappa)
    lines = [f"eps = {_fmt(gs.eps)}", f"kappa = {_fmt(gs.kappa)}", f"delta = {_fmt(gs.delta)}",
             f"good set size = {int(gs.mask.sum())} of {gs.mask.size}",
             f"sup discrepancy = {_fmt(gs.sup_discrepancy)}",
             f"sup excess = {_fmt(gs.sup_excess)}",
             f"excluded volume = {_fmt(gs.excluded_volume)}", f"seed = {args.seed}"]
    csv_text = report.rows_to_csv(report.DISTANCE_HEADER, report.distance_rows(d0, dj))
    return "good_set", csv_text, lines, True, {}


def cmd_flat_bound(args):
    fam = args.family
    params = _params(args)
    res = _resolution(args, fam, params, [64])
    fr = vadb_report(fam, args.j or [4, 8, 16, 32], res, args.mode, params=params,
                     n_samples=args.samples, seed=args.seed, kappa=args.kappa,
                     stencil_radius=args.stencil, workers=args.workers,
                     volume_tol=args.volume_tol or None)
    lines = [f"D = {_fmt(fr.D)}", f"V = {_fmt(fr.V)}", f"A = {_fmt(fr.A)}", f"Vol0 = {_fmt(fr.vol0)}"]
    lines += [f"j={r.j} flat_bound={_fmt(r.flat_bound)}" for r in fr.rows]
    lines += [f"{k}: {'PASS' if v else 'FAIL'}" for k, v in fr.hypotheses.items()]
    csv_text = report.rows_to_csv(report.report_columns(), report.flat_report_rows(fr))
    return "flat_bound", csv_text, lines, fr.passed, {}


def _observable_line(o):
    where = f" j={o.j}" if o.j is not None else ""
    return (f"{'PASS' if o.passed else 'FAIL'} {o.name}{where}: value={_fmt(o.value)} "
            f"target={_fmt(o.target)} ({o.comparison}, tol={_fmt(o.tolerance)}; {o.source})")


def cmd_example(args):
    fam = args.family
    params = _params(args)
    res = _resolution(args, fam, params, [128])
    rep = experiments.run_example(fam, args.j or [4, 8], res, params=params, n_samples=args.samples,
                                  seed=args.seed, stencil_radius=args.stencil, workers=args.workers,
                                  kappa=args.kappa, volume_tol=args.volume_tol or None)
    lines = [_observable_line(o) for o in rep.observables]
    if rep.flat_report is not None:
        lines += [f"{k}: {'PASS' if v else 'FAIL'}" for k, v in rep.flat_report.hypotheses.items()]
    return "example", report.rows_to_csv(rep.columns, rep.rows), lines, rep.passed, {}


def cmd_pmt(args):
    n = args.n or 3
    if n not in (3, 4):
        raise UsageError("--n: must be 3 or 4")
    default = [24, 16, 32] if n == 3 else [12, 8, 8, 12]
    res = args.res if args.res is not None else default
    if len(res) == 1:
        res = res * n
    if len(res) != n:
        raise UsageError(f"--res: expected 1 or {n} values")
    rep = experiments.pmt_graph_run(n, args.masses, args.r or 1.0, args.r0 or 0.5, args.gamma,
                                    args.depth, resolution=tuple(res),
                                    stencil_radius=args.stencil)
    lines = [_observable_line(o) for o in rep.observables]
    return "pmt", report.rows_to_csv(rep.columns, rep.rows), lines, rep.passed, {}


COMMANDS = {"geom": cmd_geom, "dominance": cmd_dominance, "double": cmd_double,
            "good-set": cmd_good_set, "flat-bound": cmd_flat_bound, "example": cmd_example,
            "pmt": cmd_pmt}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(args, parser)
        if args.family not in PROFILE_IDS:
            raise UsageError(f"--family: unknown family {args.family!r}")
        if args.family != "pmt-graph" or args.command != "pmt":
            resolve_params(args.family, _params(args))
        log.info("command=%s seed=%d", args.command, args.seed)
        name, csv_text, lines, ok, extra = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vadblab: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"vadblab: error: {exc}", file=sys.stderr)
        return 2
    status = "PASS" if ok else "FAIL"
    lines = list(lines) + [f"overall: {status}"]
    try:
        _emit(args, name, csv_text, lines, extra)
    except BrokenPipeError:
        # reader closed early (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    if args.strict and not ok:
        return 1
    return 0


def _emit(args, name, csv_text, lines, extra):
    if args.out:
        out = report.write_outputs(args.out, name, csv_text, lines, _config_echo(args))
        for key, text in extra.items():
            (out / f"{key}.csv").write_text(text)
        print(report.summary_text(lines), end="")
        print(f"wrote {out}")
    else:
        print(report.summary_text(lines), end="")
        print()
        print(csv_text, end="")


if __name__ == "__main__":
    sys.exit(main())
