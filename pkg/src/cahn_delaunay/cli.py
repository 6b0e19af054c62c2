"""Command-line front end.

Every subcommand reads the same INI config (``--config``); ``--tau`` and
``--eps`` override the lists from the file. The exit status is 0 exactly
when every check in scope passed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline

log = logging.getLogger("cahn_delaunay")

# kept in step with plots.PLOT_KINDS (checked by the tests)
PLOT_KINDS = ("curves", "discriminants", "profile", "interface", "bands")


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.defaults()
    sections = cfg.as_dict()
    if getattr(args, "tau", None):
        sections["run"]["tau_list"] = args.tau
    if getattr(args, "eps", None):
        sections["run"]["epsilon_list"] = args.eps
    # re-validate overrides through the schema
    return config_mod.parse(config_mod.dump(config_mod.RunConfig(sections)), cfg.source)


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg["run"]["output"])


def _emit(obj, checks) -> int:
    print(pipeline.dumps(obj), end="")
    failed = [c for c in checks if not c["passed"]]
    for c in failed:
        log.error("check failed: %s measured=%s tolerance=%s", c["name"], c["measured"], c["tolerance"])
    return 0 if not failed else 1


def _stage_command(args, fn, per: str) -> int:
    cfg = _load_config(args)
    out, checks = {}, []
    values = cfg.tau_list if per == "tau" else cfg.epsilon_list
    for v in values:
        try:
            res = json.loads(pipeline.dumps(fn(v, cfg)))
        except Exception as exc:
            res = {"error": f"{type(exc).__name__}: {exc}",
                   "checks": [pipeline.check("completed", False, False, True)]}
        out[repr(v)] = res
        checks += res.get("checks", [])
    return _emit(out, checks)


def cmd_geometry(args) -> int:
    cfg = _load_config(args)
    if args.out:
        from . import delaunay
        for tau in cfg.tau_list:
            curve = delaunay.solve_generating_curve(tau, cfg["geometry"]["ode_tolerance"])
            Path(args.out).mkdir(parents=True, exist_ok=True)
            delaunay.write_curve_csv(curve, Path(args.out) / f"curve_tau{tau!r}.csv")
            delaunay.write_curve_json(curve, Path(args.out) / f"curve_tau{tau!r}.json")
    return _stage_command(args, pipeline.stage_geometry, "tau")


def cmd_hill(args) -> int:
    return _stage_command(args, pipeline.stage_hill, "tau")


def cmd_jacobi(args) -> int:
    return _stage_command(args, pipeline.stage_jacobi, "tau")


def cmd_profile(args) -> int:
    return _stage_command(args, pipeline.stage_profile, "eps")


def _blocks(args, with_bloch: bool) -> int:
    cfg = _load_config(args)
    sections = cfg.as_dict()
    sections["bloch"]["enabled"] = with_bloch
    cfg = config_mod.RunConfig(sections, cfg.source)
    out_dir = _out_dir(args, cfg)
    cache = pipeline.Cache(pipeline.cache_root(out_dir), not args.no_cache)
    blocks = [pipeline.run_block((tau, eps, cfg, cache.root, cache.enabled, out_dir))
              for tau in cfg.tau_list for eps in cfg.epsilon_list]
    checks = [c for b in blocks for part in ("solve", "bloch") for c in b.get(part, {}).get("checks", [])]
    return _emit(blocks, checks)


def cmd_solve(args) -> int:
    return _blocks(args, with_bloch=False)


def cmd_bloch(args) -> int:
    return _blocks(args, with_bloch=True)


def cmd_verify_all(args) -> int:
    cfg = _load_config(args)
    out_dir = _out_dir(args, cfg)
    report = pipeline.run_pipeline(cfg, out_dir, use_cache=not args.no_cache and cfg["run"]["cache"],
                                   jobs=args.jobs)
    rpath, spath = pipeline.write_report(report, out_dir)
    sys.stdout.write(spath.read_text())
    log.info("report written to %s", rpath)
    return 0 if report["summary"]["passed"] else 1


def _read_report(args) -> tuple[dict, Path]:
    run_dir = Path(args.out or "results")
    path = Path(args.report) if args.report else run_dir / "report.json"
    if not path.exists():
        raise SystemExit(f"no report at {path}; run 'verify-all' first")
    return json.loads(path.read_text()), path.parent


def cmd_plot(args) -> int:
    from .plots import emit_plots      # matplotlib only when plotting

    report, run_dir = _read_report(args)
    try:
        paths = emit_plots(report, args.kind, Path(args.plot_dir or run_dir / "plots"), run_dir)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


def cmd_report(args) -> int:
    report, _ = _read_report(args)
    sys.stdout.write(pipeline.summary_text(report))
    return 0 if report["summary"]["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cahn-delaunay", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, lists=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--out", help="output directory (default: [run] output)")
        sp.add_argument("--no-cache", action="store_true", help="recompute every stage")
        sp.add_argument("--jobs", type=int, default=1, help="parallel (tau, eps) blocks")
        if lists:
            sp.add_argument("--tau", type=float, nargs="+", help="override tau_list")
            sp.add_argument("--eps", type=float, nargs="+", help="override epsilon_list")

    for name, fn, help_ in [
        ("geometry", cmd_geometry, "generating curves and their fidelity checks"),
        ("hill", cmd_hill, "Hill discriminants and the temperate Jacobi count"),
        ("jacobi", cmd_jacobi, "geometric Jacobi fields and residual refinement"),
        ("profile", cmd_profile, "1D interface profile and multiplier"),
        ("solve", cmd_solve, "2D periodic Cahn-Hilliard solve and asymptotic checks"),
        ("bloch", cmd_bloch, "solve plus Bloch band sweep and verdict"),
        ("verify-all", cmd_verify_all, "full pipeline, report and summary"),
    ]:
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("plot", help="SVG figures from a report")
    sp.add_argument("--kind", required=True, help=f"one of {', '.join(PLOT_KINDS)}, all")
    sp.add_argument("--report", help="report.json (default: <out>/report.json)")
    sp.add_argument("--plot-dir", help="figure directory (default: <out>/plots)")
    common(sp, lists=False)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("report", help="print the summary of an existing report")
    sp.add_argument("--report", help="report.json (default: <out>/report.json)")
    common(sp, lists=False)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
