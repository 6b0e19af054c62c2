"""Verification pipeline: geometry -> Hill/Jacobi -> profile -> 2D solve -> Bloch.

Each stage result is a JSON document cached under a content hash of its
parameters, the config sections it depends on and the package version.
Reports contain no timings or paths outside the output directory, so
identical inputs give byte-identical report files.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, bloch, chsolver, delaunay, jacobi
from . import profile as profile_mod
from .config import RunConfig

CACHE_ENV = "CAHN_DELAUNAY_CACHE"
REPORT_VERSION = 1

STAGE_SECTIONS = {
    "geometry": ("geometry",),
    "hill": ("geometry", "hill"),
    "jacobi": ("geometry", "jacobi"),
    "profile": ("profile",),
    "solve": ("geometry", "profile", "solver"),
    "bloch": ("geometry", "profile", "solver", "bloch"),
}

# Acceptance thresholds quoted in the report next to every measured value.
TOLERANCES = {
    "mean_curvature_error": 1e-8,
    "energy_drift": 1e-10,
    "radius_error": 1e-8,
    "parabolic_discriminant": 1e-8,
    "hyperbolic_margin": 0.01,
    "temperate_count": 6,
    "jacobi_order": 1.8,
    "multiplier_order": 0.9,
    "solvability_factor": 10.0,
    "spectrum_zero": 1e-4,
    "spectrum_gap": 1e-3,
    "spectrum_gap_lower": 1.4,
    "coercivity_1d": 1.0,
    "coercivity_1d_spread": 0.10,
    "ansatz_exponent": 1.7,
    "decay_rate": (1.2, 1.45),
    "t3_relative_error": 0.15,
    "gap_refinement_change": 0.10,
    "band_fit_residual": 0.05,
    "coercivity_2d": 0.5,
    "coercivity_2d_spread": 0.20,
}


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------

def check(name: str, measured, passed: bool, tolerance) -> dict:
    return {"name": name, "measured": _clean(measured), "tolerance": _clean(tolerance),
            "passed": bool(passed)}


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path: Path, text: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(text, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, mode) as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def cache_root(out_dir: Path) -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path(out_dir) / ".cache"


def stage_key(stage: str, config: RunConfig, **params) -> str:
    blob = json.dumps({"stage": stage, "params": params, "version": __version__,
                       "sections": {s: config[s] for s in STAGE_SECTIONS[stage]}},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


class Cache:
    """Stage results keyed by content hash; ``enabled=False`` always misses but still writes."""

    def __init__(self, root: Path, enabled: bool = True):
        self.root = Path(root)
        self.enabled = enabled
        self.hits: list[str] = []
        self.misses: list[str] = []

    def _path(self, stage: str, key: str) -> Path:
        return self.root / stage / f"{key}.json"

    def get(self, stage: str, key: str):
        p = self._path(stage, key)
        if self.enabled and p.exists():
            self.hits.append(stage)
            return json.loads(p.read_text())
        self.misses.append(stage)
        return None

    def put(self, stage: str, key: str, result: dict) -> dict:
        atomic_write(self._path(stage, key), dumps(result))
        return json.loads(dumps(result))

    def solution_path(self, key: str) -> Path:
        path = self.root / "solution" / f"{key}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_geometry(tau: float, config: RunConfig) -> dict:
    curve = delaunay.solve_generating_curve(tau, config["geometry"]["ode_tolerance"])
    H = delaunay.mean_curvature_grid(curve, 100, 16)
    herr = float(np.max(np.abs(H - 1.0)))
    drift = curve.energy_drift()
    m0 = delaunay.meridian(curve, np.array([0.0, 0.5 * curve.s_period]))
    rerr = max(abs(m0.r[0] - curve.rho_neck), abs(m0.r[1] - curve.rho_bulge))
    tol = TOLERANCES
    return {"summary": delaunay.curve_summary(curve),
            "checks": [check("mean_curvature_error", herr, herr <= tol["mean_curvature_error"],
                             tol["mean_curvature_error"]),
                       check("energy_drift", drift, drift <= tol["energy_drift"], tol["energy_drift"]),
                       check("radius_error", rerr, rerr <= tol["radius_error"], tol["radius_error"])]}


def stage_hill(tau: float, config: RunConfig) -> dict:
    curve = delaunay.solve_generating_curve(tau, config["geometry"]["ode_tolerance"])
    kc = jacobi.temperate_kernel_count(curve, config["hill"]["n_max"], config["hill"]["parabolic_tol"])
    d = kc.as_dict()
    disc = {r["n"]: r["discriminant"] for r in d["per_mode"]}
    tol = TOLERANCES
    par = max(abs(disc[0] - 2.0), abs(disc[1] - 2.0))
    margin = min(disc[n] - 2.0 for n in disc if n >= 2)
    d["checks"] = [
        check("parabolic_discriminant", par, par <= tol["parabolic_discriminant"],
              tol["parabolic_discriminant"]),
        check("hyperbolic_margin", margin, margin >= tol["hyperbolic_margin"], tol["hyperbolic_margin"]),
        check("temperate_count", kc.count, kc.count == tol["temperate_count"], tol["temperate_count"]),
    ]
    return d


def jacobi_refinement(curve, config: RunConfig) -> dict:
    """Residual norms of the six fields on three nested grids and the fitted order."""
    c = config["jacobi"]
    ppp, nt, npd = c["points_per_period"], c["n_theta"], c["n_periods"]
    norms: dict[str, list[float]] = {k: [] for k in jacobi.FIELD_KINDS}
    hs = []
    growth, energy = {}, {}
    for level in range(3):
        grid = jacobi.make_grid(curve, npd, ppp * 2 ** level, nt * 2 ** level)
        fields = jacobi.geometric_fields(curve, grid)
        hs.append(grid.hs)
        for k, fld in fields.items():
            norms[k].append(jacobi.residual_norm(curve, fld))
            if level == 0:
                growth[k] = jacobi.measure_growth(fld)
                _, frac = jacobi.mode_decompose(fld)
                energy[k] = float(frac[fld.angular_mode])
    orders = {k: float(np.polyfit(np.log(hs), np.log(v), 1)[0]) for k, v in norms.items()}
    return {"h": hs, "residual_norms": norms, "orders": orders, "growth": growth,
            "declared_growth": dict(jacobi.GROWTH), "mode_energy_fraction": energy}


def stage_jacobi(tau: float, config: RunConfig) -> dict:
    curve = delaunay.solve_generating_curve(tau, config["geometry"]["ode_tolerance"])
    d = jacobi_refinement(curve, config)
    worst = min(d["orders"].values())
    growth_ok = d["growth"] == d["declared_growth"]
    d["checks"] = [check("jacobi_order", worst, worst >= TOLERANCES["jacobi_order"],
                         TOLERANCES["jacobi_order"]),
                   check("growth_classes", d["growth"], growth_ok, d["declared_growth"])]
    return d


def _profile(epsilon: float, config: RunConfig, half_length: float | None = None):
    c = config["profile"]
    return profile_mod.solve_profile(epsilon, 1.0, half_length or c["half_length"], c["tolerance"],
                                     c["step"])


def spectrum_checks(epsilon: float, spec) -> list[dict]:
    """{0, 3/2} at eps = 0; a small first eigenvalue and a gap above 1.4 otherwise."""
    if epsilon == 0.0:
        return [check("spectrum_zero", spec[0], abs(spec[0]) <= TOLERANCES["spectrum_zero"],
                      TOLERANCES["spectrum_zero"]),
                check("spectrum_gap", spec[1], abs(spec[1] - 1.5) <= TOLERANCES["spectrum_gap"],
                      [1.5, TOLERANCES["spectrum_gap"]])]
    return [check("spectrum_small", spec[0], abs(spec[0]) <= epsilon, epsilon),
            check("spectrum_gap_lower", spec[1], spec[1] >= TOLERANCES["spectrum_gap_lower"],
                  TOLERANCES["spectrum_gap_lower"])]


def stage_profile(epsilon: float, config: RunConfig) -> dict:
    p = _profile(epsilon, config)
    ell0 = profile_mod.multiplier_leading(1.0)
    ident = abs(profile_mod.solvability_multiplier(p) - p.ell)
    spec = profile_mod.linearized_spectrum_1d(p, 2)
    tol = config["profile"]["tolerance"]
    return {"summary": p.summary(), "ell_leading": ell0, "ell_deviation": p.ell - ell0,
            "solvability_identity_error": ident, "spectrum": list(map(float, spec)),
            "checks": [check("solvability_identity", ident,
                             ident <= TOLERANCES["solvability_factor"] * tol,
                             TOLERANCES["solvability_factor"] * tol)]
            + spectrum_checks(epsilon, spec)}


def _solve(tau: float, epsilon: float, config: RunConfig, refine: float = 1.0):
    curve = delaunay.solve_generating_curve(tau, config["geometry"]["ode_tolerance"])
    prof = _profile(epsilon, config)
    s = config["solver"]
    grid = chsolver.choose_grid(curve, epsilon, s["cells_per_eps"], s["order"], s["margin"])
    if refine != 1.0:
        grid = chsolver.GridSpec(int(math.ceil(grid.Nr * refine)), int(math.ceil(grid.Nz * refine)),
                                 grid.Rmax, grid.T_period, grid.half_cell, grid.order)
    sol = chsolver.solve(curve, prof, grid, s["newton_tol"], max_iter=s["max_iter"])
    return curve, prof, sol


def stage_solve(tau: float, epsilon: float, config: RunConfig, cache: Cache, key: str) -> dict:
    curve, prof, sol = _solve(tau, epsilon, config)
    sol.save(cache.solution_path(key))
    t = chsolver.signed_distance_grid(curve, sol.grid)
    umax, bound = chsolver.max_principle_bound(sol)
    ans = chsolver.validate_ansatz(sol, prof, curve, t)
    outer = chsolver.decay_check(sol, curve, "outer", t=t)
    inner = chsolver.decay_check(sol, curve, "inner", t=t)
    t3 = chsolver.field_correspondence(sol, prof, curve, "T3", t=t)
    lo, hi = TOLERANCES["decay_rate"]
    tol = config["solver"]["newton_tol"]
    checks = [check("newton_residual", sol.residual_norm, sol.residual_norm <= tol, tol),
              check("max_principle", umax, umax <= bound, bound)]
    for d in (outer, inner):
        checks.append(check(f"decay_rate_{d['side']}", d["c_fit"], lo <= d["c_fit"] <= hi, [lo, hi]))
    if epsilon <= 0.05 + 1e-12:
        checks.append(check("t3_relative_error", t3["relative_error"],
                            t3["relative_error"] <= TOLERANCES["t3_relative_error"],
                            TOLERANCES["t3_relative_error"]))
    return {"grid": [sol.grid.Nr, sol.grid.Nz], "order": sol.grid.order, "ell": sol.ell,
            "ell_1d": prof.ell, "mass": sol.mass, "residual_norm": sol.residual_norm,
            "newton_history": sol.history,
            "quadratic_ratios": chsolver.quadratic_convergence_ratios(sol.history),
            "ansatz": ans, "decay": [outer, inner], "t3": t3, "checks": checks}


def stage_bloch(tau: float, epsilon: float, config: RunConfig, sol_path: Path) -> dict:
    b = config["bloch"]
    sol = chsolver.CHSolution.load(sol_path)
    curve = delaunay.solve_generating_curve(tau, config["geometry"]["ode_tolerance"])
    zetas = bloch.default_zeta_grid(b["zeta_points"], b["zeta_min"])
    spec = bloch.band_sweep(sol, tuple(range(b["m_max"] + 1)), zetas, b["k"], b["zeta_min"],
                            b["tol_zero_factor"])
    v = spec.verdict
    checks = [
        check("zero_modes", v["zero_modes"], v["zero_modes"] == [[0, 0.0], [1, 0.0]],
              "exactly m in {0, 1} at zeta = 0"),
        check("min_gap_off_zero", v["min_gap_off_zero"], v["min_gap_off_zero"] > v["tol_zero"],
              v["tol_zero"]),
        check("temperate_count", v["temperate_count"], v["temperate_count"] == 6, 6),
    ]
    for m, fit in sorted(spec.band_fits.items()):
        checks.append(check(f"band_fit_m{m}", {"a": fit.a, "rel_residual": fit.rel_residual},
                            fit.a > 0 and fit.rel_residual < TOLERANCES["band_fit_residual"],
                            {"a": "> 0", "rel_residual": TOLERANCES["band_fit_residual"]}))
    out = spec.as_dict()
    if b["refine_factor"] > 0:
        prof = _profile(epsilon, config)
        ref = bloch.gap_refinement(sol, curve, prof, spec, b["refine_factor"], k=b["k"])
        out["gap_refinement"] = ref
        checks.append(check("gap_refinement_change", ref["relative_change"],
                            ref["relative_change"] < TOLERANCES["gap_refinement_change"],
                            TOLERANCES["gap_refinement_change"]))
    if b["coercivity"]:
        prof40 = _profile(epsilon, config, half_length=max(40.0, config["profile"]["half_length"]))
        kappa = bloch.fiberwise_orthogonal_coercivity(sol, prof40, curve)
        out["coercivity"] = {"min_rayleigh": kappa, "kappa": kappa * epsilon}
        checks.append(check("coercivity_2d", kappa * epsilon,
                            kappa * epsilon >= TOLERANCES["coercivity_2d"], TOLERANCES["coercivity_2d"]))
    out["checks"] = checks
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def _cached(cache: Cache, stage: str, config: RunConfig, fn, **params) -> dict:
    key = stage_key(stage, config, **params)
    hit = cache.get(stage, key)
    if hit is not None:
        return hit
    try:
        result = fn()
    except Exception as exc:          # recorded in the report; other blocks proceed
        return {"error": f"{type(exc).__name__}: {exc}", "checks": [
            check(f"{stage}_completed", False, False, True)]}
    return cache.put(stage, key, result)


def run_block(args) -> dict:
    tau, eps, config, root, use_cache, out_dir = args
    cache = Cache(root, use_cache)
    block = {"tau": tau, "epsilon": eps}
    key = stage_key("solve", config, tau=tau, epsilon=eps)
    block["solve"] = _cached(cache, "solve", config,
                             lambda: stage_solve(tau, eps, config, cache, key), tau=tau, epsilon=eps)
    sol_file = cache.solution_path(key)
    if "error" not in block["solve"] and sol_file.exists():
        rel = Path("solutions") / f"tau{_fmt(tau)}_eps{_fmt(eps)}.json"
        dst = Path(out_dir) / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(sol_file.with_suffix(".bin"), dst.with_suffix(".bin"))
        head = json.loads(sol_file.read_text())
        head["payload"] = dst.with_suffix(".bin").name
        atomic_write(dst, json.dumps(head, indent=2, sort_keys=True))
        block["solution_file"] = rel.as_posix()
        if config["bloch"]["enabled"]:
            block["bloch"] = _cached(cache, "bloch", config,
                                     lambda: stage_bloch(tau, eps, config, sol_file),
                                     tau=tau, epsilon=eps)
    return block


def _cross_checks(report: dict) -> list[dict]:
    """Checks that need several epsilons: ansatz exponent, multiplier order, T3 halving, 2D coercivity."""
    out = []
    eps = sorted(report["profiles"], key=float)
    if len(eps) >= 2:
        es = [float(e) for e in eps]
        dev = [abs(report["profiles"][e]["ell_deviation"]) for e in eps]
        p, _ = chsolver.fit_power(es, dev)
        out.append(check("multiplier_order", p, p >= TOLERANCES["multiplier_order"],
                         TOLERANCES["multiplier_order"]))
    by_tau: dict[float, list] = {}
    for b in report["blocks"]:
        if "error" not in b.get("solve", {"error": 1}):
            by_tau.setdefault(b["tau"], []).append(b)
    for tau, blocks in sorted(by_tau.items()):
        blocks = sorted(blocks, key=lambda b: b["epsilon"])
        if len(blocks) < 2:
            continue
        es = [b["epsilon"] for b in blocks]
        errs = [b["solve"]["ansatz"]["tube_error"] for b in blocks]
        p, _ = chsolver.fit_power(es, errs)
        out.append(check(f"ansatz_exponent_tau{tau}", p, p >= TOLERANCES["ansatz_exponent"],
                         TOLERANCES["ansatz_exponent"]))
        t3 = [b["solve"]["t3"]["relative_error"] for b in blocks]
        for i in range(len(blocks) - 1):
            if abs(es[i + 1] - 2 * es[i]) < 1e-12:
                ratio = t3[i] / t3[i + 1]
                out.append(check(f"t3_halving_tau{tau}_eps{es[i]}", ratio, 0.35 <= ratio <= 0.7,
                                 [0.35, 0.7]))
        kap = [b["bloch"]["coercivity"]["kappa"] for b in blocks
               if "coercivity" in b.get("bloch", {})]
        if len(kap) >= 2:
            spread = (max(kap) - min(kap)) / max(kap)
            out.append(check(f"coercivity_2d_spread_tau{tau}", spread,
                             spread <= TOLERANCES["coercivity_2d_spread"],
                             TOLERANCES["coercivity_2d_spread"]))
    return out


def _all_checks(report: dict):
    for t in report["geometry"].values():
        for part in t.values():
            yield from part.get("checks", [])
    for p in report["profiles"].values():
        yield from p.get("checks", [])
    for b in report["blocks"]:
        for part in ("solve", "bloch"):
            yield from b.get(part, {}).get("checks", [])
    yield from report["cross_checks"]


def run_pipeline(config: RunConfig, out_dir=None, use_cache: bool | None = None, jobs: int = 1) -> dict:
    """Run every stage for every (tau, epsilon) and return the report dictionary."""
    out_dir = Path(out_dir or config["run"]["output"])
    out_dir.mkdir(parents=True, exist_ok=True)
    use_cache = config["run"]["cache"] if use_cache is None else use_cache
    root = cache_root(out_dir)
    cache = Cache(root, use_cache)
    report = {"report_version": REPORT_VERSION, "package_version": __version__,
              "config": config.as_dict(), "tolerances": TOLERANCES,
              "geometry": {}, "profiles": {}, "blocks": []}
    for tau in config.tau_list:
        report["geometry"][_fmt(tau)] = {
            "curve": _cached(cache, "geometry", config, lambda: stage_geometry(tau, config), tau=tau),
            "hill": _cached(cache, "hill", config, lambda: stage_hill(tau, config), tau=tau),
            "jacobi": _cached(cache, "jacobi", config, lambda: stage_jacobi(tau, config), tau=tau),
        }
    for eps in config.epsilon_list:
        report["profiles"][_fmt(eps)] = _cached(cache, "profile", config,
                                                lambda: stage_profile(eps, config), epsilon=eps)
    tasks = [(tau, eps, config, root, use_cache, out_dir)
             for tau in config.tau_list for eps in config.epsilon_list]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            report["blocks"] = list(pool.map(run_block, tasks))
    else:
        report["blocks"] = [run_block(t) for t in tasks]
    report["cross_checks"] = _cross_checks(report)
    checks = list(_all_checks(report))
    report["summary"] = {"checks": len(checks), "failed": sum(not c["passed"] for c in checks),
                         "passed": all(c["passed"] for c in checks)}
    return json.loads(dumps(report))


def summary_text(report: dict) -> str:
    lines = [f"verification report (package {report['package_version']})"]
    for tau, parts in report["geometry"].items():
        lines.append(f"tau = {tau}")
        for name, part in parts.items():
            lines += _check_lines(f"  {name}", part)
    for eps, part in report["profiles"].items():
        lines.append(f"profile eps = {eps}")
        lines += _check_lines("  profile", part)
    for b in report["blocks"]:
        lines.append(f"block tau = {b['tau']}, eps = {b['epsilon']}")
        for name in ("solve", "bloch"):
            if name in b:
                lines += _check_lines(f"  {name}", b[name])
    lines.append("cross checks")
    lines += _check_lines("  cross", {"checks": report["cross_checks"]})
    s = report["summary"]
    lines.append(f"{s['checks'] - s['failed']}/{s['checks']} checks passed: "
                 f"{'PASS' if s['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _check_lines(prefix: str, part: dict) -> list[str]:
    out = []
    if "error" in part:
        out.append(f"{prefix}: ERROR {part['error']}")
    for c in part.get("checks", []):
        out.append(f"{prefix}.{c['name']}: {'pass' if c['passed'] else 'FAIL'} "
                   f"measured={json.dumps(c['measured'], sort_keys=True)} "
                   f"tolerance={json.dumps(c['tolerance'], sort_keys=True)}")
    return out


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    return (atomic_write(out_dir / "report.json", dumps(report)),
            atomic_write(out_dir / "summary.txt", summary_text(report)))
