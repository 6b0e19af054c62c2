"""The eleven acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line (shown in the terminal summary) and
fails when its criterion fails.
"""

import math
import time

import numpy as np
import pytest

from cahn_delaunay import bloch, chsolver, cli, config, delaunay, floquet, jacobi, pipeline, profile

pytestmark = pytest.mark.slow

GRID_TAUS = (0.4, 0.6)
GRID_EPS = (0.1, 0.05)


def test_geometry_fidelity(criterion):
    t0 = time.perf_counter()
    worst = {"H": 0.0, "drift": 0.0, "radius": 0.0}
    for tau in (0.2, 0.4, 0.6, 0.8):
        c = delaunay.solve_generating_curve(tau)
        worst["H"] = max(worst["H"], float(np.max(np.abs(delaunay.mean_curvature_grid(c, 100, 16) - 1))))
        worst["drift"] = max(worst["drift"], c.energy_drift())
        m = delaunay.meridian(c, np.array([0.0, 0.5 * c.s_period]))
        root = math.sqrt(1 - tau * tau)
        worst["radius"] = max(worst["radius"], abs(m.r[0] - (1 - root)), abs(m.r[1] - (1 + root)))
    dt = time.perf_counter() - t0
    ok = worst["H"] <= 1e-8 and worst["drift"] <= 1e-10 and worst["radius"] <= 1e-8 and dt < 5
    criterion(1, "geometry fidelity", ok,
              f"|H-1| {worst['H']:.1e}, drift {worst['drift']:.1e}, radii {worst['radius']:.1e}, "
              f"{dt:.1f} s")


def test_period_limits(criterion):
    t0 = time.perf_counter()
    up = [delaunay.solve_generating_curve(t).T_period for t in (0.95, 0.99, 0.999)]
    down = [delaunay.solve_generating_curve(t).T_period for t in (0.1, 0.05, 0.02)]
    dt = time.perf_counter() - t0
    gap_up = abs(up[-1] - 2 * math.pi)
    gap_down = abs(down[-1] - 4.0)
    monotone = up[0] < up[1] < up[2] and abs(down[0] - 4) > abs(down[1] - 4) > abs(down[2] - 4)
    ok = monotone and gap_up < 0.05 and gap_down < 0.1 and dt < 10
    criterion(2, "period limits", ok,
              f"|T-2pi| {gap_up:.3g} at 0.999, |T-4| {gap_down:.3g} at 0.02, monotone {monotone}, "
              f"{dt:.1f} s")


def test_hill_temperate_count(criterion):
    t0 = time.perf_counter()
    par, margin, counts = 0.0, np.inf, set()
    for tau in np.round(np.arange(0.2, 0.91, 0.1), 2):
        kc = jacobi.temperate_kernel_count(delaunay.solve_generating_curve(float(tau)))
        d = {r["n"]: r["discriminant"] for r in kc.as_dict()["per_mode"]}
        par = max(par, abs(d[0] - 2), abs(d[1] - 2))
        margin = min(margin, min(d[n] - 2 for n in range(2, 9)))
        counts.add(kc.count)
    dt = time.perf_counter() - t0
    ok = par <= 1e-8 and margin >= 0.01 and counts == {6} and dt < 30
    criterion(3, "Hill discriminants and temperate count", ok,
              f"|Delta_0,1 - 2| {par:.1e}, min Delta_n - 2 {margin:.3g}, counts {sorted(counts)}, "
              f"{dt:.1f} s")


def test_jacobi_residual_orders(criterion):
    t0 = time.perf_counter()
    orders = {}
    for tau in (0.3, 0.6):
        ref = pipeline.jacobi_refinement(delaunay.solve_generating_curve(tau), config.defaults())
        orders.update({f"{k}@{tau}": v for k, v in ref["orders"].items()})
    dt = time.perf_counter() - t0
    low = min(orders.values())
    criterion(4, "Jacobi residual orders", low >= 1.8 and dt < 60,
              f"min fitted order {low:.3f} over {len(orders)} fields, {dt:.1f} s")


def test_profile_and_multiplier(criterion):
    t0 = time.perf_counter()
    eps = [0.1, 0.05, 0.025]
    tol = 1e-10
    profs = [profile.solve_profile(e, tol=tol) for e in eps]
    dev = [abs(p.ell + math.sqrt(2) / 3) for p in profs]
    order, _ = chsolver.fit_power(eps, dev)
    ident = max(abs(profile.solvability_multiplier(p) - p.ell) for p in profs)
    spec = profile.linearized_spectrum_1d(profile.solve_profile(0.0), 2)
    kappas = []
    for e in (0.0, 0.05):
        p40 = profile.solve_profile(e, L=40)
        kappas += [profile.coercivity_constrained(p40, R) for R in (10, 15, 20)]
    spread = (max(kappas) - min(kappas)) / max(kappas)
    dt = time.perf_counter() - t0
    ok = (order >= 0.9 and ident <= 10 * tol and abs(spec[0]) <= 1e-4 and abs(spec[1] - 1.5) <= 1e-3
          and min(kappas) >= 1.0 and spread < 0.10 and dt < 60)
    criterion(5, "profile and multiplier", ok,
              f"order {order:.2f}, identity {ident:.1e}, spectrum [{spec[0]:.1e}, {spec[1]:.5f}], "
              f"kappa min {min(kappas):.4f} spread {spread:.1e}, {dt:.1f} s")


def test_two_dimensional_solutions(criterion, solutions):
    residuals, rates, exps, seconds, grids = [], [], {}, [], set()
    for tau in GRID_TAUS:
        tube = []
        for eps in GRID_EPS:
            curve, prof, sol = solutions.get(tau, eps)
            seconds.append(solutions.solve_seconds[(tau, eps)])
            grids.add((sol.grid.Nr, sol.grid.Nz))
            residuals.append(sol.residual_norm)
            t = chsolver.signed_distance_grid(curve, sol.grid)
            tube.append(chsolver.validate_ansatz(sol, prof, curve, t)["tube_error"])
            rates += [chsolver.decay_check(sol, curve, side, t=t)["c_fit"] for side in ("outer", "inner")]
        exps[tau], _ = chsolver.fit_power(GRID_EPS, tube)
    ok = (max(residuals) <= 1e-9 and min(exps.values()) >= 1.7
          and all(1.2 <= c <= 1.45 for c in rates) and max(seconds) <= 300)
    criterion(6, "2D solutions", ok,
              f"max residual {max(residuals):.1e}, exponents "
              + ", ".join(f"{p:.2f}" for p in exps.values())
              + f", decay c in [{min(rates):.3f}, {max(rates):.3f}], slowest solve {max(seconds):.0f} s, "
              f"largest grid {max(grids)}")


def test_translation_correspondence(criterion, solutions):
    errs = {}
    for eps in GRID_EPS:
        curve, prof, sol = solutions.get(0.6, eps)
        errs[eps] = chsolver.field_correspondence(sol, prof, curve, "T3")["relative_error"]
    ratio = errs[0.05] / errs[0.1]
    ok = errs[0.05] <= 0.15 and 0.35 <= ratio <= 0.7
    criterion(7, "translation field correspondence", ok,
              f"error {errs[0.05]:.4f} at eps 0.05, {errs[0.1]:.4f} at eps 0.1, "
              f"ratio {ratio:.3f} (band [0.35, 0.7])")


def test_nondegeneracy_verdict(criterion, solutions):
    curve, prof, sol = solutions.get(0.6, 0.1)
    t0 = time.perf_counter()
    spec = bloch.band_sweep(sol, (0, 1, 2, 3, 4), bloch.default_zeta_grid(8, 0.2))
    ref = bloch.gap_refinement(sol, curve, prof, spec, 1.5)
    dt = time.perf_counter() - t0
    v = spec.verdict
    fits = spec.band_fits
    fits_ok = all(f.a > 0 and f.rel_residual < 0.05 for f in fits.values()) and set(fits) == {0, 1}
    ok = (v["zero_modes"] == [[0, 0.0], [1, 0.0]] and v["min_gap_off_zero"] > v["tol_zero"]
          and ref["relative_change"] < 0.10 and fits_ok and v["temperate_count"] == 6
          and v["all_converged"] and dt <= 1200)
    criterion(8, "nondegeneracy verdict", ok,
              f"zero modes {[m for m, _ in v['zero_modes']]}, gap {v['min_gap_off_zero']:.3e} > tol_zero "
              f"{v['tol_zero']:.1e}, refinement change {ref['relative_change']:.2%}, band fits "
              + ", ".join(f"m={m}: a={f.a:.3g} res={f.rel_residual:.1%}" for m, f in sorted(fits.items()))
              + f", count {v['temperate_count']}, {dt:.0f} s")


def test_orthogonal_coercivity(criterion, solutions):
    kappa = {}
    for eps in GRID_EPS:
        curve, _, sol = solutions.get(0.6, eps)
        p40 = profile.solve_profile(eps, L=40)
        kappa[eps] = bloch.fiberwise_orthogonal_coercivity(sol, p40, curve) * eps
    spread = (max(kappa.values()) - min(kappa.values())) / max(kappa.values())
    ok = min(kappa.values()) >= 0.5 and spread <= 0.20
    criterion(9, "orthogonal coercivity", ok,
              ", ".join(f"eps {e}: eps*min {k:.3f}" for e, k in kappa.items()) + f", spread {spread:.1%}")


def _sequence(ks, offsets, period):
    s = np.asarray(offsets)[:, None] + period * np.asarray(ks)[None, :]
    return np.exp(-0.8 * np.abs(s)) * (np.cos(1.3 * s) + 0.2 * np.sin(0.4 * s))


def test_transform_layer(criterion):
    t0 = time.perf_counter()
    period = 2.0
    offsets = np.linspace(0, period, 5, endpoint=False)
    ks = np.arange(-floquet.window_half_width(0.8, 0.4, period=period),
                   floquet.window_half_width(0.8, 0.4, period=period) + 1)
    h = _sequence(ks, offsets, period)
    s = (offsets[:, None] + period * ks[None, :]).ravel()
    inv_err, planch_err, values = 0.0, 0.0, []
    for nu in (-0.4, 0.0, 0.4):
        pair = floquet.forward_transform(h, ks, nu, 4 * len(ks) + 1, offsets, period)
        back = floquet.inverse_transform(pair, s)
        inv_err = max(inv_err, float(np.max(np.abs(back.real - h.ravel()))))
        lhs, rhs = floquet.plancherel_sides(pair, h)
        planch_err = max(planch_err, abs(lhs - rhs) / abs(rhs))
        values.append(back)
    shift_err = max(float(np.max(np.abs(v - values[1]))) for v in values)
    dt = time.perf_counter() - t0
    ok = inv_err <= 1e-8 and planch_err <= 1e-8 and shift_err <= 1e-8 and dt < 5
    criterion(10, "transform layer", ok,
              f"inversion {inv_err:.1e}, Plancherel {planch_err:.1e}, path shift {shift_err:.1e}, {dt:.2f} s")


def test_determinism(criterion, tmp_path):
    ini = tmp_path / "light.ini"
    ini.write_text("[run]\ntau_list = 0.6\nepsilon_list = 0.1\n[bloch]\nenabled = false\n")
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = cli.main(["verify-all", "--config", str(ini), "--out", str(out), "--no-cache"])
        reports.append(((out / "report.json").read_bytes(), (out / "summary.txt").read_bytes(), code))
    same = reports[0][:2] == reports[1][:2]
    criterion(11, "determinism", same and reports[0][2] == 0,
              f"report.json and summary.txt byte-identical: {same}, {len(reports[0][0])} bytes")
