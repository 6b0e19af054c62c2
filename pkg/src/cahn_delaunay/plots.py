"""SVG figures built from a verification report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import chsolver, delaunay, profile as profile_mod  # noqa: E402

# Fixed metadata keeps the SVG bytes reproducible.
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "cahn-delaunay"


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_curves(report: dict, out: Path) -> list[Path]:
    """Meridians (rho(z), z) of every tau in the report."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for tau in report["geometry"]:
        curve = delaunay.solve_generating_curve(float(tau),
                                                report["config"]["geometry"]["ode_tolerance"])
        s = np.linspace(-curve.s_period, curve.s_period, 800)
        m = delaunay.meridian(curve, s)
        ax.plot(m.z, m.r, label=f"tau = {tau}")
    ax.set_xlabel("z")
    ax.set_ylabel("r")
    ax.legend()
    return [_save(fig, out / "curves.svg")]


def plot_discriminants(report: dict, out: Path) -> list[Path]:
    """Hill discriminants Delta_n - 2 per mode with the |Delta| = 2 reference at zero."""
    paths = []
    for tau, parts in report["geometry"].items():
        modes = parts["hill"].get("per_mode", [])
        if not modes:
            continue
        n = [r["n"] for r in modes]
        d = [r["discriminant"] - 2.0 for r in modes]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(n, np.sign(d) * np.log10(1.0 + np.abs(d)), color="tab:blue")
        ax.axhline(0.0, color="k", lw=1, label="|Delta| = 2")
        ax.set_xlabel("angular mode n")
        ax.set_ylabel("sign(Delta - 2) log10(1 + |Delta - 2|)")
        ax.set_title(f"tau = {tau}")
        ax.legend()
        paths.append(_save(fig, out / f"discriminants_tau{tau}.svg"))
    return paths


def plot_profile(report: dict, out: Path) -> list[Path]:
    """U(t) against the heteroclinic Theta(t) for every epsilon."""
    fig, ax = plt.subplots(figsize=(6, 4))
    c = report["config"]["profile"]
    t = np.linspace(-8, 8, 400)
    ax.plot(t, profile_mod.heteroclinic_theta(t), "k--", label="Theta")
    for eps in report["profiles"]:
        p = profile_mod.solve_profile(float(eps), 1.0, c["half_length"], c["tolerance"], c["step"])
        ax.plot(t, p.value(t), label=f"U, eps = {eps}")
    ax.set_xlabel("t")
    ax.legend()
    return [_save(fig, out / "profile.svg")]


def plot_interface(report: dict, out: Path, run_dir: Path) -> list[Path]:
    """Heat map of u on the full period cell for every solved block."""
    paths = []
    for b in report["blocks"]:
        rel = b.get("solution_file")
        if not rel:
            continue
        sol = chsolver.full_cell(chsolver.CHSolution.load(run_dir / rel))
        g = sol.grid
        fig, ax = plt.subplots(figsize=(6, 4))
        mesh = ax.pcolormesh(g.z, g.r, sol.u.T, shading="auto", cmap="RdBu_r", rasterized=True)
        fig.colorbar(mesh, ax=ax, label="u")
        ax.set_xlabel("z")
        ax.set_ylabel("r")
        ax.set_title(f"tau = {b['tau']}, eps = {b['epsilon']}")
        paths.append(_save(fig, out / f"interface_tau{b['tau']}_eps{b['epsilon']}.svg"))
    return paths


def plot_bands(report: dict, out: Path) -> list[Path]:
    """lambda_min(zeta) per angular mode for every block with a Bloch sweep."""
    paths = []
    for b in report["blocks"]:
        entries = b.get("bloch", {}).get("entries")
        if not entries:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for m in sorted({e["m"] for e in entries}):
            pts = sorted((e["zeta"], e["eigenvalues"][0]) for e in entries if e["m"] == m)
            z, lam = zip(*pts)
            ax.plot(z, lam, "o-", label=f"m = {m}")
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_xlabel("zeta")
        ax.set_ylabel("lambda_min")
        ax.set_title(f"tau = {b['tau']}, eps = {b['epsilon']}")
        ax.legend()
        paths.append(_save(fig, out / f"bands_tau{b['tau']}_eps{b['epsilon']}.svg"))
    return paths


PLOT_KINDS = ("curves", "discriminants", "profile", "interface", "bands")


def emit_plots(report: dict, kind: str, out_dir, run_dir=None) -> list[Path]:
    """Write the SVG files of one kind ("all" writes every kind)."""
    out = Path(out_dir)
    kinds = PLOT_KINDS if kind == "all" else (kind,)
    unknown = [k for k in kinds if k not in PLOT_KINDS]
    if unknown:
        raise ValueError(f"unknown plot kind {kind!r}; valid kinds: {', '.join(PLOT_KINDS)}, all")
    paths = []
    for k in kinds:
        if k == "interface":
            paths += plot_interface(report, out, Path(run_dir or out_dir))
        else:
            paths += {"curves": plot_curves, "discriminants": plot_discriminants,
                      "profile": plot_profile, "bands": plot_bands}[k](report, out)
    return paths
