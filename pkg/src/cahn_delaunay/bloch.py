"""Bloch analysis of the linearisation L = eps Lap + f'(w)/eps about a periodic solution.

For angular mode m and Bloch parameter zeta the conjugated operator on one
period cell is

    L(zeta, m) v = eps [v_rr + v_r / r - m^2 v / r^2 + (d_z + i zeta / T)^2 v] + f'(w) v / eps.

It is self-adjoint for the r-weighted inner product, so A = W L is Hermitian
and eigenpairs solve A v = lambda W v.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import chsolver
from .chsolver import CHSolution, GridSpec
from .profile import Profile1D, fprime

HERMITIAN_TOL = 1e-12
EIG_RESIDUAL_TOL = 1e-8
ZETA_MIN = 0.2
FIT_ZETAS = (0.0, 0.05, 0.1, 0.15)


class NonHermitianAssembly(RuntimeError):
    pass


@dataclass
class BlochOperator:
    m: int
    zeta: float
    grid: GridSpec
    A: sp.csc_matrix          # Hermitian: W L
    W: np.ndarray             # diagonal of the mass matrix
    keep: np.ndarray          # radial node indices carried (axis dropped for m >= 1)
    hermitian_defect: float

    @property
    def L(self) -> sp.csr_matrix:
        return sp.diags(1.0 / self.W) @ self.A


def assemble(sol: CHSolution, m: int, zeta: float) -> BlochOperator:
    """Hermitian pair (W L(zeta, m), W) on the full periodic cell."""
    if sol is None:
        raise ValueError("missing solution")
    full = chsolver.full_cell(sol)
    g = full.grid
    zeta = float(np.mod(zeta, 2.0 * np.pi))
    Ar, _ = chsolver.radial_operator(g, m)
    keep = np.arange(g.Nr) if m == 0 else np.arange(1, g.Nr)
    Ar = Ar[keep][:, keep]
    Az = chsolver.axial_operator(g, zeta)
    nr, nz = len(keep), g.n_rows
    wr = chsolver.radial_weights(g)[keep]
    wz = chsolver.axial_weights(g)
    W = np.outer(wz, wr).ravel()
    fp = fprime(full.u[:, :-1][:, keep]).ravel()
    L = sol.epsilon * (sp.kron(sp.identity(nz), Ar) + sp.kron(Az, sp.identity(nr))) \
        + sp.diags(fp / sol.epsilon)
    A = (sp.diags(W) @ L).tocsc()
    diff = A - A.conj().T
    scale = abs(A).max()
    defect = float(abs(diff).max() / scale) if diff.nnz else 0.0
    if defect > HERMITIAN_TOL:
        raise NonHermitianAssembly(f"Hermiticity defect {defect:.2e} exceeds {HERMITIAN_TOL}")
    A = (0.5 * (A + A.conj().T)).tocsc()
    return BlochOperator(m, zeta, g, A, W, keep, defect)


@dataclass
class EigenResult:
    values: np.ndarray        # sorted by modulus
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    shifted: bool = False
    converged: bool = True


def eigenvalues_near_zero(op: BlochOperator, k: int = 4, block: int | None = None,
                          tol: float = EIG_RESIDUAL_TOL, max_iter: int = 300,
                          seed: int = 0) -> EigenResult:
    """Shift-invert subspace iteration at shift 0 with Rayleigh-Ritz on (A, W).

    Residual certificates are ||(A - lambda W) v|| / ||W v||.
    """
    if k > 10:
        raise ValueError("k must be at most 10")
    block = block or k + 6
    A, W = op.A, op.W
    n = A.shape[0]
    shifted = False
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError:
        shifted = True
        lu = spla.splu((A - 1e-10 * sp.diags(W)).tocsc(), permc_spec="COLAMD")
    rng = np.random.default_rng(seed)
    cplx = np.iscomplexobj(A.data)
    X = rng.standard_normal((n, block))
    if cplx:
        X = X + 1j * rng.standard_normal((n, block))
    sw = np.sqrt(W)
    res = np.full(k, np.inf)
    theta = np.zeros(block)
    for it in range(1, max_iter + 1):
        Y = lu.solve(W[:, None] * X)
        Q, _ = np.linalg.qr(sw[:, None] * Y)
        Y = Q / sw[:, None]
        AY = A @ Y
        Hs = Y.conj().T @ AY
        Hs = 0.5 * (Hs + Hs.conj().T)
        Bs = Y.conj().T @ (W[:, None] * Y)
        Bs = 0.5 * (Bs + Bs.conj().T)
        theta, V = sla.eigh(Hs, Bs)
        order = np.argsort(np.abs(theta))
        theta, V = theta[order], V[:, order]
        X = Y @ V
        AX = AY @ V
        WX = W[:, None] * X[:, :k]
        res = np.linalg.norm(AX[:, :k] - WX * theta[None, :k], axis=0) / np.linalg.norm(WX, axis=0)
        if np.all(res <= tol):
            return EigenResult(theta[:k].real, X[:, :k], res, it, shifted)
    return EigenResult(theta[:k].real, X[:, :k], res, max_iter, shifted, converged=False)


# ---------------------------------------------------------------------------
# Translation modes and the zero threshold
# ---------------------------------------------------------------------------

def translation_modes(sol: CHSolution) -> dict[int, np.ndarray]:
    """Discrete d_z u (m = 0) and d_r u (m = 1, axis node dropped) on the full cell."""
    full = chsolver.full_cell(sol)
    g = full.grid
    u = full.u
    dz = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2 * g.hz)
    dr = np.gradient(u, g.hr, axis=1)
    return {0: dz[:, :-1].ravel(), 1: dr[:, 1:-1].ravel()}


def rayleigh_quotient(op: BlochOperator, v: np.ndarray) -> float:
    return float(np.real(np.vdot(v, op.A @ v) / np.vdot(v, op.W * v)))


def translation_magnitude(sol: CHSolution, results: dict | None = None, k: int = 4) -> dict[int, float]:
    """|lambda| of the zeta = 0 eigenpair closest to each discrete translation field.

    ``results`` may carry precomputed ``EigenResult`` objects keyed by m.
    """
    modes = translation_modes(sol)
    out = {}
    for m, v in modes.items():
        op = assemble(sol, m, 0.0)
        res = (results or {}).get(m) or eigenvalues_near_zero(op, k)
        vn = v / math.sqrt(np.real(np.vdot(v, op.W * v)))
        overlap = [abs(np.vdot(vn, op.W * x)) / math.sqrt(np.real(np.vdot(x, op.W * x)))
                   for x in res.vectors.T]
        out[m] = float(abs(res.values[int(np.argmax(overlap))]))
    return out


# ---------------------------------------------------------------------------
# Band sweep and verdict
# ---------------------------------------------------------------------------

@dataclass
class BandFit:
    m: int
    a: float
    rel_residual: float
    zetas: list
    values: list

    def as_dict(self) -> dict:
        return {"m": self.m, "a": self.a, "rel_residual": self.rel_residual,
                "zetas": self.zetas, "values": self.values}


@dataclass
class BlochSpectrum:
    entries: list = field(default_factory=list)
    band_fits: dict = field(default_factory=dict)
    verdict: dict = field(default_factory=dict)

    def table(self) -> list:
        return sorted(self.entries, key=lambda e: (e["m"], e["zeta"]))

    def as_dict(self) -> dict:
        return {"entries": self.table(),
                "band_fits": {str(m): f.as_dict() for m, f in sorted(self.band_fits.items())},
                "verdict": self.verdict}


def fit_band(m: int, zetas, values) -> BandFit:
    """Least-squares fit of the lowest band of -L as a zeta^2.

    ``values`` are eigenvalues of L nearest zero; the band of -L touches
    zero from above when a > 0. The relative residual is the largest misfit
    divided by a zeta_max^2.
    """
    z = np.asarray(zetas, dtype=float)
    y = -np.asarray(values, dtype=float)
    a = float(np.dot(z ** 2, y) / np.dot(z ** 2, z ** 2))
    scale = abs(a) * z.max() ** 2
    rel = float(np.max(np.abs(a * z ** 2 - y)) / scale) if scale > 0 else float("inf")
    return BandFit(m, a, rel, list(map(float, z)), list(map(float, -y)))


def default_zeta_grid(n: int = 8, zeta_min: float = ZETA_MIN) -> list[float]:
    """0 plus n-1 points spread over [zeta_min, 2 pi - zeta_min]."""
    return [0.0] + list(np.linspace(zeta_min, 2 * np.pi - zeta_min, n - 1))


def _solve_entry(sol, m, z, k):
    res = eigenvalues_near_zero(assemble(sol, m, z), k)
    entry = {"m": m, "zeta": z, "eigenvalues": [float(x) for x in res.values],
             "residuals": [float(x) for x in res.residuals], "converged": res.converged,
             "iterations": res.iterations, "shifted": res.shifted}
    return entry, res


def band_sweep(sol: CHSolution, m_list=(0, 1, 2, 3, 4), zeta_grid=None, k: int = 4,
               zeta_min: float = ZETA_MIN, tol_factor: float = 20.0,
               fit_zetas=FIT_ZETAS, pool=None) -> BlochSpectrum:
    """Eigenvalues near zero over (m, zeta) plus band fits and the verdict.

    ``pool`` is any object with a ``map`` method (for example a process pool).
    """
    zeta_grid = list(default_zeta_grid() if zeta_grid is None else zeta_grid)
    if 0.0 not in zeta_grid:
        raise ValueError("zeta grid must include 0")
    bad = [z for z in zeta_grid if 0.0 < z < zeta_min - 1e-12 or z > 2 * np.pi - zeta_min + 1e-12]
    if bad:
        raise ValueError(f"zeta grid points {bad} lie within {zeta_min} of 0 or 2 pi")
    tasks = sorted({(m, float(z)) for m in m_list for z in zeta_grid}
                   | {(m, float(z)) for m in (0, 1) if m in m_list for z in fit_zetas})
    mapper = pool.map if pool is not None else map
    done = list(mapper(_sweep_task, [(sol, m, z, k) for m, z in tasks]))
    entries = [e for e, _ in done]
    at_zero = {e["m"]: r for e, r in done if e["zeta"] == 0.0}
    spec = BlochSpectrum(entries)
    lam = {(e["m"], e["zeta"]): e["eigenvalues"][0] for e in entries}

    mags = translation_magnitude(sol, {m: at_zero[m] for m in (0, 1) if m in at_zero}, k)
    tol_zero = tol_factor * max(mags.values())
    zero_count = {m: int(sum(abs(v) < tol_zero for v in at_zero[m].values)) for m in m_list}
    zero_modes = [m for m in m_list if zero_count[m] > 0]
    for m in (0, 1):
        if m in m_list:
            spec.band_fits[m] = fit_band(m, fit_zetas, [lam[(m, float(z))] for z in fit_zetas])
    off = {(m, z): abs(v) for (m, z), v in lam.items()
           if zeta_min - 1e-12 <= z <= 2 * np.pi - zeta_min + 1e-12}
    touching = {m: (zero_count.get(m) == 1 and m in spec.band_fits and spec.band_fits[m].a > 0
                    and spec.band_fits[m].rel_residual < 0.05) for m in (0, 1)}
    count = 2 * int(touching.get(0, False)) + 4 * int(touching.get(1, False))
    gap_at = min(off, key=off.get) if off else None
    spec.verdict = {
        "tol_zero": tol_zero,
        "translation_magnitude": {str(m): v for m, v in mags.items()},
        "zero_modes": [[m, 0.0] for m in zero_modes],
        "zero_multiplicity": {str(m): c for m, c in zero_count.items()},
        "quadratic_touching": {str(m): v for m, v in touching.items()},
        "temperate_count": count,
        "min_gap_off_zero": float(off[gap_at]) if off else float("nan"),
        "min_gap_at": list(gap_at) if gap_at else None,
        "all_converged": all(e["converged"] for e in entries),
        "nondegenerate": bool(off and off[gap_at] > tol_zero and zero_modes == [0, 1]
                              and count == 6),
    }
    return spec


def _sweep_task(args):
    sol, m, z, k = args
    return _solve_entry(sol, m, z, k)


def gap_refinement(sol: CHSolution, curve, profile: Profile1D, spec: BlochSpectrum,
                   factor: float = 1.5, n_candidates: int = 3, k: int = 4) -> dict:
    """Recompute the smallest off-zero entries on a grid refined by ``factor``.

    Only the ``n_candidates`` smallest (m, zeta) entries are recomputed; the
    minimum can only move between them if refinement reorders the bands.
    """
    zeta_min = ZETA_MIN
    off = sorted(((abs(e["eigenvalues"][0]), e["m"], e["zeta"]) for e in spec.entries
                  if zeta_min - 1e-12 <= e["zeta"] <= 2 * np.pi - zeta_min + 1e-12))
    fine = chsolver.solve(curve, profile, grid_refined(sol, factor))
    coarse_min = off[0][0]
    fine_vals = []
    for _, m, z in off[:n_candidates]:
        e, _ = _solve_entry(fine, m, z, k)
        fine_vals.append({"m": m, "zeta": z, "value": abs(e["eigenvalues"][0])})
    fine_min = min(v["value"] for v in fine_vals)
    return {"factor": factor, "coarse_min_gap": coarse_min, "fine_min_gap": fine_min,
            "relative_change": abs(fine_min - coarse_min) / coarse_min,
            "recomputed": fine_vals, "fine_grid": [fine.grid.Nr, fine.grid.Nz]}


# ---------------------------------------------------------------------------
# Fibrewise coercivity and the energy identity
# ---------------------------------------------------------------------------

def fiber_profile(sol: CHSolution, profile: Profile1D, curve) -> np.ndarray:
    """U'(t / eps) on the full-cell unknown nodes (m = 0 layout)."""
    full = chsolver.full_cell(sol)
    t = chsolver.signed_distance_grid(curve, full.grid)
    return profile.derivative(t / sol.epsilon)[:, :-1]


def fiberwise_orthogonal_coercivity(sol: CHSolution, profile: Profile1D, curve,
                                    constrained: bool = True, tol: float = 1e-5,
                                    max_iter: int = 150) -> float:
    """Minimum of <-L phi, phi>_W / <phi, phi>_W with one orthogonality constraint per z row.

    Each constraint is sum_r phi(r, z) V(r, z) w_r = 0 with V = U'(t/eps).
    In symmetrised variables the constraint vectors have disjoint supports,
    so the projector P = I - Q Q^T is cheap. LOBPCG works on P S P + beta Q Q^T
    (the constraint directions pushed far up) with the factorised shifted
    operator as preconditioner. ``tol`` bounds the residual norm of the unit
    eigenvector; the eigenvalue error is of order tol^2 / gap.
    """
    op = assemble(sol, 0, 0.0)
    W = op.W
    sw = np.sqrt(W)
    S = (-(sp.diags(1 / sw) @ op.A @ sp.diags(1 / sw))).real.tocsc()
    n = S.shape[0]
    eps = sol.epsilon
    shift = -1.0 / eps - 1.0               # below the spectrum: -f'(u)/eps >= -1/eps
    lu = spla.splu((S - shift * sp.identity(n)).tocsc(), permc_spec="COLAMD")
    if constrained:
        V = fiber_profile(sol, profile, curve)
        nr = len(op.keep)
        c = (W * V.ravel() / sw).reshape(-1, nr)
        c = c / np.linalg.norm(c, axis=1, keepdims=True)
        rows = np.arange(n)
        Q = sp.csr_matrix((c.ravel(), (rows, rows // nr)), shape=(n, c.shape[0]))
        QT = Q.T.tocsr()
        beta = 1e3 / eps

        def proj(x):
            return x - Q @ (QT @ x)

        def apply_a(x):
            return proj(S @ proj(x)) + beta * (Q @ (QT @ x))

        def apply_m(x):
            return proj(lu.solve(np.ascontiguousarray(proj(x))))
    else:
        def proj(x):
            return x

        def apply_a(x):
            return S @ x

        def apply_m(x):
            return lu.solve(np.ascontiguousarray(x))
    A_op = spla.LinearOperator((n, n), matvec=apply_a, matmat=apply_a, dtype=float)
    M_op = spla.LinearOperator((n, n), matvec=apply_m, matmat=apply_m, dtype=float)
    X0 = proj(np.random.default_rng(0).standard_normal((n, 2)))
    with warnings.catch_warnings():
        # lobpcg warns when any block vector misses tol; only the lowest one matters here
        warnings.simplefilter("ignore", UserWarning)
        vals, vecs = spla.lobpcg(A_op, X0, M=M_op, largest=False, tol=tol, maxiter=max_iter)
    i = int(np.argmin(vals))
    x = vecs[:, i] / np.linalg.norm(vecs[:, i])
    res = float(np.linalg.norm(apply_a(x) - vals[i] * x))
    if res > tol:
        warnings.warn(f"coercivity eigenpair residual {res:.2e} above {tol:.0e}", RuntimeWarning)
    return float(vals[i])


def _spectral_dz(a: np.ndarray, period: float, order: int) -> np.ndarray:
    """``order``-th z derivative of rows of a periodic field (axis 0)."""
    k = 2.0 * np.pi * np.fft.rfftfreq(a.shape[0], d=period / a.shape[0])
    ah = np.fft.rfft(a, axis=0) * ((1j * k) ** order)[:, None] if a.ndim == 2 \
        else np.fft.rfft(a) * (1j * k) ** order
    if a.shape[0] % 2 == 0 and order % 2 == 1:
        ah[-1] = 0.0
    return np.fft.irfft(ah, n=a.shape[0], axis=0)


def energy_identity_probe(sol: CHSolution, phi: np.ndarray) -> dict:
    """Both sides of the fibre energy identity for a real test field on the full cell.

    With h(z) = sum_r phi^2 w_r,

        (eps/2) h'' = sum_r [eps |d_r phi|^2 - f'(u) phi^2 / eps] w_r
                      + eps sum_r |d_z phi|^2 w_r + sum_r phi (L phi) w_r,

    where the last term vanishes on the kernel. The radial energy is the
    discrete Dirichlet form of the solver's radial operator, so the radial
    parts cancel exactly against L; z derivatives are spectral. What remains
    is the consistency error of the discrete axial operator.
    """
    full = chsolver.full_cell(sol)
    g = full.grid
    eps = sol.epsilon
    phi = np.asarray(phi, dtype=float).reshape(g.n_rows, g.Nr)
    wr = chsolver.radial_weights(g)
    op = assemble(sol, 0, 0.0)
    Lphi = (op.L @ phi.ravel()).real.reshape(phi.shape)
    Ar, _ = chsolver.radial_operator(g, 0)
    period = g.n_rows * g.hz
    h = (phi ** 2) @ wr
    lhs = 0.5 * eps * _spectral_dz(h, period, 2)
    radial_energy = -np.einsum("jr,jr,r->j", phi, (Ar @ phi.T).T, wr)
    dz = _spectral_dz(phi, period, 1)
    fp = fprime(full.u[:, :-1])
    rhs_kernel = eps * radial_energy - (fp * phi ** 2 / eps) @ wr + eps * (dz ** 2) @ wr
    rhs = rhs_kernel + (phi * Lphi) @ wr
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "rhs_kernel_form": rhs_kernel,
            "max_abs_diff": float(np.max(np.abs(lhs - rhs))),
            "rel_error": float(np.max(np.abs(lhs - rhs)) / scale)}


def grid_refined(sol: CHSolution, factor: float) -> GridSpec:
    g = sol.grid
    return GridSpec(int(math.ceil(g.Nr * factor)), int(math.ceil(g.Nz * factor)), g.Rmax,
                    g.T_period, g.half_cell, g.order)
