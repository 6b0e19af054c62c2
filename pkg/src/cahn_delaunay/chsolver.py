"""Axisymmetric z-periodic stationary Cahn-Hilliard solutions near a Delaunay unduloid.

Solves eps (u_rr + u_r / r + u_zz) + f(u) / eps = ell on 0 <= r <= Rmax with
u(Rmax) = -1 + sigma_-(ell), together with a mass constraint that fixes ell.
Grid functions are stored z-major with shape (n_rows, Nr + 1); the last
column is the Dirichlet node.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import delaunay
from .profile import Profile1D, f, far_field_roots, fprime

FORMAT_VERSION = 1
MIN_CELLS_PER_EPS = 6.0


class UnderResolvedError(ValueError):
    pass


class NewtonFailure(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class GridSpec:
    Nr: int
    Nz: int
    Rmax: float
    T_period: float
    half_cell: bool = True
    order: int = 4

    def __post_init__(self):
        if self.Nr < 32 or self.Nz < 32:
            raise ValueError("Nr and Nz must be at least 32")
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")

    @property
    def hr(self) -> float:
        return self.Rmax / self.Nr

    @property
    def hz(self) -> float:
        return (0.5 * self.T_period if self.half_cell else self.T_period) / self.Nz

    @property
    def n_rows(self) -> int:
        """Number of z rows carrying unknowns."""
        return self.Nz + 1 if self.half_cell else self.Nz

    @property
    def r(self) -> np.ndarray:
        return self.hr * np.arange(self.Nr + 1)

    @property
    def z(self) -> np.ndarray:
        return self.hz * np.arange(self.n_rows)

    def full(self) -> "GridSpec":
        if not self.half_cell:
            return self
        return GridSpec(self.Nr, 2 * self.Nz, self.Rmax, self.T_period, False, self.order)


def choose_grid(curve, epsilon: float, cells_per_eps: float = MIN_CELLS_PER_EPS,
                order: int = 4, margin: float = 1.0, half_cell: bool = True) -> GridSpec:
    """Smallest uniform grid meeting the resolution rule, Rmax = rho_bulge + margin."""
    Rmax = curve.rho_bulge + margin
    h = epsilon / cells_per_eps
    Nr = max(32, int(math.ceil(Rmax / h)))
    zlen = 0.5 * curve.T_period if half_cell else curve.T_period
    Nz = max(32, int(math.ceil(zlen / h)))
    return GridSpec(Nr, Nz, Rmax, curve.T_period, half_cell, order)


def check_resolution(grid: GridSpec, epsilon: float) -> None:
    if epsilon / grid.hr < MIN_CELLS_PER_EPS - 1e-9 or epsilon / grid.hz < MIN_CELLS_PER_EPS - 1e-9:
        raise UnderResolvedError(
            f"interface under-resolved: eps/hr = {epsilon / grid.hr:.2f}, "
            f"eps/hz = {epsilon / grid.hz:.2f}, need >= {MIN_CELLS_PER_EPS}")


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------

def staggered_stencil(order: int) -> tuple[np.ndarray, np.ndarray]:
    """(offsets, coefficients * h) of the node-to-midpoint derivative at x_{j+1/2}."""
    if order == 2:
        return np.array([0, 1]), np.array([-1.0, 1.0])
    return np.array([-1, 0, 1, 2]), np.array([1.0, -27.0, 27.0, -1.0]) / 24.0


def axis_weight(grid: GridSpec) -> float:
    """Full-line quadrature weight of the axis node that makes the stencil exact on r^2."""
    return grid.hr ** 2 * (0.25 if grid.order == 2 else 3.0 / 16.0)


def radial_operator(grid: GridSpec, m: int = 0):
    """(u_rr + u_r / r - m^2 u / r^2) on unknown nodes i = 0..Nr-1.

    Built in flux form -M^-1 D^T R D on the full line r in (-Rmax, Rmax) and
    folded onto r >= 0 with parity (-1)^m, so A is symmetric with respect to
    ``radial_weights``. Nodes at and beyond Rmax carry the Dirichlet value.
    Returns (A, b): A acts on the unknowns, b multiplies the Dirichlet value.
    For m >= 1 the axis node is kept but decoupled (identity row) so callers
    can drop it.
    """
    n, h = grid.Nr, grid.hr
    offs, coef = staggered_stencil(grid.order)
    K = n + int(offs.max())
    parity = 1.0 if m % 2 == 0 else -1.0
    rows, cols, vals, d, R = [], [], [], [], []
    for row, j in enumerate(range(-K - int(offs.min()), K - int(offs.max()) + 1)):
        dj = 0.0
        for o, c in zip(offs, coef):
            i = j + o
            a, sign = abs(i), (1.0 if i >= 0 else parity)
            if a >= n:
                dj += sign * c / h
            elif a == 0 and m >= 1:
                continue
            else:
                rows.append(row)
                cols.append(a)
                vals.append(sign * c / h)
        d.append(dj)
        R.append(abs(j + 0.5) * h * h)
    D = sp.csr_matrix((vals, (rows, cols)), shape=(len(R), n))
    DtR = D.T @ sp.diags(np.array(R))
    M = 2.0 * grid.r[:-1] * h
    M[0] = axis_weight(grid)
    A = (-sp.diags(1.0 / M) @ (DtR @ D)).tolil()
    b = -(DtR @ np.array(d)) / M
    if m >= 1:
        A[0, :] = 0.0
        A[:, 0] = 0.0
        A[0, 0] = 1.0
        b[0] = 0.0
        for i in range(1, n):
            A[i, i] -= m * m / grid.r[i] ** 2
    return A.tocsr(), b


def _periodic_difference(n: int, h: float, offs, coef, phase) -> sp.csr_matrix:
    phase = np.broadcast_to(phase, (len(offs),))
    j = np.arange(n)
    rows = np.concatenate([j] * len(offs))
    cols = np.concatenate([(j + o) % n for o in offs])
    vals = np.concatenate([np.full(n, c * p / h) for c, p in zip(coef, phase)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def axial_operator(grid: GridSpec, zeta: float = 0.0) -> sp.csr_matrix:
    """(d_z + i zeta / T)^2 in flux form -D^H D; even reflection on the half cell."""
    h = grid.hz
    offs, coef = staggered_stencil(grid.order)
    if grid.half_cell:
        if zeta != 0.0:
            raise ValueError("Bloch phases need the full periodic cell")
        n_full = 2 * grid.Nz
        D = _periodic_difference(n_full, h, offs, coef, 1.0)
        k = np.arange(n_full)
        fold = np.where(k <= grid.Nz, k, n_full - k)
        P = sp.csr_matrix((np.ones(n_full), (k, fold)), shape=(n_full, grid.n_rows))
        M = np.asarray(P.sum(axis=0)).ravel()
        return (-sp.diags(1.0 / M) @ (P.T @ (D.T @ D) @ P)).tocsr()
    if zeta != 0.0:
        phase = np.exp(1j * zeta * h / grid.T_period * (offs - 0.5))
    else:
        phase = np.ones(len(offs))
    D = _periodic_difference(grid.n_rows, h, offs, coef, phase)
    return (-(D.conj().T @ D)).tocsr()


def radial_weights(grid: GridSpec) -> np.ndarray:
    """Quadrature weights for int u r dr on the unknown nodes."""
    w = grid.r[:-1] * grid.hr
    w[0] = 0.5 * axis_weight(grid)
    return w


def axial_weights(grid: GridSpec) -> np.ndarray:
    w = np.full(grid.n_rows, grid.hz)
    if grid.half_cell:
        w[0] = w[-1] = 0.5 * grid.hz
    return w


def mass_weights(grid: GridSpec) -> np.ndarray:
    return np.outer(axial_weights(grid), radial_weights(grid)).ravel()


@dataclass
class Laplacian:
    grid: GridSpec
    A: sp.csr_matrix
    b: np.ndarray            # Dirichlet coupling per unknown (flattened)


def assemble_laplacian(grid: GridSpec) -> Laplacian:
    Ar, br = radial_operator(grid, 0)
    Az = axial_operator(grid)
    nz = grid.n_rows
    A = sp.kron(sp.identity(nz), Ar) + sp.kron(Az, sp.identity(grid.Nr))
    return Laplacian(grid, A.tocsr(), np.tile(br, nz))


def residual(u, ell: float, grid: GridSpec, epsilon: float, lap: Laplacian | None = None) -> np.ndarray:
    """eps Lap u + f(u)/eps - ell on the unknown nodes, shape (n_rows, Nr)."""
    lap = lap or assemble_laplacian(grid)
    U = np.asarray(u, dtype=float)
    inner = U[:, :-1].ravel()
    uD = U[0, -1]
    F = epsilon * (lap.A @ inner + lap.b * uD) + f(inner) / epsilon - ell
    return F.reshape(grid.n_rows, grid.Nr)


# ---------------------------------------------------------------------------
# Solution container
# ---------------------------------------------------------------------------

@dataclass
class CHSolution:
    tau: float
    epsilon: float
    grid: GridSpec
    u: np.ndarray
    ell: float
    mass: float
    residual_norm: float
    curve_ref: str
    history: list = field(default_factory=list)
    ell_history: list = field(default_factory=list)
    mass_history: list = field(default_factory=list)
    runtime: float = 0.0

    def header(self) -> dict:
        return {"tau": self.tau, "epsilon": self.epsilon, "grid": asdict(self.grid),
                "ell": self.ell, "mass": self.mass, "residual_norm": self.residual_norm,
                "curve_ref": self.curve_ref, "newton_history": self.history,
                "format_version": FORMAT_VERSION}

    def save(self, path) -> Path:
        """JSON header file plus little-endian float64 payload next to it."""
        path = Path(path)
        payload = path.with_suffix(".bin")
        tmp = payload.with_suffix(".bin.tmp")
        tmp.write_bytes(np.ascontiguousarray(self.u, dtype="<f8").tobytes())
        tmp.replace(payload)
        head = dict(self.header(), payload=payload.name, shape=list(self.u.shape))
        tmpj = path.with_suffix(".json.tmp")
        tmpj.write_text(json.dumps(head, indent=2, sort_keys=True))
        tmpj.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "CHSolution":
        path = Path(path)
        head = json.loads(path.read_text())
        if head.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported solution format {head.get('format_version')}")
        u = np.frombuffer((path.parent / head["payload"]).read_bytes(), dtype="<f8")
        u = u.reshape(head["shape"]).copy()
        return cls(head["tau"], head["epsilon"], GridSpec(**head["grid"]), u, head["ell"],
                   head["mass"], head["residual_norm"], head["curve_ref"], head["newton_history"])


def curve_ref(curve) -> str:
    return f"tau={curve.tau!r};ode_tolerance={curve.ode_tolerance!r}"


# ---------------------------------------------------------------------------
# Ansatz and Newton
# ---------------------------------------------------------------------------

def signed_distance_grid(curve, grid: GridSpec) -> np.ndarray:
    R, Z = np.meshgrid(grid.r, grid.z)
    t, _, _ = delaunay.signed_distance_field(curve, R, Z)
    return t


def initial_guess(curve, profile: Profile1D, grid: GridSpec, t: np.ndarray | None = None) -> np.ndarray:
    """u0 = U(t / eps) with the profile clamped to its plateaus."""
    if t is None:
        t = signed_distance_grid(curve, grid)
    u0 = profile.value(t / profile.epsilon)
    u0[:, -1] = -1.0 + profile.sigma_minus
    return u0


def mass_of(u, grid: GridSpec) -> float:
    w = mass_weights(grid)
    return float(w @ np.asarray(u)[:, :-1].ravel() / w.sum())


def newton_solve(u0, curve, profile: Profile1D, grid: GridSpec, tol: float = 1e-9,
                 max_iter: int = 25, check_precondition: bool = True) -> CHSolution:
    """Bordered damped Newton for (u, ell) with the mass of u0 held fixed."""
    eps = profile.epsilon
    if check_precondition:
        if eps > 0.15 * min(1.0, curve.T_period / 4.0) + 1e-12:
            raise UnderResolvedError(f"eps = {eps} too large for period {curve.T_period:.4f}")
        check_resolution(grid, eps)
    t0 = time.perf_counter()
    lap = assemble_laplacian(grid)
    w = mass_weights(grid)
    wn = w / w.sum()
    U = np.array(u0, dtype=float)
    x = U[:, :-1].ravel().copy()
    ell = profile.ell
    target = float(wn @ x)
    n = x.size
    eye = sp.identity(n, format="csr")

    def F_of(x, ell):
        sp_, sm_ = far_field_roots(eps, ell)
        uD = -1.0 + sm_
        return eps * (lap.A @ x + lap.b * uD) + f(x) / eps - ell, uD

    F, uD = F_of(x, ell)
    res = float(np.max(np.abs(F)))
    history, ells, masses = [res], [ell], [float(wn @ x)]
    it = 0
    while res > tol:
        it += 1
        if it > max_iter:
            raise NewtonFailure(f"CH Newton did not converge in {max_iter} steps; "
                                f"residual {res:.3e}", history)
        J = (eps * lap.A + sp.diags(fprime(x) / eps)).tocsc()
        lu = spla.splu(J, permc_spec="COLAMD")
        duD = eps / fprime(uD)
        col = -np.ones(n) + eps * lap.b * duD
        x1 = lu.solve(-F)
        x2 = lu.solve(col)
        rhs = target - wn @ x
        dl = (wn @ x1 - rhs) / (wn @ x2)
        dx = x1 - dl * x2
        lam = 1.0
        while True:
            xn, ln = x + lam * dx, ell + lam * dl
            try:
                Fn, uDn = F_of(xn, ln)
                rn = float(np.max(np.abs(Fn)))
            except ValueError:
                rn = np.inf
            if rn < res or lam < 1e-3:
                break
            lam *= 0.5
        x, ell, F, uD, res = xn, ln, Fn, uDn, rn
        history.append(res)
        ells.append(ell)
        masses.append(float(wn @ x))
        del lu, J
    U = np.empty((grid.n_rows, grid.Nr + 1))
    U[:, :-1] = x.reshape(grid.n_rows, grid.Nr)
    U[:, -1] = uD
    return CHSolution(curve.tau, eps, grid, U, float(ell), float(wn @ x), res,
                      curve_ref(curve), history, ells, masses, time.perf_counter() - t0)


def solve(curve, profile: Profile1D, grid: GridSpec | None = None, tol: float = 1e-9,
          t: np.ndarray | None = None, max_iter: int = 25) -> CHSolution:
    """Newton solve from the ansatz U(t / eps) on ``grid`` (default: ``choose_grid``)."""
    grid = grid or choose_grid(curve, profile.epsilon)
    u0 = initial_guess(curve, profile, grid, t)
    return newton_solve(u0, curve, profile, grid, tol, max_iter)


def full_cell(sol: CHSolution) -> CHSolution:
    """Reflect a half-cell solution about z = T/2 into the periodic cell."""
    g = sol.grid
    if not g.half_cell:
        return sol
    nz = g.Nz
    rows = [sol.u[j] if j <= nz else sol.u[2 * nz - j] for j in range(2 * nz)]
    return CHSolution(sol.tau, sol.epsilon, g.full(), np.array(rows), sol.ell, sol.mass,
                      sol.residual_norm, sol.curve_ref, sol.history)


def max_principle_bound(sol: CHSolution) -> tuple[float, float]:
    """(max|u|, 1 + 2 max|sigma_+-|)."""
    sp_, sm_ = far_field_roots(sol.epsilon, sol.ell)
    return float(np.max(np.abs(sol.u))), 1.0 + 2.0 * max(abs(sp_), abs(sm_))


def quadratic_convergence_ratios(history) -> list[float]:
    """r_{k+1} / r_k^2 over the final steps; bounded ratios indicate quadratic convergence."""
    h = [x for x in history if x > 0]
    return [h[k + 1] / h[k] ** 2 for k in range(len(h) - 1)]


# ---------------------------------------------------------------------------
# Asymptotic checks
# ---------------------------------------------------------------------------

def tube_delta(epsilon: float) -> float:
    return epsilon ** (2.0 / 3.0)


def validate_ansatz(sol: CHSolution, profile: Profile1D, curve, t: np.ndarray | None = None) -> dict:
    """sup |u - U(t/eps)| inside |t| <= eps^{2/3}, and the deviation from the plateaus outside.

    ``tube_sensitivity`` repeats the tube error for half and double the tube width.
    """
    if t is None:
        t = signed_distance_grid(curve, sol.grid)
    eps = sol.epsilon
    delta = tube_delta(eps)
    ansatz = profile.value(t / eps)
    diff = np.abs(sol.u - ansatz)
    inside = np.abs(t) <= delta
    sp_, sm_ = far_field_roots(eps, sol.ell)
    plateau = np.where(t > 0, 1.0 + sp_, -1.0 + sm_)
    outside = ~inside
    sensitivity = {str(k): float(diff[np.abs(t) <= k * delta].max()) for k in (0.5, 2.0)}
    return {"epsilon": eps, "delta": delta, "tube_error": float(diff[inside].max()),
            "tube_sensitivity": sensitivity,
            "exterior_deviation": float(np.abs(sol.u - plateau)[outside].max()) if outside.any() else 0.0}


def fit_power(xs, ys) -> tuple[float, float]:
    """(exponent p, prefactor C) of a least-squares fit y = C x^p."""
    p, logc = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(p), float(math.exp(logc))


def decay_check(sol: CHSolution, curve, side: str = "outer", floor: float = 1e-12,
                cap: float = 1e-2, t: np.ndarray | None = None) -> dict:
    """Fit log|u - plateau| = log C - c (distance / eps) beyond the interface.

    The fitted distance is the normal (Fermi) distance |t|. The radial gap
    |r - rho(z)| over-states the distance where the meridian is slanted, so
    its fit is returned as ``c_fit_radial`` for comparison only. Points whose
    deviation lies in (floor, cap) enter the fit; the cap keeps the nonlinear
    core out of the linear-tail regime.
    """
    g = sol.grid
    if t is None:
        t = signed_distance_grid(curve, g)
    rho, _ = delaunay.profile_radius(curve, g.z)
    gap = (g.r[None, :] - rho[:, None]) / sol.epsilon
    sp_, sm_ = far_field_roots(sol.epsilon, sol.ell)
    if side == "outer":
        dev = np.abs(sol.u - (-1.0 + sm_))
        region = t < 0
        region[:, -1] = False
    elif side == "inner":
        gap = -gap
        dev = np.abs(sol.u - (1.0 + sp_))
        region = t > 0
    else:
        raise ValueError(f"side must be 'outer' or 'inner', got {side!r}")
    dist = np.abs(t) / sol.epsilon
    sel = region & (dev > floor) & (dev < cap)
    if sel.sum() < 2:
        return {"side": side, "c_fit": float("nan"), "C_fit": float("nan"),
                "points": int(sel.sum()), "warning": True}
    slope, icpt = np.polyfit(dist[sel], np.log(dev[sel]), 1)
    slope_r = np.polyfit(gap[sel], np.log(dev[sel]), 1)[0]
    span = float(np.ptp(dist[sel]))
    return {"side": side, "c_fit": float(-slope), "C_fit": float(math.exp(icpt)),
            "c_fit_radial": float(-slope_r), "points": int(sel.sum()),
            "distance_span": span, "warning": bool(sel.sum() < 20 or span < 2.0)}


def dz_field(sol: CHSolution) -> np.ndarray:
    """Centred z-derivative of u; even reflection on the half cell, periodic otherwise."""
    g = sol.grid
    u = sol.u
    if g.half_cell:
        ext = np.concatenate([u[2:0:-1], u, u[-2:-4:-1]])
    else:
        ext = np.concatenate([u[-2:], u, u[:2]])
    h = g.hz
    if g.order == 2:
        return (ext[3:-1] - ext[1:-3]) / (2 * h)
    return (-ext[4:] + 8 * ext[3:-1] - 8 * ext[1:-3] + ext[:-4]) / (12 * h)


def field_correspondence(sol: CHSolution, profile: Profile1D, curve, which: str = "T3",
                         sol_perturbed: CHSolution | None = None, t: np.ndarray | None = None,
                         dtau: float | None = None) -> dict:
    """Relative sup error between a derivative of u and eps^-1 Phi(foot) U'(t/eps) in the tube."""
    g = sol.grid
    eps = sol.epsilon
    R, Z = np.meshgrid(g.r, g.z)
    tt, foot, _ = delaunay.signed_distance_field(curve, R, Z)
    if t is not None:
        tt = t
    m = delaunay.meridian(curve, foot)
    inside = np.abs(tt) <= tube_delta(eps)
    dU = profile.derivative(tt / eps)
    if which == "T3":
        observed = dz_field(sol)
        phi = m.n_z
    elif which == "D":
        if sol_perturbed is None:
            raise ValueError("perturbed solution required for the Delaunay-parameter field")
        dtau = dtau if dtau is not None else sol_perturbed.tau - sol.tau
        other = sample_periodic(sol_perturbed, R, Z)
        observed = (other - sol.u) / dtau
        from .jacobi import _tau_derivative
        dr, dz = _tau_derivative(curve, foot.ravel(), 1e-3)
        phi = -(dr * m.n_r.ravel() + dz * m.n_z.ravel()).reshape(foot.shape)
    else:
        raise ValueError(f"unknown field {which!r}; expected 'T3' or 'D'")
    predicted = phi * dU / eps
    err = np.abs(observed - predicted)[inside].max()
    scale = np.abs(predicted)[inside].max()
    return {"which": which, "epsilon": eps, "abs_error": float(err), "scale": float(scale),
            "relative_error": float(err / scale)}


def sample_periodic(sol: CHSolution, R, Z) -> np.ndarray:
    """Cubic interpolation of a solution at arbitrary (r, z), extended periodically in z."""
    from scipy.interpolate import RegularGridInterpolator
    full = full_cell(sol)
    g = full.grid
    u = np.concatenate([full.u[-3:], full.u, full.u[:3]])
    z = g.hz * np.arange(-3, g.n_rows + 3)
    interp = RegularGridInterpolator((z, g.r), u, method="cubic", bounds_error=False, fill_value=None)
    Zm = np.mod(Z, g.T_period)
    return interp(np.column_stack([Zm.ravel(), R.ravel()])).reshape(np.shape(R))
