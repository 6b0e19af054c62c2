"""One-dimensional interface profile with drift and its spectral properties.

Solves U'' - eps H U' + f(U) = eps ell on [-L, L], f(u) = u - u^3, with
U(+-L) = +-1 + sigma_+- where f(+-1 + sigma_+-) = eps ell, and the phase
condition U(0) = (U(L) + U(-L)) / 2. The multiplier ell is an unknown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

SQRT2 = math.sqrt(2.0)
THETA_PRIME_SQ = 2.0 * SQRT2 / 3.0       # int Theta'^2 dt
FOLD = 2.0 / (3.0 * math.sqrt(3.0))      # max of |u - u^3| on the outer branches


class NewtonDivergence(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


def f(u):
    return u - u ** 3


def fprime(u):
    return 1.0 - 3.0 * u ** 2


def potential_tilde(u):
    """F~ with F~' = f."""
    return 0.5 * u ** 2 - 0.25 * u ** 4


def heteroclinic_theta(t):
    return np.tanh(np.asarray(t, dtype=float) / SQRT2)


def heteroclinic_theta_prime(t):
    return 1.0 / (SQRT2 * np.cosh(np.asarray(t, dtype=float) / SQRT2) ** 2)


def multiplier_leading(H: float) -> float:
    """ell_0 = -(H/2) int Theta'^2."""
    return -0.5 * H * THETA_PRIME_SQ


def far_field_roots(epsilon: float, ell: float, tol: float = 1e-15) -> tuple[float, float]:
    """(sigma_+, sigma_-) with f(+-1 + sigma_+-) = eps ell on the outer branches."""
    rhs = epsilon * ell
    if abs(rhs) >= FOLD:
        raise ValueError(f"no near-+-1 root: |eps ell| = {abs(rhs):.4g} beyond fold {FOLD:.4g}")
    out = []
    for seed in (1.0, -1.0):
        u = seed
        for _ in range(60):
            du = (f(u) - rhs) / fprime(u)
            u -= du
            if abs(du) <= tol * max(1.0, abs(u)):
                break
        out.append(u - seed)
    return out[0], out[1]


@dataclass
class Profile1D:
    epsilon: float
    H: float
    ell: float
    t_grid: np.ndarray
    U: np.ndarray
    dU: np.ndarray
    sigma_plus: float
    sigma_minus: float
    residual_norm: float
    newton_steps: int = 0
    plateau_warning: bool = False
    _spline: CubicSpline | None = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    @property
    def L(self) -> float:
        return float(self.t_grid[-1])

    def spline(self) -> CubicSpline:
        if self._spline is None:
            self._spline = CubicSpline(self.t_grid, self.U)
        return self._spline

    def value(self, t):
        """U(t) with the plateau values beyond the grid."""
        t = np.asarray(t, dtype=float)
        out = self.spline()(np.clip(t, -self.L, self.L))
        out = np.where(t > self.L, 1.0 + self.sigma_plus, out)
        return np.where(t < -self.L, -1.0 + self.sigma_minus, out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = self.spline()(np.clip(t, -self.L, self.L), 1)
        return np.where(np.abs(t) > self.L, 0.0, out)

    def summary(self) -> dict:
        return {"epsilon": self.epsilon, "H": self.H, "ell": self.ell,
                "sigma_plus": self.sigma_plus, "sigma_minus": self.sigma_minus,
                "residual_norm": self.residual_norm}


def _grid(L: float, h: float) -> np.ndarray:
    n_half = int(round(L / h))
    return np.linspace(-L, L, 2 * n_half + 1)


def _residual(U, ell, eps, H, h, mid):
    a, b = U[2:], U[:-2]
    g = 0.5 * (a + b) - 0.25 * (a + b) * (a * a + b * b)
    interior = (a - 2.0 * U[1:-1] + b) / h ** 2 - eps * H * (a - b) / (2 * h) + g - eps * ell
    sp_, sm_ = far_field_roots(eps, ell)
    return np.concatenate([[U[0] - (-1.0 + sm_)], interior, [U[-1] - (1.0 + sp_)],
                           [U[mid] - 0.5 * (U[0] + U[-1])]])


def _jacobian(U, ell, eps, H, h, mid):
    n = len(U)
    a, b = U[2:], U[:-2]
    ga = 0.5 - (3 * a * a + 2 * a * b + b * b) / 4.0
    gb = 0.5 - (3 * b * b + 2 * a * b + a * a) / 4.0
    rows, cols, vals = [], [], []
    i = np.arange(1, n - 1)
    for off, v in ((1, 1 / h ** 2 - eps * H / (2 * h) + ga),
                   (-1, 1 / h ** 2 + eps * H / (2 * h) + gb),
                   (0, np.full(n - 2, -2 / h ** 2))):
        rows.append(i)
        cols.append(i + off)
        vals.append(v)
    sp_, sm_ = far_field_roots(eps, ell)
    rows += [np.array([0, n - 1, n, n, n]), i, np.array([0, n - 1])]
    cols += [np.array([0, n - 1, mid, 0, n - 1]), np.full(n - 2, n), np.array([n, n])]
    vals += [np.array([1.0, 1.0, 1.0, -0.5, -0.5]), np.full(n - 2, -eps),
             np.array([-eps / fprime(-1 + sm_), -eps / fprime(1 + sp_)])]
    # row order matches _residual: 0, interior 1..n-2, n-1 (right Dirichlet), n (pinning)
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n + 1, n + 1))


def solve_profile(epsilon: float, H: float = 1.0, L: float = 20.0, tol: float = 1e-10,
                  h: float = 0.01, max_iter: int = 50) -> Profile1D:
    """Bordered Newton solve for (U, ell)."""
    if epsilon < 0 or epsilon > 0.3:
        raise ValueError(f"epsilon must lie in [0, 0.3], got {epsilon}")
    if L < 15:
        raise ValueError(f"L = {L} too small: need L >= 15 for the far-field plateau")
    t = _grid(L, h)
    h = float(t[1] - t[0])
    ell0 = multiplier_leading(H)
    if epsilon == 0.0:
        U = heteroclinic_theta(t)
        return Profile1D(0.0, H, ell0, t, U, heteroclinic_theta_prime(t), 0.0, 0.0, 0.0)

    mid = len(t) // 2
    U = heteroclinic_theta(t)
    ell = ell0
    history = []
    for it in range(1, max_iter + 1):
        F = _residual(U, ell, epsilon, H, h, mid)
        # row order in _residual: [left, interior..., right, pin]; reorder to Jacobian rows
        Fj = np.concatenate([[F[0]], F[1:-2], [F[-2]], [F[-1]]])
        J = _jacobian(U, ell, epsilon, H, h, mid)
        dx = spla.spsolve(J, -Fj)
        U = U + dx[:-1]
        ell = ell + dx[-1]
        res = float(np.max(np.abs(_residual(U, ell, epsilon, H, h, mid))))
        history.append(res)
        if res <= tol and np.max(np.abs(dx)) <= 1e3 * tol:
            break
    else:
        raise NewtonDivergence(f"profile Newton did not converge in {max_iter} steps; "
                               f"last residual {history[-1]:.3e}", history)
    sp_, sm_ = far_field_roots(epsilon, ell)
    dU = np.gradient(U, h, edge_order=2)
    plateau = max(abs(U[1] - U[0]), abs(U[-1] - U[-2])) / h
    return Profile1D(epsilon, H, ell, t, U, dU, sp_, sm_, res, it, bool(plateau > tol))


def solvability_multiplier(profile: Profile1D) -> float:
    """ell recovered from the discrete energy identity.

    Summing each interior equation against (U_{i+1} - U_{i-1}) / 2 telescopes to
    eps ell dU = B + [F~] - eps H Q, the discrete form of
    eps ell [U] = (1/2)[U'^2] + [F~(U)] - eps H int U'^2.
    """
    U, h, eps, H = profile.U, profile.h, profile.epsilon, profile.H
    B = ((U[-1] - U[-2]) ** 2 - (U[1] - U[0]) ** 2) / (2 * h * h)
    Ft = potential_tilde
    jump_F = 0.5 * (Ft(U[-1]) + Ft(U[-2]) - Ft(U[1]) - Ft(U[0]))
    Q = h * np.sum(((U[2:] - U[:-2]) / (2 * h)) ** 2)
    dU = 0.5 * (U[-1] + U[-2] - U[1] - U[0])
    return float((B + jump_F - eps * H * Q) / (eps * dU))


def linearized_spectrum_1d(profile: Profile1D, k: int = 2) -> np.ndarray:
    """k lowest eigenvalues of -d_tt - f'(U) with Dirichlet ends."""
    U, h = profile.U[1:-1], profile.h
    diag = 2.0 / h ** 2 - fprime(U)
    off = np.full(len(U) - 1, -1.0 / h ** 2)
    return eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1), eigvals_only=True)


def smooth_cutoff(t, R: float):
    """C-infinity cutoff: 1 on |t| <= R/2, 0 for |t| >= R."""
    x = np.clip((R - np.abs(np.asarray(t, dtype=float))) / (0.5 * R), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def _rayleigh_pieces(profile: Profile1D, R: float):
    """Stiffness K (tridiagonal, natural ends) and lumped weights w on [-R, R]."""
    if R > profile.L / 2 + 1e-12:
        raise ValueError(f"R = {R} exceeds L/2 = {profile.L / 2}")
    mask = np.abs(profile.t_grid) <= R + 1e-12
    t = profile.t_grid[mask]
    U = profile.U[mask]
    h = profile.h
    n = len(t)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    main = np.zeros(n)
    main[:-1] += 1.0 / h
    main[1:] += 1.0 / h
    K = sp.diags([np.full(n - 1, -1.0 / h), main - w * fprime(U), np.full(n - 1, -1.0 / h)],
                 [-1, 0, 1], format="csc")
    return t, U, w, K


def coercivity_constrained(profile: Profile1D, R: float, constrained: bool = True) -> float:
    """Minimum of int v'^2 - f'(U) v^2 over int v^2 = 1 on (-R, R).

    With ``constrained`` the minimum is taken over v orthogonal to U' chi_R,
    computed as the lowest eigenvalue of the symmetrised form restricted to
    the orthogonal complement (a rank-one penalty, solved by shift-invert
    with a Sherman-Morrison correction).
    """
    t, U, w, K = _rayleigh_pieces(profile, R)
    sw = np.sqrt(w)
    A = sp.diags(1 / sw) @ K @ sp.diags(1 / sw)
    A = A.tocsc()
    n = len(t)
    if constrained:
        c = w * profile.derivative(t) * smooth_cutoff(t, R) / sw
        u = c / np.linalg.norm(c)
        penalty = 1e3
    else:
        u = np.zeros(n)
        penalty = 0.0
    shift = -1.0                       # keeps A - shift I positive definite
    lu = spla.splu((A - shift * sp.identity(n)).tocsc())
    y = lu.solve(u)
    denom = 1.0 + penalty * (u @ y)

    def opinv(x):
        z = lu.solve(x)
        return z - y * (penalty * (u @ z) / denom)

    def matvec(x):
        return A @ x + penalty * u * (u @ x)

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    oi = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    v0 = np.cos(np.linspace(0, 1, n))
    vals = spla.eigsh(op, k=1, sigma=shift, OPinv=oi, which="LM", v0=v0,
                      return_eigenvectors=False)
    return float(vals.min())
