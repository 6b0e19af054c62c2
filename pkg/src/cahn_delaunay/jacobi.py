"""Jacobi operator of the unduloid, its six geometric Jacobi fields and the kernel count.

In the isothermal coordinates (s, theta) the Jacobi operator reads

    J = (tau e^sigma)^-2 (d_ss + d_thth + tau^2 cosh(2 sigma)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import delaunay
from .floquet import PARABOLIC_TOL, HillResult, hill_analyze

MIN_POINTS_PER_PERIOD = 32
FIELD_KINDS = ("T1", "T2", "T3", "R1", "R2", "D")
ANGULAR_MODE = {"T1": 1, "T2": 1, "T3": 0, "R1": 1, "R2": 1, "D": 0}
GROWTH = {"T1": "bounded", "T2": "bounded", "T3": "bounded",
          "R1": "linear", "R2": "linear", "D": "linear"}


class UnexpectedStabilityBand(RuntimeError):
    pass


@dataclass(frozen=True)
class SurfaceGrid:
    """Uniform (s, theta) grid; theta is periodic with n_theta points."""

    s: np.ndarray
    theta: np.ndarray
    points_per_period: int

    @property
    def hs(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def htheta(self) -> float:
        return float(self.theta[1] - self.theta[0])


@dataclass
class JacobiField:
    kind: str
    values: np.ndarray          # shape (n_s, n_theta)
    angular_mode: int
    growth_class: str
    grid: SurfaceGrid


def make_grid(curve, n_periods: int = 3, points_per_period: int = 64, n_theta: int = 16,
              s_start: float | None = None) -> SurfaceGrid:
    """Grid over ``n_periods`` periods in s, centred on s = 0 unless ``s_start`` is given."""
    period = curve.s_period
    if s_start is None:
        s_start = -0.5 * n_periods * period
    n = n_periods * points_per_period
    s = s_start + period * np.arange(n + 1) / points_per_period
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    return SurfaceGrid(s, theta, points_per_period)


def jacobi_potential(curve, s) -> tuple[np.ndarray, np.ndarray]:
    """(tau^2 cosh 2 sigma, conformal factor tau^2 e^{2 sigma}) at s."""
    sig, _, _ = curve.evaluate(s)
    return curve.tau ** 2 * np.cosh(2.0 * sig), curve.tau ** 2 * np.exp(2.0 * sig)


def apply_jacobi(curve, values: np.ndarray, grid: SurfaceGrid) -> np.ndarray:
    """Second-order finite-difference Jacobi operator on a grid function.

    The first and last s rows use a one-sided stencil; callers should
    drop them from norms (see ``interior``).
    """
    if grid.points_per_period < MIN_POINTS_PER_PERIOD:
        raise ValueError(
            f"grid under-resolved: {grid.points_per_period} points per period, "
            f"need at least {MIN_POINTS_PER_PERIOD}")
    f = np.asarray(values, dtype=float)
    hs, ht = grid.hs, grid.htheta
    fss = np.empty_like(f)
    fss[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / hs ** 2
    fss[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / hs ** 2
    fss[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / hs ** 2
    ftt = (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / ht ** 2
    q, lam2 = jacobi_potential(curve, grid.s)
    return (fss + ftt + q[:, None] * f) / lam2[:, None]


def interior(a: np.ndarray) -> np.ndarray:
    return a[1:-1]


def residual_norm(curve, field: JacobiField) -> float:
    """Sup norm of the Jacobi operator applied to the field, interior rows only."""
    return float(np.max(np.abs(interior(apply_jacobi(curve, field.values, field.grid)))))


# ---------------------------------------------------------------------------
# Geometric fields
# ---------------------------------------------------------------------------

def _tau_derivative(curve, s, dtau: float):
    """Fourth-order Richardson estimate of (d_tau r, d_tau z) at fixed s."""
    tau = curve.tau
    if tau - 2 * dtau <= 0.0 or tau + 2 * dtau >= 1.0:
        raise ValueError(f"tau stencil {tau} +- {2 * dtau} leaves (0, 1)")

    def rz(t):
        c = delaunay.solve_generating_curve(t, curve.ode_tolerance)
        sig, _, kap = c.evaluate(s)
        return t * np.exp(sig), kap

    rp1, zp1 = rz(tau + dtau)
    rm1, zm1 = rz(tau - dtau)
    rp2, zp2 = rz(tau + 2 * dtau)
    rm2, zm2 = rz(tau - 2 * dtau)
    d1r, d1z = (rp1 - rm1) / (2 * dtau), (zp1 - zm1) / (2 * dtau)
    d2r, d2z = (rp2 - rm2) / (4 * dtau), (zp2 - zm2) / (4 * dtau)
    return (4.0 * d1r - d2r) / 3.0, (4.0 * d1z - d2z) / 3.0


def geometric_fields(curve, grid: SurfaceGrid, dtau: float = 1e-3) -> dict[str, JacobiField]:
    """The six Jacobi fields from translations, rotations and the Delaunay parameter."""
    m = delaunay.meridian(curve, grid.s)
    cos_t = np.cos(grid.theta)[None, :]
    sin_t = np.sin(grid.theta)[None, :]
    ones = np.ones_like(cos_t)
    n_r, n_z = m.n_r[:, None], m.n_z[:, None]
    moment = (m.r * m.n_z - m.z * m.n_r)[:, None]
    dr, dz = _tau_derivative(curve, grid.s, dtau)
    phi_d = -(dr * m.n_r + dz * m.n_z)[:, None]
    raw = {
        "T1": cos_t * n_r,
        "T2": sin_t * n_r,
        "T3": ones * n_z,
        "R1": cos_t * moment,
        "R2": sin_t * moment,
        "D": ones * phi_d,
    }
    return {k: JacobiField(k, v, ANGULAR_MODE[k], GROWTH[k], grid) for k, v in raw.items()}


def window_sups(field: JacobiField) -> tuple[np.ndarray, np.ndarray]:
    """(window centres, sup|field| per s-period window)."""
    ppp = field.grid.points_per_period
    n_win = (len(field.grid.s) - 1) // ppp
    centres, sups = [], []
    for w in range(n_win):
        sl = slice(w * ppp, (w + 1) * ppp + 1)
        centres.append(field.grid.s[sl].mean())
        sups.append(np.max(np.abs(field.values[sl])))
    return np.array(centres), np.array(sups)


def measure_growth(field: JacobiField, rel_tol: float = 0.05) -> str:
    """'bounded' if window sups are flat within ``rel_tol``, 'linear' if they grow affinely."""
    c, sups = window_sups(field)
    if np.ptp(sups) <= rel_tol * sups.max():
        return "bounded"
    return "linear"


def mode_decompose(field: JacobiField) -> tuple[np.ndarray, np.ndarray]:
    """Angular Fourier coefficients per s and the energy fraction per mode."""
    coeffs = np.fft.rfft(field.values, axis=1) / field.values.shape[1]
    weight = np.full(coeffs.shape[1], 2.0)
    weight[0] = 1.0
    if field.values.shape[1] % 2 == 0:
        weight[-1] = 1.0
    energy = np.sum(np.abs(coeffs) ** 2, axis=0) * weight
    total = energy.sum()
    return coeffs, energy / total if total > 0 else energy


def gram_condition(fields: dict[str, JacobiField]) -> float:
    """Condition number of the Gram matrix of the unit-normalised fields."""
    vs = []
    for k in FIELD_KINDS:
        v = fields[k].values.ravel()
        vs.append(v / np.linalg.norm(v))
    V = np.array(vs)
    return float(np.linalg.cond(V @ V.T))


def sigma_prime_hill_residual(curve, grid: SurfaceGrid) -> float:
    """Sup residual of sigma' in the n = 0 Hill equation (centred differences)."""
    _, dsig, _ = curve.evaluate(grid.s)
    q, _ = jacobi_potential(curve, grid.s)
    hs = grid.hs
    res = (dsig[2:] - 2 * dsig[1:-1] + dsig[:-2]) / hs ** 2 + q[1:-1] * dsig[1:-1]
    return float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# Temperate kernel count
# ---------------------------------------------------------------------------

@dataclass
class KernelCount:
    tau: float
    count: int
    per_mode: list[HillResult]

    def as_dict(self) -> dict:
        return {"tau": self.tau, "temperate_count": self.count,
                "per_mode": [r.as_dict() for r in self.per_mode]}


def temperate_kernel_count(curve, n_max: int = 8, parabolic_tol: float = PARABOLIC_TOL) -> KernelCount:
    """Count temperate Jacobi fields from Hill discriminants of modes 0..n_max."""
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    results, count = [], 0
    for n in range(n_max + 1):
        res = hill_analyze(curve, n, parabolic_tol)
        if res.classification == "elliptic":
            raise UnexpectedStabilityBand(
                f"unexpected stability band: mode {n} has discriminant {res.discriminant:.6g}")
        if res.classification == "parabolic":
            count += 2 if n == 0 else 4
        results.append(res)
    return KernelCount(curve.tau, count, results)
