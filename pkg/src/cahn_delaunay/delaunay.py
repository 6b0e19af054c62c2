"""Delaunay unduloids: generating curve, immersion, radial profile and Fermi queries.

The canonical scale used throughout the package is

    X(s, theta) = (tau e^sigma cos theta, tau e^sigma sin theta, kappa(s))

with ``sigma'^2 + tau^2 cosh^2 sigma = 1`` and ``kappa' = tau^2 e^sigma cosh sigma``.
In this scale the coordinates are isothermal (|X_s| = |X_theta| = tau e^sigma), the
mean curvature k1 + k2 equals 1 and the unit normal points towards the axis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

TAU_MIN = 0.02
CYLINDER_PERIOD = 2.0 * math.pi


class PeriodNotFoundError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ODE right-hand side and a vectorised classical RK4 step
# ---------------------------------------------------------------------------

def _rhs(tau, sig, dsig):
    d2sig = -tau * tau * np.cosh(sig) * np.sinh(sig)
    dkap = tau * tau * np.exp(sig) * np.cosh(sig)
    return d2sig, dkap


def _rk4_step(tau, sig, dsig, kap, h):
    """One RK4 step of (sigma, sigma', kappa); ``h`` may be an array."""
    a1, k1 = _rhs(tau, sig, dsig)
    s1, v1 = dsig, a1

    sig2 = sig + 0.5 * h * s1
    dsig2 = dsig + 0.5 * h * v1
    a2, k2 = _rhs(tau, sig2, dsig2)
    s2, v2 = dsig2, a2

    sig3 = sig + 0.5 * h * s2
    dsig3 = dsig + 0.5 * h * v2
    a3, k3 = _rhs(tau, sig3, dsig3)
    s3, v3 = dsig3, a3

    sig4 = sig + h * s3
    dsig4 = dsig + h * v3
    a4, k4 = _rhs(tau, sig4, dsig4)
    s4, v4 = dsig4, a4

    sig_new = sig + h / 6.0 * (s1 + 2 * s2 + 2 * s3 + s4)
    dsig_new = dsig + h / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
    kap_new = kap + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return sig_new, dsig_new, kap_new


def _rk4_scalar(tau, sig, dsig, kap, h):
    """Scalar RK4 step using ``math``; the hot loop of the integrator."""
    t2 = tau * tau
    cosh, sinh, exp = math.cosh, math.sinh, math.exp
    a1 = -t2 * cosh(sig) * sinh(sig)
    k1 = t2 * exp(sig) * cosh(sig)
    s2 = sig + 0.5 * h * dsig
    d2 = dsig + 0.5 * h * a1
    a2 = -t2 * cosh(s2) * sinh(s2)
    k2 = t2 * exp(s2) * cosh(s2)
    s3 = sig + 0.5 * h * d2
    d3 = dsig + 0.5 * h * a2
    a3 = -t2 * cosh(s3) * sinh(s3)
    k3 = t2 * exp(s3) * cosh(s3)
    s4 = sig + h * d3
    d4 = dsig + h * a3
    a4 = -t2 * cosh(s4) * sinh(s4)
    k4 = t2 * exp(s4) * cosh(s4)
    return (sig + h / 6.0 * (dsig + 2 * d2 + 2 * d3 + d4),
            dsig + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4),
            kap + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def step_for_tolerance(ode_tolerance: float) -> float:
    """Fixed RK4 step size used for a requested tolerance."""
    return min(0.5 * ode_tolerance ** 0.25, 0.01)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeneratingCurve:
    """One period of (sigma, kappa) sampled on a uniform grid in s."""

    tau: float
    s_grid: np.ndarray
    sigma: np.ndarray
    dsigma: np.ndarray
    kappa: np.ndarray
    s_period: float
    T_period: float
    ode_tolerance: float
    cylinder: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def step(self) -> float:
        return float(self.s_grid[1] - self.s_grid[0])

    @property
    def rho_neck(self) -> float:
        return 1.0 - math.sqrt(max(0.0, 1.0 - self.tau ** 2))

    @property
    def rho_bulge(self) -> float:
        return 1.0 + math.sqrt(max(0.0, 1.0 - self.tau ** 2))

    def energy_drift(self) -> float:
        """max |sigma'^2 + tau^2 cosh^2 sigma - 1| over the stored samples."""
        e = self.dsigma ** 2 + self.tau ** 2 * np.cosh(self.sigma) ** 2 - 1.0
        return float(np.max(np.abs(e)))

    def evaluate(self, s):
        """(sigma, sigma', kappa) at arbitrary s, using the periodic extension.

        Each query is advanced by a single RK4 step from the nearest stored
        node, so the accuracy matches the integrator's local error.
        """
        s = np.asarray(s, dtype=float)
        k = np.floor(s / self.s_period)
        sr = s - k * self.s_period
        h = self.step
        idx = np.clip(np.rint(sr / h).astype(int), 0, len(self.s_grid) - 1)
        ds = sr - self.s_grid[idx]
        sig, dsig, kap = _rk4_step(self.tau, self.sigma[idx], self.dsigma[idx], self.kappa[idx], ds)
        return sig, dsig, kap + k * self.T_period

    def max_abs_curvature(self) -> float:
        if "kmax" not in self._cache:
            m = meridian(self, self.s_grid)
            self._cache["kmax"] = float(max(np.max(np.abs(m.k1)), np.max(np.abs(m.k2))))
        return self._cache["kmax"]

    def tube_halfwidth(self) -> float:
        """Default Fermi tube half-width: min(0.3, 0.8 / max|k_j|)."""
        return min(0.3, 0.8 / self.max_abs_curvature())


@dataclass
class Meridian:
    """Vectorised meridian data at parameters s (all arrays of equal shape)."""

    s: np.ndarray
    sigma: np.ndarray
    dsigma: np.ndarray
    r: np.ndarray
    z: np.ndarray
    dr: np.ndarray
    dz: np.ndarray
    d2r: np.ndarray
    d2z: np.ndarray
    n_r: np.ndarray
    n_z: np.ndarray
    k1: np.ndarray      # parallel circle
    k2: np.ndarray      # meridian


@dataclass(frozen=True)
class SurfaceSample:
    s: float
    theta: float
    position: np.ndarray
    normal: np.ndarray
    k1: float
    k2: float
    A_sq: float
    H: float


@dataclass(frozen=True)
class FermiQuery:
    r: float
    z: float
    t_signed: float
    foot_s: float
    within_tube: bool
    ambiguous: bool = False


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def cylinder_curve(ode_tolerance: float = 1e-12) -> GeneratingCurve:
    """The tau = 1 limit: the unit cylinder, sigma = 0 and kappa(s) = s."""
    h0 = step_for_tolerance(ode_tolerance)
    n = int(math.ceil(CYLINDER_PERIOD / h0))
    s = np.linspace(0.0, CYLINDER_PERIOD, n + 1)
    zero = np.zeros_like(s)
    return GeneratingCurve(1.0, s, zero, zero.copy(), s.copy(), CYLINDER_PERIOD,
                           CYLINDER_PERIOD, ode_tolerance, cylinder=True)


def solve_generating_curve(tau: float, ode_tolerance: float = 1e-12,
                           max_steps: int = 2_000_000) -> GeneratingCurve:
    """Integrate the Delaunay ODE over one period of sigma."""
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"Delaunay parameter must lie in (0, 1], got {tau}")
    if not (1e-14 <= ode_tolerance <= 1e-6):
        raise ValueError(f"ode_tolerance must lie in [1e-14, 1e-6], got {ode_tolerance}")
    if tau == 1.0:
        return cylinder_curve(ode_tolerance)
    if tau < TAU_MIN:
        raise ValueError(f"tau = {tau} below supported range (tau >= {TAU_MIN})")

    h0 = step_for_tolerance(ode_tolerance)
    sig0 = -math.acosh(1.0 / tau)

    # march until sigma' turns negative while sigma > 0: that brackets the half period
    sig, dsig, kap = sig0, 0.0, 0.0
    n = 0
    while True:
        sig_n, dsig_n, kap_n = _rk4_scalar(tau, sig, dsig, kap, h0)
        n += 1
        if dsig_n <= 0.0 and sig_n > 0.0:
            break
        sig, dsig, kap = sig_n, dsig_n, kap_n
        if n >= max_steps:
            raise PeriodNotFoundError(
                f"period not found within budget ({max_steps} steps) for tau={tau}")

    def dsig_after(d):
        return _rk4_scalar(tau, sig, dsig, kap, d)[1]

    d_half = h0 if dsig_after(h0) == 0.0 else brentq(dsig_after, 0.0, h0, xtol=1e-15, rtol=1e-15)
    s_half = (n - 1) * h0 + d_half
    s_period = 2.0 * s_half

    # re-integrate on a grid that ends exactly at s_period
    m = 2 * int(math.ceil(s_half / h0))
    h = s_period / m
    states = [(sig0, 0.0, 0.0)]
    for _ in range(m):
        states.append(_rk4_scalar(tau, *states[-1], h))
    sigma, dsigma, kappa = (np.array(c) for c in zip(*states))
    s_grid = h * np.arange(m + 1)
    s_grid[-1] = s_period
    return GeneratingCurve(float(tau), s_grid, sigma, dsigma, kappa, s_period,
                           float(kappa[-1]), ode_tolerance)


def period(curve: GeneratingCurve) -> tuple[float, float]:
    """(s_period, T_period); T_period = kappa(s_period) in the canonical scale."""
    if curve.cylinder:
        raise ValueError("period undefined at tau=1")
    return curve.s_period, curve.T_period


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def meridian(curve: GeneratingCurve, s) -> Meridian:
    """Profile curve, inward normal and principal curvatures at parameters s.

    Curvatures come from the first and second fundamental forms of the
    immersion with derivatives taken from the ODE, so |H - 1| measures the
    integration error rather than being true by construction.
    """
    s = np.asarray(s, dtype=float)
    tau = curve.tau
    sig, dsig, kap = curve.evaluate(s)
    d2sig = -tau * tau * np.cosh(sig) * np.sinh(sig)
    r = tau * np.exp(sig)
    dr = r * dsig
    d2r = r * (d2sig + dsig ** 2)
    dz = tau * tau * np.exp(sig) * np.cosh(sig)
    d2z = tau * tau * np.exp(2.0 * sig) * dsig
    E = dr ** 2 + dz ** 2
    G = r ** 2
    sqE = np.sqrt(E)
    n_r = -dz / sqE
    n_z = dr / sqE
    L = d2r * n_r + d2z * n_z          # X_ss . N
    Nn = -r * n_r                      # X_thth . N
    return Meridian(s, sig, dsig, r, kap, dr, dz, d2r, d2z, n_r, n_z, Nn / G, L / E)


def immerse(curve: GeneratingCurve, s: float, theta: float) -> SurfaceSample:
    m = meridian(curve, np.array([s]))
    c, sn = math.cos(theta), math.sin(theta)
    r = float(m.r[0])
    pos = np.array([r * c, r * sn, float(m.z[0])])
    normal = np.array([float(m.n_r[0]) * c, float(m.n_r[0]) * sn, float(m.n_z[0])])
    k1, k2 = float(m.k1[0]), float(m.k2[0])
    return SurfaceSample(float(s), float(theta), pos, normal, k1, k2, k1 * k1 + k2 * k2, k1 + k2)


def mean_curvature_grid(curve: GeneratingCurve, n_s: int = 100, n_theta: int = 16) -> np.ndarray:
    """H on an (s, theta) sample grid; theta only enters through the normal."""
    s = np.linspace(0.0, curve.s_period, n_s, endpoint=False)
    m = meridian(curve, s)
    H = m.k1 + m.k2
    return np.repeat(H[:, None], n_theta, axis=1)


def _foot_parameter(curve: GeneratingCurve, z):
    """Parameter s in [0, s_period) (plus period shift) with kappa(s) = z."""
    z = np.asarray(z, dtype=float)
    kz = np.floor(z / curve.T_period)
    zr = z - kz * curve.T_period
    s = np.interp(zr, curve.kappa, curve.s_grid)
    tau = curve.tau
    for _ in range(6):
        sig, dsig, kap = curve.evaluate(s)
        dkap = tau * tau * np.exp(sig) * np.cosh(sig)
        s = s - (kap - zr) / dkap
    return s, kz


def profile_radius(curve: GeneratingCurve, z):
    """rho(z) and d rho / dz for the surface of revolution r = rho(z)."""
    s, _ = _foot_parameter(curve, z)
    sig, dsig, _ = curve.evaluate(s)
    rho = curve.tau * np.exp(sig)
    drho = dsig / (curve.tau * np.cosh(sig))
    if np.ndim(z) == 0:
        return float(rho), float(drho)
    return rho, drho


def offset_mean_curvature(curve: GeneratingCurve, s: float, t: float) -> float:
    """Mean curvature sum k_j / (1 - t k_j) of the surface shifted by t along N."""
    m = meridian(curve, np.array([s]))
    total = 0.0
    for name, k in (("k1 (parallel)", float(m.k1[0])), ("k2 (meridian)", float(m.k2[0]))):
        if abs(t * k) >= 1.0:
            raise ValueError(
                f"offset t={t} beyond focal distance of principal curvature {name}={k:.6g}")
        total += k / (1.0 - t * k)
    return total


# ---------------------------------------------------------------------------
# Signed distance and footpoints
# ---------------------------------------------------------------------------

def _sample_tree(curve: GeneratingCurve, per_period: int = 2048):
    key = ("tree", per_period)
    if key not in curve._cache:
        s = np.linspace(-curve.s_period, 2.0 * curve.s_period, 3 * per_period, endpoint=False)
        m = meridian(curve, s)
        curve._cache[key] = (s, cKDTree(np.column_stack([m.r, m.z])))
    return curve._cache[key]


def _newton_foot(curve, r, z, s, iters=30):
    ds_cap = curve.s_period / 512.0
    for _ in range(iters):
        m = meridian(curve, s)
        er, ez = m.r - r, m.z - z
        g = er * m.dr + ez * m.dz
        gp = m.dr ** 2 + m.dz ** 2 + er * m.d2r + ez * m.d2z
        gp = np.where(gp > 0.0, gp, m.dr ** 2 + m.dz ** 2)
        step = np.clip(g / gp, -ds_cap, ds_cap)
        s = s - step
        if np.max(np.abs(step)) < 1e-14:
            break
    return s


def signed_distance_field(curve: GeneratingCurve, r, z, k_neighbors: int = 24,
                          tie_tol: float = 1e-9):
    """Vectorised signed distance to the surface, positive on the axis side.

    Returns ``(t_signed, foot_s, ambiguous)``. Footpoints are located by a
    nearest-sample search over one period plus its neighbours followed by
    Newton refinement of the squared distance. When two distinct footpoints
    are equally close (within ``tie_tol``) the smaller s wins and the point is
    flagged.
    """
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    shape = np.broadcast_shapes(r.shape, z.shape)
    r = np.broadcast_to(r, shape).ravel()
    z = np.broadcast_to(z, shape).ravel()
    if np.any(r < 0):
        raise ValueError("radial coordinate must be non-negative")

    kz = np.floor(z / curve.T_period)
    zq = z - kz * curve.T_period
    s_samp, tree = _sample_tree(curve)
    _, nbr = tree.query(np.column_stack([r, zq]), k=k_neighbors)
    cand = s_samp[nbr]                                   # (n, k)

    s_best = _newton_foot(curve, r, zq, cand[:, 0].copy())
    # a second candidate from the neighbour set, far from the first in s
    far = np.abs(cand - s_best[:, None]) > curve.s_period / 64.0
    has_alt = far.any(axis=1)
    ambiguous = np.zeros(r.shape, dtype=bool)
    if has_alt.any():
        first_far = np.argmax(far, axis=1)
        s_alt0 = cand[np.arange(len(r)), first_far]
        idx = np.nonzero(has_alt)[0]
        s_alt = _newton_foot(curve, r[idx], zq[idx], s_alt0[idx])
        m1 = meridian(curve, s_best[idx])
        m2 = meridian(curve, s_alt)
        d1 = np.hypot(m1.r - r[idx], m1.z - zq[idx])
        d2 = np.hypot(m2.r - r[idx], m2.z - zq[idx])
        distinct = np.abs(s_alt - s_best[idx]) > 1e-6
        tie = distinct & (np.abs(d1 - d2) <= tie_tol)
        better = distinct & (d2 < d1 - tie_tol)
        pick_alt = better | (tie & (s_alt < s_best[idx]))
        s_best[idx] = np.where(pick_alt, s_alt, s_best[idx])
        ambiguous[idx] = tie

    m = meridian(curve, s_best)
    t = (r - m.r) * m.n_r + (zq - m.z) * m.n_z
    foot = s_best + kz * curve.s_period
    return t.reshape(shape), foot.reshape(shape), ambiguous.reshape(shape)


def signed_distance(curve: GeneratingCurve, r: float, z: float, delta: float | None = None) -> FermiQuery:
    t, foot, amb = signed_distance_field(curve, np.array([r]), np.array([z]))
    delta = curve.tube_halfwidth() if delta is None else delta
    t0 = float(t[0])
    return FermiQuery(float(r), float(z), t0, float(foot[0]), abs(t0) < delta, bool(amb[0]))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def curve_summary(curve: GeneratingCurve) -> dict:
    return {
        "tau": curve.tau,
        "s_period": curve.s_period,
        "T_period": curve.T_period,
        "rho_neck": curve.rho_neck,
        "rho_bulge": curve.rho_bulge,
    }


def write_curve_csv(curve: GeneratingCurve, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "sigma", "dsigma", "kappa"])
        for row in zip(curve.s_grid, curve.sigma, curve.dsigma, curve.kappa):
            w.writerow([repr(float(x)) for x in row])
    return path


def write_curve_json(curve: GeneratingCurve, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(curve_summary(curve), indent=2, sort_keys=True))
    return path
