"""Hill-equation monodromy, discriminants and a discrete Fourier-Laplace transform.

The transform of a sequence sampled at s = sigma + T k is

    hat h(sigma, zeta) = sum_k exp(-i (sigma + T k) zeta / T) h(sigma + T k),
    zeta = mu + i nu,

with inverse h(sigma + T k) = (1/2pi) int_0^{2pi} exp(i (sigma + T k) zeta / T) hat h d mu.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.signal import resample

MIN_SAMPLES = 64
DET_TOL = 1e-10
PARABOLIC_TOL = 1e-6
TAIL_TOL = 1e-10


class GridTooCoarseError(ValueError):
    pass


@dataclass
class HillResult:
    mode_n: int
    potential: np.ndarray
    s_period: float
    monodromy: np.ndarray
    discriminant: float
    classification: str
    floquet_exponents: tuple[complex, complex]
    jordan_block: bool | None = None

    def as_dict(self) -> dict:
        return {
            "n": self.mode_n,
            "discriminant": self.discriminant,
            "classification": self.classification,
            "jordan_block": self.jordan_block,
            "floquet_exponents": [[z.real, z.imag] for z in self.floquet_exponents],
        }


# ---------------------------------------------------------------------------
# Monodromy
# ---------------------------------------------------------------------------

def _integrate_fundamental(q_fine: np.ndarray, h: float) -> np.ndarray:
    """RK4 for Y' = [[0,1],[-q,0]] Y, Y(0) = I.

    ``q_fine`` holds q at nodes 0, h/2, h, 3h/2, ... so every RK4 stage
    uses an exact sample rather than an interpolant.
    """
    a, b, c, d = 1.0, 0.0, 0.0, 1.0     # columns (a, c) and (b, d): (v, v')
    n_steps = (len(q_fine) - 1) // 2
    hh = 0.5 * h
    h6 = h / 6.0
    for i in range(n_steps):
        q0 = q_fine[2 * i]
        qm = q_fine[2 * i + 1]
        q1 = q_fine[2 * i + 2]
        # column 1
        k1v, k1w = c, -q0 * a
        k2v, k2w = c + hh * k1w, -qm * (a + hh * k1v)
        k3v, k3w = c + hh * k2w, -qm * (a + hh * k2v)
        k4v, k4w = c + h * k3w, -q1 * (a + h * k3v)
        a, c = a + h6 * (k1v + 2 * k2v + 2 * k3v + k4v), c + h6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        # column 2
        k1v, k1w = d, -q0 * b
        k2v, k2w = d + hh * k1w, -qm * (b + hh * k1v)
        k3v, k3w = d + hh * k2w, -qm * (b + hh * k2v)
        k4v, k4w = d + h * k3w, -q1 * (b + h * k3v)
        b, d = b + h6 * (k1v + 2 * k2v + 2 * k3v + k4v), d + h6 * (k1w + 2 * k2w + 2 * k3w + k4w)
    return np.array([[a, b], [c, d]])


def default_step_count(potential: np.ndarray, s_period: float, omega_h: float = 4e-3) -> int:
    """Steps per period so that h * sqrt(max|q| + 1) <= omega_h."""
    omega = math.sqrt(float(np.max(np.abs(potential))) + 1.0)
    return max(len(potential), int(math.ceil(s_period * omega / omega_h)))


def monodromy(potential, s_period: float, n_steps: int | None = None) -> np.ndarray:
    """Fundamental matrix over one period of v'' + q v = 0.

    ``potential`` samples q on the uniform grid s_j = j s_period / N,
    j = 0..N-1 (endpoint excluded). It is resampled by FFT onto the RK4
    nodes and midpoints.
    """
    q = np.asarray(potential, dtype=float)
    if q.ndim != 1 or len(q) < MIN_SAMPLES:
        raise GridTooCoarseError(
            f"potential needs at least {MIN_SAMPLES} samples per period, got {len(q)}")
    if n_steps is None:
        n_steps = default_step_count(q, s_period)
    if np.ptp(q) == 0.0:
        q_fine = np.full(2 * n_steps, q[0])
    else:
        q_fine = resample(q, 2 * n_steps)
    q_fine = np.append(q_fine, q_fine[0])
    M = _integrate_fundamental(q_fine, s_period / n_steps)
    det_defect = abs(np.linalg.det(M) - 1.0) / max(1.0, float(np.sum(M * M)))
    if det_defect > DET_TOL:
        raise ArithmeticError(f"monodromy determinant defect {det_defect:.3e} exceeds {DET_TOL}")
    return M


def determinant_defect(M: np.ndarray) -> float:
    """|det M - 1| relative to the rounding scale |M|_F^2 of the 2x2 determinant."""
    return abs(float(np.linalg.det(M)) - 1.0) / max(1.0, float(np.sum(M * M)))


def classify(discriminant: float, tol: float = PARABOLIC_TOL) -> str:
    if abs(discriminant - 2.0) <= tol or abs(discriminant + 2.0) <= tol:
        return "parabolic"
    if abs(discriminant) < 2.0:
        return "elliptic"
    return "hyperbolic"


def jordan_block(M: np.ndarray, tol: float = 1e-6) -> bool:
    """True when M - sI (s = sign of the trace) has rank 1, False for rank 0."""
    sgn = 1.0 if np.trace(M) >= 0 else -1.0
    sv = np.linalg.svd(M - sgn * np.eye(2), compute_uv=False)
    return bool(sv[0] > tol * max(1.0, float(np.linalg.norm(M))))


def floquet_exponents(M: np.ndarray, s_period: float) -> tuple[complex, complex]:
    ev = np.linalg.eigvals(M).astype(complex)
    ev = ev[np.argsort(-np.abs(ev))]
    # the small multiplier of a strongly hyperbolic block is lost to rounding
    ev[1] = 1.0 / ev[0]
    return tuple(complex(np.log(e) / s_period) for e in ev)


def hill_potential(curve, mode_n: int) -> np.ndarray:
    """q_n(s) = tau^2 cosh(2 sigma) - n^2 on the curve grid without the closing sample."""
    sig = curve.sigma[:-1]
    return curve.tau ** 2 * np.cosh(2.0 * sig) - float(mode_n) ** 2


def hill_analyze(curve, mode_n: int, parabolic_tol: float = PARABOLIC_TOL,
                 n_steps: int | None = None) -> HillResult:
    if mode_n < 0:
        raise ValueError("angular mode must be non-negative")
    q = hill_potential(curve, mode_n)
    M = monodromy(q, curve.s_period, n_steps=n_steps)
    disc = float(np.trace(M))
    cls = classify(disc, parabolic_tol)
    jb = jordan_block(M) if cls == "parabolic" else None
    return HillResult(mode_n, q, curve.s_period, M, disc, cls,
                      floquet_exponents(M, curve.s_period), jb)


# ---------------------------------------------------------------------------
# Fourier-Laplace transform
# ---------------------------------------------------------------------------

@dataclass
class TransformPair:
    """Samples of hat h on offsets x (rows) and the mu grid (columns)."""

    offsets: np.ndarray
    ks: np.ndarray
    nu: float
    mu: np.ndarray
    transform: np.ndarray
    period: float = 1.0
    truncated: bool = False
    tail_estimate: float = 0.0

    @property
    def zeta(self) -> np.ndarray:
        return self.mu + 1j * self.nu


def window_half_width(decay_rate: float, nu: float, tol: float = TAIL_TOL, period: float = 1.0) -> int:
    """Lattice half-width K with exp(-(decay_rate - |nu|/T) T K) <= tol."""
    margin = decay_rate - abs(nu) / period
    if margin <= 0:
        raise ValueError("weight exceeds the decay rate: the transform series diverges")
    return int(math.ceil(-math.log(tol) / (margin * period)))


def forward_transform(samples, ks, nu: float, mu_grid_size: int, offsets=(0.0,),
                      period: float = 1.0, tol: float = TAIL_TOL) -> TransformPair:
    """Evaluate the truncated transform series on a uniform mu grid over [0, 2pi).

    ``samples[i, j]`` is h(offsets[i] + period * ks[j]). A truncation flag is
    raised when the weighted samples at the window edges exceed ``tol``
    relative to the largest weighted sample.
    """
    x0 = np.atleast_1d(np.asarray(offsets, dtype=float))
    ks = np.asarray(ks, dtype=int)
    h = np.asarray(samples, dtype=complex).reshape(len(x0), len(ks))
    mu = 2.0 * np.pi * np.arange(mu_grid_size) / mu_grid_size
    zeta = mu + 1j * nu
    s = x0[:, None] + period * ks[None, :]                          # (n_off, n_k)
    weighted = np.abs(np.exp(nu * s / period) * h)
    scale = max(float(weighted.max()), np.finfo(float).tiny)
    edge = float(max(weighted[:, 0].max(), weighted[:, -1].max())) / scale
    truncated = edge > tol
    if truncated:
        warnings.warn(f"transform window truncation estimate {edge:.2e} above {tol:.0e}",
                      RuntimeWarning, stacklevel=2)
    phase = np.exp(-1j * s[:, :, None] * zeta[None, None, :] / period)  # (n_off, n_k, n_mu)
    hat = np.einsum("ok,okm->om", h, phase)
    return TransformPair(x0, ks, float(nu), mu, hat, float(period), truncated, edge)


def inverse_transform(pair: TransformPair, s) -> np.ndarray:
    """Trapezoid quadrature of the inversion integral at points s = offset + period k.

    Each s must lie on one of the stored offsets modulo the period.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    T = pair.period
    frac = np.mod(s, T)
    out = np.empty(s.shape, dtype=complex)
    for i, (si, fi) in enumerate(zip(s, frac)):
        dist = np.abs(np.angle(np.exp(2j * np.pi * (pair.offsets - fi) / T))) * T / (2 * np.pi)
        row = int(np.argmin(dist))
        if dist[row] > 1e-9 * max(1.0, T):
            raise ValueError(f"s = {si} is not on the sampled offset lattice")
        integrand = np.exp(1j * si * pair.zeta / T) * pair.transform[row]
        out[i] = integrand.mean()          # (1/2pi) * (2pi/M) * sum
    return out


def plancherel_sides(pair: TransformPair, samples) -> tuple[float, float]:
    """Both sides of (1/2pi) int int |hat h|^2 d mu d x = int |e^{nu x / T} h|^2 dx.

    The x-integral is replaced by the mean over the stored offsets times T,
    the s-integral by the matching Riemann sum over the same samples.
    """
    h = np.asarray(samples, dtype=complex).reshape(len(pair.offsets), len(pair.ks))
    T = pair.period
    lhs = float(np.mean(np.abs(pair.transform) ** 2)) * T
    s = pair.offsets[:, None] + T * pair.ks[None, :]
    rhs = float(np.mean(np.sum(np.abs(np.exp(pair.nu * s / T) * h) ** 2, axis=1))) * T
    return lhs, rhs


def bloch_second_difference(n: int, h: float, zeta: float, period: float) -> sp.csr_matrix:
    """Periodic second difference conjugated by exp(i zeta x / T).

    Discretises (d/dx + i zeta / T)^2 on n points with spacing h and period n h.
    """
    w = np.exp(1j * zeta * h / period)
    main = np.full(n, -2.0 + 0j)
    up = np.full(n - 1, w)
    lo = np.full(n - 1, np.conj(w))
    D = sp.diags([lo, main, up], [-1, 0, 1], shape=(n, n), format="lil", dtype=complex)
    D[0, n - 1] += np.conj(w)
    D[n - 1, 0] += w
    return (D.tocsr() / (h * h))
