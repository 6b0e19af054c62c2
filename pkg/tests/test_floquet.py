import math

import numpy as np
import pytest

from cahn_delaunay import delaunay, floquet


def test_constant_potential_oracles():
    M = floquet.monodromy(np.full(64, 2.0), 3.0)
    assert np.trace(M) == pytest.approx(2 * math.cos(math.sqrt(2) * 3), abs=1e-9)
    M = floquet.monodromy(np.full(64, -3.0), 2 * math.pi)
    assert np.trace(M) == pytest.approx(2 * math.cosh(2 * math.pi * math.sqrt(3)), rel=1e-9)
    np.testing.assert_allclose(floquet.monodromy(np.zeros(64), 1.0), [[1, 1], [0, 1]], atol=1e-12)


def test_too_few_samples_rejected():
    with pytest.raises(floquet.GridTooCoarseError):
        floquet.monodromy(np.zeros(16), 1.0)


def test_classification():
    assert floquet.classify(2.0 + 1e-9) == "parabolic"
    assert floquet.classify(1.0) == "elliptic"
    assert floquet.classify(3.0) == "hyperbolic"


@pytest.mark.parametrize("tau", [0.3, 0.7])
def test_hill_modes(tau):
    c = delaunay.solve_generating_curve(tau)
    r0, r1, r2 = (floquet.hill_analyze(c, n) for n in range(3))
    assert abs(r0.discriminant - 2) < 1e-8 and r0.jordan_block
    assert abs(r1.discriminant - 2) < 1e-8 and r1.jordan_block
    assert r2.classification == "hyperbolic" and r2.discriminant > 2.01


def _sequence(ks, offsets, period, rate=0.8):
    s = np.asarray(offsets)[:, None] + period * np.asarray(ks)[None, :]
    return np.exp(-rate * np.abs(s)) * np.cos(1.3 * s)


def test_transform_round_trip_and_plancherel():
    period, nu = 2.0, 0.3
    K = floquet.window_half_width(0.8, nu, period=period)
    ks = np.arange(-K, K + 1)
    offsets = np.linspace(0, period, 7, endpoint=False)
    h = _sequence(ks, offsets, period)
    pair = floquet.forward_transform(h, ks, nu, 4 * len(ks) + 1, offsets, period)
    assert not pair.truncated
    s = (offsets[:, None] + period * ks[None, :]).ravel()
    back = floquet.inverse_transform(pair, s)
    np.testing.assert_allclose(back.real, h.ravel(), atol=1e-8)
    lhs, rhs = floquet.plancherel_sides(pair, h)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_inversion_independent_of_contour_shift():
    period = 1.5
    ks = np.arange(-60, 61)
    h = _sequence(ks, [0.0], period)
    s = period * ks[50:70]
    vals = [floquet.inverse_transform(floquet.forward_transform(h, ks, nu, 301, [0.0], period), s)
            for nu in (-0.4, 0.0, 0.4)]
    np.testing.assert_allclose(vals[0], vals[1], atol=1e-8)
    np.testing.assert_allclose(vals[2], vals[1], atol=1e-8)


def test_off_lattice_inversion_rejected():
    ks = np.arange(-5, 6)
    with pytest.warns(RuntimeWarning, match="truncation"):
        pair = floquet.forward_transform(np.ones(11) * 1e-30, ks, 0.0, 16)
    with pytest.raises(ValueError, match="lattice"):
        floquet.inverse_transform(pair, [0.5])


def test_bloch_difference_is_hermitian_and_shifted():
    n, T = 64, 2 * math.pi
    D = floquet.bloch_second_difference(n, T / n, 0.7, T).toarray()
    np.testing.assert_allclose(D, D.conj().T, atol=1e-12)
    lam = np.linalg.eigvalsh(D).max()
    assert lam == pytest.approx(-(0.7 / T) ** 2, rel=1e-2)
