import math

import numpy as np
import pytest

from cahn_delaunay import delaunay


@pytest.mark.parametrize("tau", [0.2, 0.6, 0.9])
def test_mean_curvature_is_one(tau):
    c = delaunay.solve_generating_curve(tau)
    H = delaunay.mean_curvature_grid(c, 100, 16)
    assert H.shape == (100, 16)
    assert np.max(np.abs(H - 1.0)) < 1e-10


def test_energy_constraint_and_radii(curve06):
    assert curve06.energy_drift() < 1e-12
    m = delaunay.meridian(curve06, np.array([0.0, 0.5 * curve06.s_period]))
    assert m.r[0] == pytest.approx(1 - math.sqrt(1 - 0.36), abs=1e-12)
    assert m.r[1] == pytest.approx(1 + math.sqrt(1 - 0.36), abs=1e-12)


def test_cylinder_limit():
    c = delaunay.solve_generating_curve(1.0)
    assert c.cylinder
    m = delaunay.meridian(c, np.linspace(0, 1, 5))
    np.testing.assert_allclose(m.r, 1.0)
    np.testing.assert_allclose(m.k1, 1.0, atol=1e-14)
    np.testing.assert_allclose(m.k2, 0.0, atol=1e-14)
    with pytest.raises(ValueError, match="period undefined"):
        delaunay.period(c)


def test_period_is_monotone_towards_cylinder():
    T = [delaunay.solve_generating_curve(t).T_period for t in (0.95, 0.99, 0.999)]
    assert T[0] < T[1] < T[2] < 2 * math.pi


def test_input_validation():
    with pytest.raises(ValueError):
        delaunay.solve_generating_curve(0.0)
    with pytest.raises(ValueError):
        delaunay.solve_generating_curve(1.2)
    with pytest.raises(ValueError):
        delaunay.solve_generating_curve(0.5, ode_tolerance=1e-3)


def test_evaluate_is_periodic(curve06):
    s = np.array([0.3, 1.7])
    a = curve06.evaluate(s)
    b = curve06.evaluate(s + curve06.s_period)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_allclose(b[2] - a[2], curve06.T_period, atol=1e-12)


def test_offset_mean_curvature_matches_parallel_surface(curve06):
    s, t = 1.1, 0.05
    H = delaunay.offset_mean_curvature(curve06, s, t)
    m = delaunay.meridian(curve06, np.array([s]))
    k1, k2 = m.k1[0], m.k2[0]
    assert H == pytest.approx(k1 / (1 - t * k1) + k2 / (1 - t * k2))
    with pytest.raises(ValueError, match="focal"):
        delaunay.offset_mean_curvature(curve06, 0.0, 10.0)


def test_signed_distance_against_dense_sampling(curve06, rng):
    s = np.linspace(-curve06.s_period, 2 * curve06.s_period, 200_000)
    m = delaunay.meridian(curve06, s)
    r = rng.uniform(0.0, 2.5, 200)
    z = rng.uniform(0.0, curve06.T_period, 200)
    t, _, _ = delaunay.signed_distance_field(curve06, r, z)
    d = np.sqrt((r[:, None] - m.r[None, :]) ** 2 + (z[:, None] - m.z[None, :]) ** 2).min(axis=1)
    keep = np.abs(t) > 0.02
    np.testing.assert_allclose(np.abs(t[keep]), d[keep], atol=1e-6)
    rho, _ = delaunay.profile_radius(curve06, z)
    assert np.all(np.sign(t[keep]) == np.sign(rho - r)[keep])


def test_axis_query_at_neck_is_ambiguous_free_and_inside(curve06):
    q = delaunay.signed_distance(curve06, 0.0, 0.0)
    assert q.t_signed == pytest.approx(curve06.rho_neck, abs=1e-8)


def test_export_roundtrip(curve06, tmp_path):
    p = delaunay.write_curve_csv(curve06, tmp_path / "c.csv")
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 0], curve06.s_grid)
    j = delaunay.write_curve_json(curve06, tmp_path / "c.json")
    assert "T_period" in j.read_text()
