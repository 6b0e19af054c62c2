import numpy as np
import pytest
import scipy.sparse as sp

from cahn_delaunay import bloch, chsolver, profile


def _radial_errors(order, m, sizes=(40, 80, 160)):
    interior, weighted_asym = [], []
    for n in sizes:
        g = chsolver.GridSpec(n, 32, 3.0, 6.0, True, order)
        A, b = chsolver.radial_operator(g, m)
        r = g.r
        u = r ** m * np.exp(-r ** 2)
        exact = (4 * r ** 2 - 4 * (m + 1)) * u
        err = np.abs(A @ u[:-1] + b * u[-1] - exact[:-1])
        sel = (r[:-1] > 0.5) & (r[:-1] < 2.5)
        interior.append(err[sel].max())
        keep = np.arange(n) if m == 0 else np.arange(1, n)
        S = (sp.diags(chsolver.radial_weights(g)[keep]) @ A[keep][:, keep]).toarray()
        weighted_asym.append(np.abs(S - S.T).max() / np.abs(S).max())
    return np.array(interior), max(weighted_asym)


@pytest.mark.parametrize("order,expected", [(2, 1.8), (4, 3.5)])
@pytest.mark.parametrize("m", [0, 1, 2])
def test_radial_operator_interior_order_and_symmetry(order, expected, m):
    err, asym = _radial_errors(order, m)
    assert np.all(np.log2(err[:-1] / err[1:]) > expected)
    assert asym < 1e-13


@pytest.mark.parametrize("order", [2, 4])
def test_axial_operator_order(order):
    errs = []
    for n in (32, 64, 128):
        g = chsolver.GridSpec(40, n, 3.0, 6.0, False, order)
        u = np.cos(2 * np.pi * g.z / 6.0)
        errs.append(np.abs(chsolver.axial_operator(g) @ u + (2 * np.pi / 6.0) ** 2 * u).max())
    errs = np.array(errs)
    assert np.all(np.log2(errs[:-1] / errs[1:]) > order - 0.2)


def test_half_cell_axial_operator_matches_even_extension():
    g = chsolver.GridSpec(40, 48, 3.0, 6.0, True, 4)
    u = np.cos(2 * np.pi * g.z / 6.0) + 0.3 * np.cos(4 * np.pi * g.z / 6.0)
    full = g.full()
    uf = np.cos(2 * np.pi * full.z / 6.0) + 0.3 * np.cos(4 * np.pi * full.z / 6.0)
    np.testing.assert_allclose(chsolver.axial_operator(g) @ u,
                               (chsolver.axial_operator(full) @ uf)[:g.n_rows], atol=1e-10)


def test_quadrature_weights_integrate_r_dr():
    g = chsolver.GridSpec(120, 32, 3.0, 6.0, True, 4)
    w = chsolver.radial_weights(g)
    r = g.r[:-1]
    exact = 0.5 * (1 - np.exp(-9.0))
    assert w @ np.exp(-r ** 2) == pytest.approx(exact, rel=1e-3)


def test_grid_selection_and_resolution(curve06):
    g = chsolver.choose_grid(curve06, 0.1)
    assert g.Rmax == pytest.approx(curve06.rho_bulge + 1.0)
    assert 0.1 / g.hr >= 6 and 0.1 / g.hz >= 6
    chsolver.check_resolution(g, 0.1)
    with pytest.raises(chsolver.UnderResolvedError):
        chsolver.check_resolution(g, 0.05)
    with pytest.raises(ValueError):
        chsolver.GridSpec(16, 64, 2.0, 4.0)


def test_solution_converges_quadratically(solution06):
    assert solution06.residual_norm <= 1e-9
    h = solution06.history
    above_floor = [h[k + 1] / h[k] ** 2 for k in range(len(h) - 1) if h[k + 1] > 1e-10]
    assert above_floor and above_floor[-1] < 50


def test_solution_multiplier_matches_profile(solution06, profile01):
    assert solution06.ell == pytest.approx(profile01.ell, abs=0.01)
    umax, bound = chsolver.max_principle_bound(solution06)
    assert umax <= bound


def test_residual_of_solution_is_small(solution06):
    F = chsolver.residual(solution06.u, solution06.ell, solution06.grid, solution06.epsilon)
    assert np.abs(F).max() <= 1e-9


def test_save_load_roundtrip(solution06, tmp_path):
    path = solution06.save(tmp_path / "sol.json")
    back = chsolver.CHSolution.load(path)
    np.testing.assert_array_equal(back.u, solution06.u)
    assert back.grid == solution06.grid and back.ell == solution06.ell


def test_full_cell_is_even_and_periodic(solution06):
    full = chsolver.full_cell(solution06)
    n = full.grid.n_rows
    np.testing.assert_array_equal(full.u[1:], full.u[1:][::-1])
    assert n == 2 * solution06.grid.Nz


def test_bloch_matrix_at_zero_is_newton_jacobian(solution06):
    full = chsolver.full_cell(solution06)
    lap = chsolver.assemble_laplacian(full.grid)
    eps = solution06.epsilon
    J = eps * lap.A + sp.diags(profile.fprime(full.u[:, :-1].ravel()) / eps)
    L = bloch.assemble(solution06, 0, 0.0).L
    assert abs(L - J).max() <= 1e-9 * abs(J).max()


def test_ansatz_and_decay(solution06, profile01, curve06):
    ans = chsolver.validate_ansatz(solution06, profile01, curve06)
    assert ans["tube_error"] < 0.5
    for side in ("outer", "inner"):
        d = chsolver.decay_check(solution06, curve06, side)
        assert 1.0 < d["c_fit"] < 1.6


def test_fit_power():
    p, c = chsolver.fit_power([0.1, 0.05, 0.025], [3e-2, 7.5e-3, 1.875e-3])
    assert p == pytest.approx(2.0) and c == pytest.approx(3.0)


def test_newton_rejects_large_epsilon(curve06):
    prof = profile.solve_profile(0.3)
    with pytest.raises(chsolver.UnderResolvedError):
        chsolver.solve(curve06, prof)
