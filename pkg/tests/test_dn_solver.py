from __future__ import annotations

import math

import numpy as np
import pytest

from wavestab.dn_solver import (
    OperatorMatrix,
    SingularSystemError,
    StripGrid,
    apply_dn,
    apply_dn_from_derivative,
    apply_flat_dn,
    cheb_diff,
    cheb_nodes,
    dn_approx,
    dn_matrix,
    dump_matrix,
    flat_dn_matrix,
    load_matrix,
    multiplier_matrix,
    norm_weight,
    operator_norm,
    solve_elliptic_strip,
    to_fourier,
)
from wavestab.resolvent_lab import band_mask
from wavestab.soliton import Grid1D, SolitonProfile, build_profile
from wavestab.symbols import Params, RegionTag, flat_dn_symbol, in_singular_set, mu_a


def _setup(eps, N, M=24):
    grid = Grid1D(30.0 / eps, N)
    return Params(epsilon=eps, a_hat=0.4), grid, StripGrid(grid, M), build_profile(eps, grid)


@pytest.fixture(scope="module")
def curved01():
    return _setup(0.1, 128)


@pytest.fixture(scope="module")
def curved05():
    return _setup(0.05, 256)


def _cc_weights(M):
    """Clenshaw-Curtis weights on the nodes of cheb_nodes(M) (interval length 1)."""
    t = np.cos(np.pi * np.arange(M) / (M - 1))
    k = np.arange(M)
    V = np.cos(np.outer(k, np.arccos(t)))
    moments = np.zeros(M)
    even = k % 2 == 0
    moments[even] = 2.0 / (1.0 - k[even] ** 2)
    return np.linalg.solve(V, moments) / 2.0


def _strip_h1(u, grid, M, eta, a):
    """Discrete H^1 norm on the flattened strip with the weighted x-derivative."""
    w = _cc_weights(M)
    u_hat = np.fft.fft(u, axis=0)
    ux = np.fft.ifft((1j * grid.xi - a)[:, None] * u_hat, axis=0)
    us = u @ cheb_diff(M).T
    dens = (1 + eta**2) * np.abs(u) ** 2 + np.abs(ux) ** 2 + np.abs(us) ** 2
    return math.sqrt(grid.h * np.sum(dens * w[None, :]))


def _hhalf_norm(f, grid, eta, a):
    f_hat = np.fft.fft(f)
    w = norm_weight("Hhalf_star", grid.xi, eta, a)
    return math.sqrt(grid.h / grid.N * np.sum(np.abs(w * f_hat) ** 2))


# ---------------------------------------------------------------------------
# Chebyshev building blocks
# ---------------------------------------------------------------------------

def test_cheb_nodes_cover_the_strip():
    s = cheb_nodes(17)
    assert s[0] == 0.0 and s[-1] == -1.0
    assert np.all(np.diff(s) < 0)


def test_cheb_diff_is_exact_on_polynomials():
    s = cheb_nodes(16)
    D = cheb_diff(16)
    np.testing.assert_allclose(D @ s**5, 5 * s**4, atol=1e-11)
    np.testing.assert_allclose(D @ np.ones(16), 0.0, atol=1e-12)


def test_clenshaw_curtis_helper_integrates_polynomials():
    s = cheb_nodes(20)
    assert np.sum(_cc_weights(20) * s**4) == pytest.approx(0.2, abs=1e-14)


def test_strip_grid_minimum_size():
    with pytest.raises(ValueError, match="16"):
        StripGrid(Grid1D(10.0, 32), 8)


# ---------------------------------------------------------------------------
# flat operator
# ---------------------------------------------------------------------------

def test_flat_dn_kills_constants():
    grid = Grid1D(10.0, 64)
    np.testing.assert_allclose(apply_flat_dn(np.full(64, 2.5), 0.0, 0.0, grid), 0.0, atol=1e-15)


@pytest.mark.parametrize("eta, a", [(0.0, 0.0), (1.0, 0.04), (3.0, 0.1)])
def test_flat_dn_on_grid_mode_is_an_eigenfunction(eta, a):
    grid = Grid1D(math.pi, 64)
    xi0 = 5.0
    f = np.exp(1j * xi0 * grid.x)
    np.testing.assert_allclose(apply_flat_dn(f, eta, a, grid), flat_dn_symbol(xi0, eta, a) * f,
                               atol=1e-12)


def test_flat_dn_gaussian_self_convergence():
    coarse, fine = Grid1D(20.0, 128), Grid1D(20.0, 256)
    g = lambda x: np.exp(-x**2)  # noqa: E731
    out_c = apply_flat_dn(g(coarse.x), 0.0, 0.0, coarse)
    out_f = apply_flat_dn(g(fine.x), 0.0, 0.0, fine)
    np.testing.assert_allclose(out_c, out_f[::2], atol=1e-10)


def test_flat_dn_matrix_is_the_multiplier():
    grid = Grid1D(10.0, 32)
    op = flat_dn_matrix(1.0, 0.04, grid)
    f = np.random.default_rng(0).standard_normal(32)
    np.testing.assert_allclose(op @ f, apply_flat_dn(f, 1.0, 0.04, grid), atol=1e-13)


# ---------------------------------------------------------------------------
# strip solver
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("eta, a", [(0.5, 0.04), (2.0, 0.0), (0.0, 0.3)])
def test_flat_strip_field_closed_form(eta, a):
    grid = Grid1D(math.pi, 32)
    strip = StripGrid(grid, 24)
    xi0 = 3.0
    f = np.exp(1j * xi0 * grid.x)
    field = solve_elliptic_strip(f, eta, a, SolitonProfile.flat(grid, 0.1), strip)
    mu = mu_a(xi0, eta, a)
    s = strip.z_nodes
    expected = np.cosh(mu * (s + 1.0))[None, :] / np.cosh(mu) * f[:, None]
    np.testing.assert_allclose(field.values, expected, atol=1e-12)
    assert field.trace_ok
    np.testing.assert_allclose(field.values[:, 0], f, rtol=0, atol=1e-13)


def test_curved_strip_trace_and_residual(curved01):
    _, grid, strip, prof = curved01
    f = np.exp(-(grid.x * 0.1 / 3) ** 2).astype(complex)
    field = solve_elliptic_strip(f, 0.5, 0.04, prof, strip)
    assert field.trace_ok
    assert field.residual <= 1e-10
    assert field.iterations >= 1


def test_manufactured_harmonic_function_gives_exact_flux():
    # Phi = cosh(k (z + 1)) cos(k x) is harmonic with zero flux at the bottom;
    # its trace on z = zeta_c and its normal flux are known in closed form.
    eps = 0.1
    grid = Grid1D(30.0 / eps, 256)
    strip = StripGrid(grid, 32)
    prof = build_profile(eps, grid)
    k = 2 * math.pi * 3 / (2 * grid.X)
    z, dz = prof.zeta_c, prof.dzeta_c
    f = np.cosh(k * (z + 1)) * np.cos(k * grid.x)
    phi_x = -k * np.cosh(k * (z + 1)) * np.sin(k * grid.x)
    phi_z = k * np.sinh(k * (z + 1)) * np.cos(k * grid.x)
    expected = phi_z - dz * phi_x
    got = apply_dn(f, 0.0, 0.0, prof, strip)
    np.testing.assert_allclose(got, expected, atol=1e-12)


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_curved_potential_close_to_flat_extension(eps):
    _, grid, strip, prof = _setup(eps, 256)
    a, eta = 0.4 * eps, 0.5
    f = np.exp(-(grid.x * eps / 3) ** 2)
    u = solve_elliptic_strip(f, eta, a, prof, strip).values
    u0 = solve_elliptic_strip(f, eta, a, SolitonProfile.flat(grid, eps), strip).values
    ratio = _strip_h1(u - u0, grid, strip.M, eta, a) / _hhalf_norm(f, grid, eta, a)
    assert ratio <= 50 * eps**2


def test_singular_flat_block_is_reported():
    grid = Grid1D(10.0, 32)
    with pytest.raises(SingularSystemError, match="cosh"):
        solve_elliptic_strip(np.ones(32), 0.0, math.pi / 2, SolitonProfile.flat(grid, 0.0),
                             StripGrid(grid, 16))


def test_zero_weight_zero_frequency_is_not_singular():
    # the Neumann bottom keeps the constant mode well posed; constants have zero flux
    grid = Grid1D(10.0, 32)
    prof = SolitonProfile.flat(grid, 0.0)
    np.testing.assert_allclose(apply_dn(np.ones(32), 0.0, 0.0, prof, StripGrid(grid, 16)), 0.0,
                               atol=1e-12)


def test_strip_rejects_mismatched_grids(curved01):
    _, _, _, prof = curved01
    other = StripGrid(Grid1D(10.0, 64), 16)
    with pytest.raises(ValueError, match="same x grid"):
        solve_elliptic_strip(np.ones(64), 1.0, 0.1, prof, other)


# ---------------------------------------------------------------------------
# apply_dn
# ---------------------------------------------------------------------------

def test_apply_dn_flat_profile_matches_multiplier():
    grid = Grid1D(40.0, 512)
    strip = StripGrid(grid, 32)
    f = np.exp(-(grid.x / 4) ** 2) * (1 + 0.3j * np.sin(grid.x / 3))
    flat = SolitonProfile.flat(grid, 0.1)
    got = apply_dn(f, 0.7, 0.04, flat, strip)
    ref = apply_flat_dn(f, 0.7, 0.04, grid)
    assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)


def test_apply_dn_of_zero_is_zero(curved01):
    _, grid, strip, prof = curved01
    np.testing.assert_array_equal(apply_dn(np.zeros(grid.N), 1.0, 0.04, prof, strip), 0.0)


@pytest.mark.parametrize("eta", [0.5, 3.0])
def test_adjoint_identity_on_resolved_modes(curved01, eta):
    # the identity G(a)^* = G(-a) holds for the continuous operator; the top
    # quarter of the discrete spectrum carries an aliasing defect, so the
    # comparison is made on |xi| <= xi_max / 2
    _, grid, strip, prof = curved01
    a = 0.04
    Gp = to_fourier(dn_matrix(eta, a, prof, strip).entries)
    Gm = to_fourier(dn_matrix(eta, -a, prof, strip).entries)
    keep = np.abs(grid.xi) <= np.max(np.abs(grid.xi)) / 2
    diff = (Gp.conj().T - Gm)[np.ix_(keep, keep)]
    assert np.max(np.abs(diff)) <= 1e-6


def test_adjoint_defect_is_confined_to_aliased_modes(curved01):
    _, grid, strip, prof = curved01
    Gp = to_fourier(dn_matrix(1.0, 0.04, prof, strip).entries)
    Gm = to_fourier(dn_matrix(1.0, -0.04, prof, strip).entries)
    full = np.max(np.abs(Gp.conj().T - Gm))
    assert 1e-8 < full <= 10 * 0.1**4


def test_apply_dn_matches_matrix(curved01):
    _, grid, strip, prof = curved01
    f = np.random.default_rng(1).standard_normal(grid.N) + 0j
    G = dn_matrix(1.5, 0.04, prof, strip)
    np.testing.assert_allclose(G @ f, apply_dn(f, 1.5, 0.04, prof, strip), atol=1e-11)


def test_apply_dn_from_derivative_agrees_on_periodic_data(curved01):
    _, grid, strip, prof = curved01
    f = np.exp(-(grid.x / 20) ** 2)
    df = grid.derivative(f)
    np.testing.assert_allclose(apply_dn_from_derivative(df, prof, strip),
                               apply_dn(f, 0.0, 0.0, prof, strip), atol=1e-11)


def test_unshifted_flux_differs_by_slope_term(curved01):
    _, grid, strip, prof = curved01
    f = np.exp(-(grid.x / 20) ** 2) + 0j
    a = 0.04
    shifted = apply_dn(f, 1.0, a, prof, strip)
    plain = apply_dn(f, 1.0, a, prof, strip, flux_shift=False)
    np.testing.assert_allclose(plain - shifted, -a * prof.dzeta_c * f, atol=1e-13)


# ---------------------------------------------------------------------------
# pseudodifferential approximations
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind, eta", [("principal", 3.0), ("modified", 2.0), ("first_order", 1.0)])
def test_flat_profile_approximations_are_diagonal(kind, eta):
    grid = Grid1D(20.0, 64)
    params = Params(epsilon=0.1, a_hat=0.4)
    op = dn_approx(eta, params, SolitonProfile.flat(grid, 0.1), kind, grid)
    B = to_fourier(op.entries)
    off = B - np.diag(np.diag(B))
    assert np.max(np.abs(off)) <= 1e-12
    mu = mu_a(grid.xi, eta, params.a)
    expected = mu if kind == "principal" else flat_dn_symbol(grid.xi, eta, params.a)
    np.testing.assert_allclose(np.diag(B), expected, atol=1e-12)


def test_dn_approx_region_validity():
    grid = Grid1D(20.0, 32)
    params = Params(epsilon=0.1, a_hat=0.4)
    prof = SolitonProfile.flat(grid, 0.1)
    with pytest.raises(ValueError, match="eta"):
        dn_approx(1.0, params, prof, "modified", grid)
    with pytest.raises(ValueError, match="eta"):
        dn_approx(3.0, params, prof, "first_order", grid)
    with pytest.raises(ValueError, match="kind"):
        dn_approx(3.0, params, prof, "second_order", grid)


def test_modified_symbol_error_is_order_eps_squared(curved05):
    params, grid, strip, prof = curved05
    G = dn_matrix(3.0, params.a, prof, strip)
    approx = dn_approx(3.0, params, prof, "modified", grid)
    err = operator_norm(OperatorMatrix(G.entries - approx.entries))
    assert err <= 100 * params.epsilon**2


def test_first_order_expansion_beats_flat_operator(curved01):
    params, grid, strip, prof = curved01
    eta = 1.0
    G = dn_matrix(eta, params.a, prof, strip)
    G0 = flat_dn_matrix(eta, params.a, grid)
    G1 = dn_approx(eta, params, prof, "first_order", grid)
    flipped = dn_approx(eta, params, prof, "first_order", grid, printed_sign=True)
    xi = grid.xi

    def norm(E):
        return operator_norm(OperatorMatrix(E, "Hhalf_star", "L2", eta, params.a), xi)

    eps2 = params.epsilon**2
    zeroth = norm(G.entries - G0.entries)
    first = norm(G.entries - G1.entries)
    assert zeroth <= 100 * eps2
    assert first <= 0.1 * zeroth
    assert norm(G.entries - flipped.entries) > zeroth


# ---------------------------------------------------------------------------
# band estimates
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.1, 0.05, 0.025])
def test_singular_band_is_close_to_minus_laplacian(eps):
    params, grid, strip, prof = _setup(eps, 256)
    eta = params.K * eps
    G = dn_matrix(eta, params.a, prof, strip).entries
    mu = mu_a(grid.xi, eta, params.a)
    B = to_fourier(G - multiplier_matrix(mu**2))
    rows = in_singular_set(grid.xi, eta, params)
    assert rows.any()
    assert np.linalg.norm(B[rows], 2) <= 100 * (params.K * eps) ** 3


@pytest.mark.parametrize("eps", [0.1, 0.05])
@pytest.mark.parametrize("eta", [0.3, 1.0])
def test_regular_band_second_order_remainder(eps, eta):
    params, grid, strip, prof = _setup(eps, 256)
    a, xi = params.a, grid.xi
    G = dn_matrix(eta, a, prof, strip).entries
    mu = mu_a(xi, eta, a)
    Q = multiplier_matrix(1.0 / np.cosh(mu))
    Dx = multiplier_matrix(1j * xi - a)
    Z = np.diag(prof.zeta_c)
    div = Dx @ Z @ Dx - eta**2 * Z
    R = to_fourier(G - multiplier_matrix(mu * np.tanh(mu)) + Q @ div @ Q)
    keep = band_mask(RegionTag.R_reg, xi, eta, params)
    assert keep.any()
    assert np.linalg.norm(R[np.ix_(keep, keep)], 2) <= 100 * eps**3


# ---------------------------------------------------------------------------
# norms and the binary container
# ---------------------------------------------------------------------------

def test_operator_norm_of_identity():
    assert operator_norm(OperatorMatrix(np.eye(16))) == pytest.approx(1.0, abs=1e-14)


def test_operator_norm_of_multiplier():
    grid = Grid1D(10.0, 64)
    m = 1.0 + np.cos(grid.xi)
    assert operator_norm(OperatorMatrix(multiplier_matrix(m))) == pytest.approx(np.max(np.abs(m)),
                                                                                abs=1e-12)


def test_operator_norm_weighted_multiplier():
    grid = Grid1D(30.0, 128)
    eta, a = 1.0, 0.04
    sym = flat_dn_symbol(grid.xi, eta, a)
    op = OperatorMatrix(multiplier_matrix(sym), "Hhalf_star", "L2", eta, a)
    bound = np.max(np.abs(sym) / norm_weight("Hhalf_star", grid.xi, eta, a))
    got = operator_norm(op, grid.xi)
    assert np.isfinite(got)
    assert got <= 1.1 * bound
    assert got == pytest.approx(bound, rel=1e-10)


def test_operator_norm_power_iteration_agrees_with_svd():
    rng = np.random.default_rng(5)
    A = OperatorMatrix(rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64)))
    assert operator_norm(A, method="power", iterations=200) == pytest.approx(
        operator_norm(A, method="svd"), rel=1e-3)


def test_operator_norm_requires_wavenumbers_for_weights():
    with pytest.raises(ValueError, match="wavenumbers"):
        operator_norm(OperatorMatrix(np.eye(4), "H1", "L2"))
    with pytest.raises(ValueError, match="method"):
        operator_norm(OperatorMatrix(np.eye(4)), method="lanczos")


def test_unknown_norm_tag_rejected():
    with pytest.raises(ValueError, match="norm tag"):
        OperatorMatrix(np.eye(2), "H2", "L2")


def test_matrix_dump_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    op = OperatorMatrix(rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)),
                        ("Hhalf_star", "L2"), "L2", 1.5, 0.04)
    path = tmp_path / "g.bin"
    dump_matrix(path, op)
    back = load_matrix(path)
    np.testing.assert_array_equal(back.entries, op.entries)
    assert (back.src_norm, back.dst_norm, back.eta, back.a) == (("Hhalf_star", "L2"), "L2", 1.5, 0.04)
    assert path.read_bytes()[:8] == b"WSOPMAT1"


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"not a matrix")
    with pytest.raises(ValueError, match="operator-matrix"):
        load_matrix(path)
