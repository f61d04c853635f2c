import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glhyp import bifurcation as bif
from glhyp import cuspforms as cf
from glhyp import mesh as mm
from glhyp import spectra as spc


def test_brackets_basics(mesh2_small, rng):
    m = mesh2_small
    xi = rng.standard_normal(m.ndof) + 1j * rng.standard_normal(m.ndof)
    xi /= math.sqrt(m.bracket(np.abs(xi) ** 2))
    b2, b4 = bif.brackets(m, xi)
    assert abs(b2 - 1.0) < 1e-10
    # constant |xi|^2 = 1 on the truncated mesh gives <|xi|^4> = <|xi|^2> < 1
    one = np.ones(m.ndof, dtype=complex)
    c2, c4 = bif.brackets(m, one)
    assert abs(c4 - c2) < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_brackets_cauchy_schwarz(seed):
    m = mm.cached_mesh(2, Y=10.0, h=0.2)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(m.ndof) + 1j * rng.standard_normal(m.ndof)
    b2, b4 = bif.brackets(m, xi)
    assert b4 >= b2 ** 2 - 1e-12 * max(1.0, b4)


def test_kappa_c():
    assert abs(bif.kappa_c(2.0) - 0.5) < 1e-15
    assert bif.kappa_c(1e9) < 1.0 / math.sqrt(2.0)
    assert bif.kappa_c(1.0 + 1e-6) < 1e-2
    # monotone increasing
    assert bif.kappa_c(3.0) > bif.kappa_c(2.0)
    with pytest.raises(bif.BifurcationError):
        bif.kappa_c(1.0)


def test_coefficient_R():
    assert bif.coefficient_R(2.0, 1.0) == 1.5
    # kappa^2 = 1/2 makes the beta coefficient vanish
    assert abs(bif.coefficient_R(7.3, math.sqrt(0.5)) - 1.0) < 1e-14
    # kappa^2 R = (kappa^2 - 1/2) beta + 1/2
    for kap, beta in ((0.9, 1.3), (1.2, 2.7)):
        lhs = kap ** 2 * bif.coefficient_R(beta, kap)
        rhs = (kap ** 2 - 0.5) * beta + 0.5
        assert abs(lhs - rhs) < 1e-14


def test_s_squared():
    s2, ok = bif.s_squared(1.0, 1.0, 1.0, 2.0)
    assert s2 == 0.0 and not ok
    s2, ok = bif.s_squared(1.03, 1.0, 1.0, 2.0)
    assert abs(s2 - 0.02) < 1e-15 and ok
    # kappa below threshold with positive x: invalid side
    beta = 2.0
    kc = bif.kappa_c(beta)
    kap = 0.5 * kc
    s2, ok = bif.s_squared((1.0 + 0.05) / kap ** 2 * 1.0, kap, 1.0, beta)
    assert not ok


def test_energy_expansion_values():
    area = 24 * math.pi
    en, de = bif.energy_expansion(1.0, 1.0, 1.0, 2.0, area)
    assert abs(en - 18 * math.pi) < 1e-12
    assert de == 0.0
    en, de = bif.energy_expansion(1.01, 1.0, 1.0, 2.0, area)
    assert abs(de - (-6 * math.pi * 1e-4 / 1.5)) < 1e-12
    # crossover: the denominator beta (kappa^2 - kappa_c^2) flips sign at kappa_c
    beta = 2.0
    kc = bif.kappa_c(beta)
    _, de_above = bif.energy_expansion(1.01, kc + 0.05, 1.0, beta, area)
    _, de_below = bif.energy_expansion(1.01, kc - 0.05, 1.0, beta, area)
    assert de_above < 0 < de_below


def test_branch_energy_consistency():
    # dE = -(|Sigma|/4)(kappa^2 R) s^4 exactly at leading order
    area, b, kap, beta = 24 * math.pi, 1.0, 1.0, 1.7
    s2 = 0.05 ** 2
    denom = (kap ** 2 - 0.5) * beta + 0.5
    r = (b + s2 * denom) / kap ** 2
    _, de = bif.energy_expansion(r, kap, b, beta, area)
    de_s4 = -(area / 4.0) * (kap ** 2 * bif.coefficient_R(beta, kap)) * s2 ** 2
    assert abs(de - de_s4) < 1e-12 * abs(de)


def test_degenerate_bounds():
    area = 2 * math.pi
    out = bif.degenerate_energy_bounds(1.02, 1.0, 1.0, 1.5, 2.5, area)
    assert out["beta_bound_side"] == "lower"
    assert out["bound_from_beta"] < out["bound_from_beta_plus"] < 0


def test_solve_eta_trivial(mesh2_small):
    m = mesh2_small
    # constant density exactly normalized on the truncated mesh: eta = 0
    c = 1.0 / math.sqrt(m.bracket(np.ones(m.ndof)))
    xi = np.full(m.ndof, c, dtype=complex)
    eta = bif.solve_eta(m, xi)
    assert np.max(np.abs(eta)) < 1e-10


def test_solve_eta_guard(mesh2_small):
    with pytest.raises(bif.BifurcationError):
        bif.solve_eta(mesh2_small, 2.0 * np.ones(mesh2_small.ndof, dtype=complex))


def test_eta_identities_gamma6(ground6, mesh6):
    xi, eta, beta = ground6["xi"], ground6["eta"], ground6["beta"]
    assert beta > 1.0
    lhs = bif.curl_norm_sq(mesh6, eta) / mesh6.surf.area
    rhs = 0.25 * (beta - 1.0)
    assert abs(lhs / rhs - 1.0) < 0.02
    pair = bif.pairing_energy(mesh6, 1, xi, eta)
    rhs2 = 0.5 * (1.0 - beta)
    assert abs(pair / rhs2 - 1.0) < 0.02
    assert bif.coclosed_residual(mesh6, eta) < 1e-10


def test_beta_report_dim1(ground6, mesh6):
    rep = bif.beta_min_max(ground6["xi"], mesh6)
    assert rep.dim == 1
    assert rep.beta == rep.beta_plus
    assert rep.beta > 1.0
    assert 0.0 < rep.kappa_c < 1.0 / math.sqrt(2.0)


def test_beta_min_max_dim3(spectrum2_b5, mesh2_fine):
    basis = spectrum2_b5["basis"]
    rep = bif.beta_min_max(basis, mesh2_fine, seed=0)
    assert rep.dim == 3
    assert 1.0 < rep.beta <= rep.beta_plus
    for (_, b4) in rep.brackets:
        assert rep.beta <= b4 + 1e-9
        assert b4 <= rep.beta_plus + 1e-9
    # two-method agreement: restart the optimizer from another seed
    rep2 = bif.beta_min_max(basis, mesh2_fine, seed=123)
    assert abs(rep.beta - rep2.beta) < 1e-6
    assert abs(rep.beta_plus - rep2.beta_plus) < 1e-6


def test_beta_gauge_invariance(ground6, mesh6, rng):
    xi = ground6["xi"]
    theta = rng.standard_normal(mesh6.ndof)
    rep0 = bif.beta_min_max(xi, mesh6)
    rep1 = bif.beta_min_max(xi * np.exp(1j * theta), mesh6)
    assert abs(rep0.beta - rep1.beta) < 1e-12


def test_empty_basis_rejected(mesh2_small):
    with pytest.raises(bif.BifurcationError):
        bif.beta_min_max(np.zeros((mesh2_small.ndof, 0)), mesh2_small)


def test_b_matrix_empty(mesh2_small, rng):
    xi = rng.standard_normal(mesh2_small.ndof).astype(complex)
    B = bif.b_matrix(mesh2_small, None, xi)
    assert B.shape == (0, 0)


def test_b_matrix_synthetic_identity(mesh2_small):
    m = mesh2_small
    M1 = spc.whitney_mass(m)
    rng = np.random.default_rng(5)
    v1 = rng.standard_normal(M1.shape[0])
    v2 = rng.standard_normal(M1.shape[0])
    # M1-orthonormalize the synthetic pair
    v1 /= math.sqrt(v1 @ (M1 @ v1))
    v2 -= v1 * (v1 @ (M1 @ v2))
    v2 /= math.sqrt(v2 @ (M1 @ v2))
    omega = np.stack([v1, v2], axis=1)
    B = bif.b_matrix(m, omega, np.ones(m.ndof, dtype=complex))
    assert np.allclose(B, np.eye(2), atol=1e-12)


def test_b_matrix_positive_definite_harmonic(rng):
    m = mm.cached_mesh(6, Y=8.0, h=0.2)
    omega = bif.harmonic_basis(m, count=2)
    xi = rng.standard_normal(m.ndof) + 1j * rng.standard_normal(m.ndof)
    B = bif.b_matrix(m, omega, xi)
    assert B.shape == (2, 2)
    w = np.linalg.eigvalsh(0.5 * (B + B.T))
    assert w[0] > 0


def test_harmonic_basis_genus0():
    m = mm.cached_mesh(2, Y=8.0, h=0.2)
    assert bif.harmonic_basis(m, count=0).shape[1] == 0


def test_harmonic_basis_properties():
    m = mm.cached_mesh(6, Y=8.0, h=0.2)
    basis = bif.harmonic_basis(m, count=2)
    D = spc.circ_matrix(m)
    G = spc.grad_matrix(m)
    M1 = spc.whitney_mass(m)
    R = spc.cap_circulation_matrix(m)
    ah = m.geometry()["area_hyp"]
    for j in range(2):
        v = basis[:, j]
        assert math.sqrt(np.sum((D @ v) ** 2 / ah)) < 1e-8
        assert np.linalg.norm(G.T @ (M1 @ v)) < 1e-8
        assert np.abs(R @ v).max() < 1e-10


def test_harmonic_t_coefficients_are_higher_order():
    """The minimizer's alpha has only O(s^2)-relative harmonic content."""
    from glhyp import solver as gls

    m = mm.cached_mesh(6, Y=8.0, h=0.2)
    op = spc.assemble(m, 1)
    res = spc.lowest_eigenpairs(op, 3)
    xi = cf.ground_space_basis(res, 1)[:, 0]
    beta = bif.brackets(m, xi)[1]
    eta = bif.solve_eta(m, xi)
    prob = gls.GLProblem(m, 1)
    kappa, x = 1.0, 0.06
    r = (1.0 + x) / kappa ** 2
    s2, _ = bif.s_squared(r, kappa, 1.0, beta)
    psi0, al0 = bif.leading_order_state(math.sqrt(s2), xi, eta)
    psi0[~prob.free_psi] = 0.0
    out = prob.minimize(gls.GLState(psi=psi0, alpha=al0, kappa=kappa, r=r),
                        tol=1e-8, max_iter=8000)
    omega = bif.harmonic_basis(m, count=2)
    t = bif.harmonic_coefficients(m, omega, out.alpha)
    # alpha itself is O(s^2); its harmonic part is a higher-order residual
    alpha_norm = math.sqrt(out.alpha @ (spc.whitney_mass(m) @ out.alpha))
    assert np.linalg.norm(t) < 0.2 * max(alpha_norm, 1e-12)


def test_leading_order_state(ground6):
    psi, alpha = bif.leading_order_state(0.0, ground6["xi"], ground6["eta"])
    assert np.all(psi == 0) and np.all(alpha == 0)
    psi, alpha = bif.leading_order_state(0.1, ground6["xi"], ground6["eta"])
    assert np.allclose(psi, 0.1 * ground6["xi"])
    assert np.allclose(alpha, 0.01 * ground6["eta"])
