"""The acceptance gate: every numbered criterion at its stated tolerance.

Each test prints one PASS line with the measured numbers; the heavy Gamma(6)
pipeline is shared across criteria through module-scoped fixtures.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from glhyp import arithmetic as ar
from glhyp import bifurcation as bif
from glhyp import bundle as bu
from glhyp import cuspforms as cf
from glhyp import mesh as mm
from glhyp import solver as gls
from glhyp import spectra as spc
from conftest import random_gamma2


def _report(n, text):
    print(f"\nACCEPTANCE {n}: PASS — {text}")


@pytest.fixture(scope="module")
def g6():
    """Gamma(6), deg 12 pipeline at the default acceptance mesh (h=0.1, Y=20)."""
    mesh = mm.cached_mesh(6, Y=20.0, h=0.1)
    op = spc.assemble(mesh, 1)
    res = spc.lowest_eigenpairs(op, 6)
    xi = cf.ground_space_basis(res, 1)[:, 0]
    beta = bif.brackets(mesh, xi)[1]
    eta = bif.solve_eta(mesh, xi)
    return {"mesh": mesh, "op": op, "res": res, "xi": xi, "beta": beta,
            "eta": eta, "prob": gls.GLProblem(mesh, 1)}


@pytest.fixture(scope="module")
def g2b5():
    """Gamma(2), deg 5 state used by the corrected multiplicity-3 criteria."""
    mesh = mm.cached_mesh(2, Y=80.0, h=0.05)
    op = spc.assemble(mesh, 5)
    res = spc.lowest_eigenpairs(op, 6, sigma=2.5)
    basis = cf.ground_space_basis(res, 3)
    return {"mesh": mesh, "res": res, "basis": basis}


def test_criterion_1_exact_group_data():
    t0 = time.time()
    for n in range(2, 13):
        s = ar.surface(n)
        assert s.m == ar.cusp_count(n)
        assert s.g == ar.genus(n)
        assert s.area_over_pi == Fraction(n * s.m, 3)          # Eq. (2.8N)
        assert s.area_over_pi == 2 * (2 * s.g - 2 + s.m)       # Gauss-Bonnet
    m6, g7 = ar.cusp_count(6), ar.genus(7)
    assert (m6, g7, ar.cusp_count(2)) == (12, 3, 3)
    dt = time.time() - t0
    assert dt < 1.0
    _report(1, f"N=2..12 exact cusp/genus/area identities ({dt * 1e3:.0f} ms)")


def test_criterion_2_cocycle_and_equivariance(rng):
    t0 = time.time()
    worst_coc = 0.0
    for b in (1, 2, 3):
        for _ in range(334):
            g1, g2 = random_gamma2(rng), random_gamma2(rng)
            z = complex(rng.uniform(-2, 2), rng.uniform(0.05, 3.0))
            worst_coc = max(worst_coc, bu.cocycle_residual(g1, g2, z, b))
    assert worst_coc < 1e-12
    worst_eq = 0.0
    for _ in range(100):
        g = random_gamma2(rng)
        z = complex(rng.uniform(-2, 2), rng.uniform(0.2, 3.0))
        worst_eq = max(worst_eq, bu.equivariance_residual_connection(g, z, 1.0))
    assert worst_eq < 1e-9
    dt = time.time() - t0
    assert dt < 10.0
    _report(2, f"cocycle {worst_coc:.2e} < 1e-12, a^b equivariance {worst_eq:.2e} < 1e-9 ({dt:.1f} s)")


def test_criterion_3_flux_quantization():
    t0 = time.time()
    h = 0.1
    fluxes = {}
    for Y in (10.0, 20.0, 40.0):
        mesh = mm.cached_mesh(2, Y=Y, h=h)
        flux = bu.degree_from_flux(mesh, 1.0)
        exact = 1.0 - 3.0 / (2.0 * math.pi * Y)
        assert abs(flux - exact) < 2 * h * h
        fluxes[Y] = flux
    # linear-in-1/Y extrapolation from the two largest truncations
    extrap = 2 * fluxes[40.0] - fluxes[20.0]
    assert abs(extrap - 1.0) < 0.005
    dt = time.time() - t0
    assert dt < 60.0
    _report(3, f"flux matches 1 - 3/(2 pi Y) per mesh, extrapolates to {extrap:.5f} ({dt:.1f} s)")


def test_criterion_4_cylinder_oracles():
    t0 = time.time()
    for b in (1, 2, 3):
        assert spc.cylinder_symbolic_residual(b) == 0
    # discrete residual order on the periodic strip
    def residual(h):
        m = spc.periodic_strip_mesh(1.0, 3.0, h)
        op = spc.assemble(m, 1, dirichlet_caps=False)
        pos = m.dof_positions
        v = np.array([spc.exact_cylinder_eigenfunction(complex(z), 1) for z in pos])
        rr = op.stiffness @ v - op.mass @ v
        wq = m.geometry()["wq"]
        mask = (pos.imag > 1.15) & (pos.imag < 2.6)
        return np.max(np.abs(rr[mask]) / wq[mask]) / np.max(np.abs(v[mask]))

    errs = [residual(h) for h in (0.2, 0.1, 0.05)]
    slope = math.log(errs[0] / errs[-1]) / math.log(4.0)
    assert abs(slope - 2.0) < 0.2
    hardy = {}
    for b in (1, 2):
        hardy[b] = spc.cylinder_lowest(0, b, 1.0, 40.0, 800)[0]
        assert hardy[b] >= 0.25 + b * b - 1e-3
    assert spc.generalized_mode_check(0, 1) == 1.25
    assert spc.generalized_mode_check(1, 0) == 1.25
    dt = time.time() - t0
    assert dt < 60.0
    _report(4, f"symbolic residual 0, strip order {slope:.2f}, Hardy bottoms "
               f"{hardy[1]:.3f}/{hardy[2]:.3f} ({dt:.1f} s)")


def test_criterion_5_spectral_theorem(g6, g2b5):
    t0 = time.time()
    vals6 = g6["res"].eigenvalues
    in_window = np.sum((vals6 >= 0.9) & (vals6 <= 1.1))
    assert in_window == 1 == cf.dim_cusp_forms(g6["mesh"].surf, 2)
    assert np.sum((vals6 > 1.1) & (vals6 < 1.2)) == 0
    above = vals6[vals6 > 1.1]
    assert len(above) > 0 and above.min() >= 1.2
    vals2 = g2b5["res"].eigenvalues
    cluster = vals2[np.abs(vals2 - 5.0) <= 0.25]
    assert len(cluster) == 3 == cf.dim_cusp_forms(g2b5["mesh"].surf, 10)
    dt = time.time() - t0
    assert dt < 600.0
    _report(5, f"Gamma(6): one eigenvalue {vals6[0]:.4f} in [0.9,1.1], gap to "
               f"{above.min():.3f} >= 1.2; Gamma(2) deg 5: cluster "
               f"{np.round(cluster, 3)} within 5% of 5 ({dt:.1f} s)")


@pytest.mark.xfail(strict=True, reason=(
    "The criterion's literal configuration inherits the paper's dimension "
    "erratum: dim S_4(Gamma(2)) = 0 classically (not 3 = km/2 branch), so the "
    "operator for deg 2 has no eigenvalue cluster at 2 -- confirmed "
    "numerically (lowest eigenvalues sit at the essential bottom 4.25). The "
    "corrected configuration (deg 5, three eigenvalues at 5) passes above."))
def test_criterion_5_literal_gamma2_deg2():
    mesh = mm.cached_mesh(2, Y=20.0, h=0.08)
    op = spc.assemble(mesh, 2)
    res = spc.lowest_eigenpairs(op, 6, sigma=1.0)
    cluster = res.eigenvalues[np.abs(res.eigenvalues - 2.0) <= 0.1]
    assert len(cluster) == 3


def test_criterion_6_integral_identities(g6, g2b5):
    t0 = time.time()
    reports = []
    # Gamma(6) ground state
    xi6, eta6, beta6 = g6["xi"], g6["eta"], g6["beta"]
    mesh6 = g6["mesh"]
    assert beta6 > 1.0
    lhs = bif.curl_norm_sq(mesh6, eta6) / mesh6.surf.area
    rel1 = abs(lhs / (0.25 * (beta6 - 1.0)) - 1.0)
    pair = bif.pairing_energy(mesh6, 1, xi6, eta6)
    rel2 = abs(pair / (0.5 * (1.0 - beta6)) - 1.0)
    assert rel1 < 0.02 and rel2 < 0.02
    reports.append(f"G6: {rel1:.3f}/{rel2:.3f}")
    # Gamma(2) deg 5, beta-minimizing direction
    mesh2 = g2b5["mesh"]
    rep = bif.beta_min_max(g2b5["basis"], mesh2, seed=0)
    assert rep.beta > 1.0
    xi2 = g2b5["basis"] @ rep.direction_min
    xi2 = xi2 / math.sqrt(float(mesh2.bracket(np.abs(xi2) ** 2).real))
    beta2 = bif.brackets(mesh2, xi2)[1]
    eta2 = bif.solve_eta(mesh2, xi2)
    lhs = bif.curl_norm_sq(mesh2, eta2) / mesh2.surf.area
    rel3 = abs(lhs / (0.25 * (beta2 - 1.0)) - 1.0)
    pair = bif.pairing_energy(mesh2, 5, xi2, eta2)
    rel4 = abs(pair / (0.5 * (1.0 - beta2)) - 1.0)
    assert rel3 < 0.02 and rel4 < 0.02
    reports.append(f"G2b5: {rel3:.3f}/{rel4:.3f}")
    dt = time.time() - t0
    assert dt < 120.0
    _report(6, f"Eq.(5.15')/(5.16) relative errors {'; '.join(reports)}, "
               f"beta = {beta6:.4f} > 1 ({dt:.1f} s)")


def test_criterion_7_bifurcation_laws(g6):
    t0 = time.time()
    mesh, xi, eta, beta, prob = (g6["mesh"], g6["xi"], g6["eta"], g6["beta"],
                                 g6["prob"])
    kappa, b = 1.0, 1.0
    assert kappa > bif.kappa_c(beta)
    denom = (kappa ** 2 - 0.5) * beta + 0.5
    area = mesh.surf.area
    xs = np.linspace(0.01, 0.08, 8)
    de, dens = [], []
    for x in xs:
        r = (b + x) / kappa ** 2
        s2, valid = bif.s_squared(r, kappa, b, beta)
        assert valid
        psi0, al0 = bif.leading_order_state(math.sqrt(s2), xi, eta)
        psi0[~prob.free_psi] = 0.0
        out = prob.minimize(gls.GLState(psi=psi0, alpha=al0, kappa=kappa, r=r),
                            tol=1e-6, max_iter=20000)
        e_norm = prob.normal_state(kappa, r).energy
        assert out.energy < e_norm          # (c) strictly below the normal state
        de.append(out.energy - e_norm)
        dens.append(prob.mean_density(out))
    # (a) density slope
    slope = np.polyfit(xs, dens, 1)[0]
    slope_theory = 1.0 / denom
    assert abs(slope / slope_theory - 1.0) < 0.10
    # (b) quadratic energy coefficient; the linear term absorbs the O(h^2)
    # discrete-threshold shift, the cubic the next branch order
    vand = np.stack([xs, xs ** 2, xs ** 3], axis=1)
    coef = np.linalg.lstsq(vand, np.array(de), rcond=None)[0]
    q_theory = -area / (4.0 * denom)
    assert abs(coef[1] / q_theory - 1.0) < 0.10
    dt = time.time() - t0
    assert dt < 3600.0
    _report(7, f"slope {slope:.4f} vs {slope_theory:.4f} "
               f"({abs(slope / slope_theory - 1):.1%}); quadratic {coef[1]:.2f} vs "
               f"{q_theory:.2f} ({abs(coef[1] / q_theory - 1):.1%}); all dE < 0 "
               f"({dt:.0f} s)")


def test_criterion_8_stability_crossover(g6):
    t0 = time.time()
    mesh, prob = g6["mesh"], g6["prob"]
    lam1 = g6["res"].eigenvalues[0]
    # sign flip of the Hessian bottom within |kappa^2 - b_r| < 0.02 (b_r = 1)
    assert gls.hessian_bottom(mesh, 1, math.sqrt(0.98), 1.0) > 0
    assert gls.hessian_bottom(mesh, 1, math.sqrt(1.02), 1.0) < 0
    flip = abs(lam1 - 1.0)
    assert flip < 0.02
    # b_r > kappa^2: a random perturbation relaxes back to the normal state
    rng = np.random.default_rng(7)
    psi0 = 1e-3 * (rng.standard_normal(mesh.ndof) + 1j * rng.standard_normal(mesh.ndof))
    psi0[~prob.free_psi] = 0.0
    out = prob.minimize(gls.GLState(psi=psi0, alpha=np.zeros(prob.ne),
                                    kappa=0.95, r=1.0), tol=1e-7, max_iter=6000)
    final = prob.mean_density(out)
    assert final < 1e-6
    dt = time.time() - t0
    assert dt < 900.0
    _report(8, f"Hessian bottom flips at kappa^2 = {lam1:.4f} (|off| = {flip:.4f} "
               f"< 0.02); relaxation to <|psi|^2> = {final:.1e} ({dt:.0f} s)")


def test_criterion_9_gradient_correctness(g6, rng):
    t0 = time.time()
    prob = g6["prob"]
    kappa, r = 1.0, 1.03
    psi0 = 0.3 * (rng.standard_normal(prob.nd) + 1j * rng.standard_normal(prob.nd))
    psi0[~prob.free_psi] = 0.0
    al0 = 0.2 * rng.standard_normal(prob.ne)
    gp, ga = prob.gradient(psi0, al0, kappa, r)
    worst = 0.0
    for _ in range(20):
        dp = rng.standard_normal(prob.nd) + 1j * rng.standard_normal(prob.nd)
        dp[~prob.free_psi] = 0.0
        da = rng.standard_normal(prob.ne)
        eps = 1e-5
        fd = (prob.energy(psi0 + eps * dp, al0 + eps * da, kappa, r)
              - prob.energy(psi0 - eps * dp, al0 - eps * da, kappa, r)) / (2 * eps)
        an = 2 * np.vdot(dp, gp).real + da @ ga
        worst = max(worst, abs(fd - an) / max(abs(fd), 1e-12))
    assert worst < 1e-6
    dt = time.time() - t0
    assert dt < 60.0
    _report(9, f"20 directions, max relative FD error {worst:.2e} < 1e-6 ({dt:.1f} s)")


def test_criterion_10_determinism(tmp_path):
    from click.testing import CliRunner

    from glhyp.cli import main as cli_main

    t0 = time.time()
    runner = CliRunner()
    args = ["spectrum", "-N", "2", "--degree", "3", "--h", "0.25", "--Y", "8",
            "--count", "3", "--seed", "42", "--outdir", str(tmp_path)]
    assert runner.invoke(cli_main, args).exit_code == 0
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert runner.invoke(cli_main, args).exit_code == 0
    second = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert first == second
    args2 = ["cuspform", "-N", "2", "--degree", "3", "--depth", "8", "--nx", "8",
             "--seed", "42", "--outdir", str(tmp_path)]
    assert runner.invoke(cli_main, args2).exit_code == 0
    third = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert runner.invoke(cli_main, args2).exit_code == 0
    fourth = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert third == fourth
    dt = time.time() - t0
    _report(10, f"byte-identical spectrum and cuspform reruns ({dt:.1f} s)")
