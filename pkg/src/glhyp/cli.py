"""Command-line entry point: surface data, meshes, spectra, cusp forms,
Abrikosov functionals, bifurcation sweeps and full GL solves.

Configuration comes from an optional TOML file (--config) with command-line
flags winning.  Every run writes a manifest JSON (config echo, package and
library versions, exact surface data) next to its outputs.  Exit codes:
0 ok, 2 usage, 3 numerical failure, 4 model guard (b = 1/2, non-integer b,
trivial ground space, dimension mismatch).
"""
from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import __version__
from .arithmetic import GroupError, surface
from .bundle import BundleData, BundleError, degree_from_flux
from .mesh import MeshError, build_mesh
from .spectra import SpectraError, assemble, lowest_eigenpairs
from .cuspforms import (CuspFormError, DimensionMismatch, cusp_chart_values,
                        dim_cusp_forms, ground_space_basis)
from .bifurcation import (BifurcationError, beta_min_max, energy_expansion,
                          leading_order_state, s_squared, solve_eta)
from .solver import GLProblem, GLState, SolverError, hessian_bottom

EXIT_NUMERICAL = 3
EXIT_GUARD = 4


def f17(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class RunConfig:
    level: int = 6
    degree: int = 12
    kappa: float = 1.0
    r: float | None = None
    x_min: float = 0.01
    x_max: float = 0.08
    x_count: int = 8
    Y: float = 20.0
    h: float = 0.1
    s0: float = 1.0
    tol: float = 1e-6
    max_iter: int = 20000
    count: int = 8
    depth: int = 30
    seed: int = 0
    outdir: str = "."
    threads: int = 0


def load_config(path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path:
        import tomli

        with open(path, "rb") as fh:
            data = tomli.load(fh)
        known = {f.name for f in fields(RunConfig)}
        bad = set(data) - known
        if bad:
            raise click.UsageError(f"unknown config keys: {sorted(bad)}")
        cfg = replace(cfg, **data)
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **clean)


def set_threads(n: int) -> None:
    if n and n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(n)
        except ImportError:
            pass


def guard_bundle(cfg: RunConfig):
    surf = surface(cfg.level)
    bundle = BundleData(surf, cfg.degree)
    b = bundle.b_exact
    if b == Fraction(1, 2):
        raise BundleError(
            "b = 1/2 rejected: the eigenvalue b is embedded at the bottom of the "
            "essential spectrum and the discrete solver cannot separate it")
    if b.denominator != 1:
        raise BundleError(
            f"b = {b} is not an integer; the discrete bundle phases require integer b")
    return surf, bundle


def write_manifest(cfg: RunConfig, name: str, extra: dict) -> Path:
    import scipy

    surf = surface(cfg.level)
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": name,
        "config": asdict(cfg),
        "versions": {"glhyp": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": ".".join(map(str, sys.version_info[:3]))},
        "surface": json.loads(surf.to_json()),
    }
    manifest.update(extra)
    path = out / f"{name}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def run_guarded(fn):
    try:
        fn()
    except (BundleError, DimensionMismatch) as exc:
        click.echo(f"model guard: {exc}", err=True)
        sys.exit(EXIT_GUARD)
    except (GroupError, MeshError, SpectraError, SolverError, CuspFormError,
            BifurcationError, np.linalg.LinAlgError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)


pass_conf = click.option("--config", type=click.Path(exists=True), default=None,
                         help="TOML config file; flags override it.")


@click.group()
@click.version_option(__version__)
def main():
    """Vortex solutions of the Ginzburg-Landau equations on H/Gamma(N)."""


def common_options(fn):
    for opt in reversed([
        click.option("--level", "-N", type=int, default=None),
        click.option("--degree", type=int, default=None),
        click.option("--Y", "Y", type=float, default=None),
        click.option("--h", "h", type=float, default=None),
        click.option("--tol", type=float, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--depth", type=int, default=None),
        click.option("--count", type=int, default=None),
        click.option("--outdir", type=str, default=None),
        click.option("--threads", type=int, default=None),
        pass_conf,
    ]):
        fn = opt(fn)
    return fn


@main.command("surface")
@click.argument("level", type=int)
@click.option("--json", "as_json", is_flag=True)
def cmd_surface(level, as_json):
    """Exact group data of H/Gamma(N): cusps, genus, area, coset index."""
    if level < 2:
        raise click.UsageError("level must be >= 2 (Gamma(1) has elliptic points)")
    surf = surface(level)
    if as_json:
        click.echo(surf.to_json())
        return
    click.echo(f"level N        : {surf.level}")
    click.echo(f"cusps m        : {surf.m}")
    click.echo(f"genus g        : {surf.g}")
    click.echo(f"area / pi      : {surf.area_over_pi}")
    click.echo(f"coset index    : {len(surf.coset_reps)}")
    click.echo("cusps          : " + " ".join(
        "inf" if c.is_infinity else f"{c.p}/{c.q}" for c in surf.cusps))


@main.command("mesh")
@common_options
def cmd_mesh(config, **kw):
    """Build the truncated mesh and write it as JSON."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf = surface(cfg.level)
        mesh = build_mesh(surf, cfg.Y, cfg.h, cfg.s0)
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "mesh.json").write_text(mesh.to_json())
        exact = surf.area - surf.m / cfg.Y
        write_manifest(cfg, "mesh", {"nodes": mesh.n_nodes, "dofs": mesh.ndof,
                                     "tris": mesh.n_tris,
                                     "area_quadrature": f17(mesh.area_hyp),
                                     "area_exact_truncated": f17(exact)})
        click.echo(f"nodes {mesh.n_nodes}  dofs {mesh.ndof}  tris {mesh.n_tris}")
        click.echo(f"area  {f17(mesh.area_hyp)}  (exact truncated {f17(exact)})")

    run_guarded(run)


@main.command("spectrum")
@common_options
def cmd_spectrum(config, **kw):
    """Low spectrum of the magnetic Laplacian with the multiplicity check."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf, bundle = guard_bundle(cfg)
        b = bundle.b
        mesh = build_mesh(surf, cfg.Y, cfg.h, cfg.s0)
        op = assemble(mesh, b)
        res = lowest_eigenpairs(op, cfg.count, seed=cfg.seed)
        k = int(bundle.weight)
        expected = dim_cusp_forms(surf, k)
        ess = 0.25 + b * b
        mult = int(np.sum(np.abs(res.eigenvalues - b) <= 0.1 * max(b, 1.0)))
        report = {
            "N": surf.level, "degree": cfg.degree, "b": f17(b), "h": cfg.h, "Y": cfg.Y,
            "eigenvalues": [f17(v) for v in res.eigenvalues],
            "residuals": [f17(v) for v in res.residuals],
            "multiplicity_below_ess": mult,
            "dim_cusp_forms": expected,
            "ess_bottom_theory": f17(ess),
        }
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "spectrum.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        write_manifest(cfg, "spectrum", {"report": report})
        click.echo(json.dumps(report, indent=2, sort_keys=True))
        if mult != expected:
            click.echo(f"dimension mismatch: cluster {mult} != dim S_k = {expected}",
                       err=True)
            sys.exit(EXIT_GUARD)

    run_guarded(run)


@main.command("cuspform")
@common_options
@click.option("--cusp", type=int, default=0)
@click.option("--height", type=float, default=2.0)
@click.option("--nx", type=int, default=32)
def cmd_cuspform(config, cusp, height, nx, **kw):
    """Sample a Poincare series in its cusp chart and write CSV."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf, bundle = guard_bundle(cfg)
        b = int(bundle.b)
        ws = np.array([x / nx + 1j * height for x in range(nx)])
        vals, tail = cusp_chart_values(surf, cusp, ws, b, cfg.depth)
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["x,y,re,im,tail_bound"]
        for w, v in zip(ws, vals):
            lines.append(",".join([f17(w.real), f17(w.imag), f17(v.real),
                                   f17(v.imag), f17(tail)]))
        (out / "cuspform.csv").write_text("\n".join(lines) + "\n")
        write_manifest(cfg, "cuspform", {"cusp": cusp, "tail": f17(tail)})
        click.echo(f"wrote {nx} samples at height {height}, tail {f17(tail)}")

    run_guarded(run)


def _ground_state(cfg: RunConfig):
    surf, bundle = guard_bundle(cfg)
    b = bundle.b
    mesh = build_mesh(surf, cfg.Y, cfg.h, cfg.s0)
    op = assemble(mesh, b)
    k = int(bundle.weight)
    expected = dim_cusp_forms(surf, k)
    if expected == 0:
        raise BundleError("no bifurcation (K trivial): dim S_k = 0")
    res = lowest_eigenpairs(op, min(expected + 3, 20), seed=cfg.seed)
    basis = ground_space_basis(res, expected)
    return surf, bundle, mesh, basis


@main.command("beta")
@common_options
def cmd_beta(config, **kw):
    """Abrikosov functionals beta, beta_plus and the threshold kappa_c."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf, bundle, mesh, basis = _ground_state(cfg)
        rep = beta_min_max(basis, mesh, seed=cfg.seed)
        report = {
            "N": surf.level, "degree": cfg.degree, "b": f17(bundle.b),
            "dim_K": rep.dim,
            "beta": f17(rep.beta), "beta_plus": f17(rep.beta_plus),
            "kappa_c": f17(rep.kappa_c), "kappa_c_plus": f17(rep.kappa_c_plus),
            "brackets": [[f17(a), f17(c)] for a, c in rep.brackets],
        }
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "beta.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        write_manifest(cfg, "beta", {"report": report})
        click.echo(json.dumps(report, indent=2, sort_keys=True))

    run_guarded(run)


@main.command("bifurcate")
@common_options
@click.option("--kappa", type=float, default=None)
@click.option("--x-min", type=float, default=None)
@click.option("--x-max", type=float, default=None)
@click.option("--x-count", type=int, default=None)
@click.option("--minimize", "do_minimize", is_flag=True)
def cmd_bifurcate(config, do_minimize, **kw):
    """Predicted branch data over a sweep of x = kappa^2 r - b; optionally
    runs the full minimizer per point and appends measured values and fits."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf, bundle, mesh, basis = _ground_state(cfg)
        b = bundle.b
        rep = beta_min_max(basis, mesh, seed=cfg.seed)
        xi = basis @ rep.direction_min
        xi = xi / math.sqrt(float(mesh.bracket(np.abs(xi) ** 2).real))
        eta = solve_eta(mesh, xi)
        kappa = cfg.kappa
        area = surf.area
        prob = GLProblem(mesh, b) if do_minimize else None
        xs = np.linspace(cfg.x_min, cfg.x_max, cfg.x_count)
        lines = ["s,r,s2_predicted,E_normal,dE_predicted,dE_measured,"
                 "mean_density,beta,kappa_c,valid_flag"]
        meas = []
        for x in xs:
            r = (b + x) / kappa ** 2
            s2, valid = s_squared(r, kappa, b, rep.beta)
            e_norm, de_pred = energy_expansion(r, kappa, b, rep.beta, area)
            de_meas, dens = math.nan, math.nan
            if do_minimize and s2 > 0:
                psi0, al0 = leading_order_state(math.sqrt(s2), xi, eta)
                psi0[~prob.free_psi] = 0.0
                st = prob.minimize(GLState(psi=psi0, alpha=al0, kappa=kappa, r=r),
                                   tol=cfg.tol, max_iter=cfg.max_iter)
                de_meas = st.energy - prob.normal_state(kappa, r).energy
                dens = prob.mean_density(st)
                meas.append((x, de_meas, dens))
            lines.append(",".join([
                f17(math.sqrt(max(s2, 0.0))), f17(r), f17(s2), f17(e_norm),
                f17(de_pred), f17(de_meas), f17(dens), f17(rep.beta),
                f17(rep.kappa_c), "1" if valid else "0"]))
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bifurcate.csv").write_text("\n".join(lines) + "\n")
        extra = {"beta": f17(rep.beta), "kappa_c": f17(rep.kappa_c)}
        if meas:
            xs_m = np.array([m[0] for m in meas])
            de = np.array([m[1] for m in meas])
            dn = np.array([m[2] for m in meas])
            slope = np.polyfit(xs_m, dn, 1)[0]
            vand = np.stack([xs_m, xs_m ** 2, xs_m ** 3], axis=1)
            coef = np.linalg.lstsq(vand, de, rcond=None)[0]
            denom = (kappa ** 2 - 0.5) * rep.beta + 0.5
            extra["fit"] = {
                "density_slope": f17(slope),
                "density_slope_theory": f17(1.0 / denom),
                "energy_quadratic": f17(coef[1]),
                "energy_quadratic_theory": f17(-area / (4.0 * denom)),
            }
            click.echo(json.dumps(extra["fit"], indent=2, sort_keys=True))
        write_manifest(cfg, "bifurcate", extra)
        click.echo(f"wrote bifurcate.csv with {len(xs)} rows")

    run_guarded(run)


@main.command("solve")
@common_options
@click.option("--kappa", type=float, default=None)
@click.option("--r", "r", type=float, default=None)
@click.option("--from-branch/--from-random", default=True)
@click.option("--seed-scale", type=float, default=1e-3)
def cmd_solve(config, from_branch, seed_scale, **kw):
    """Run the full GL minimizer at one parameter point."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf, bundle, mesh, basis = _ground_state(cfg)
        b = bundle.b
        kappa = cfg.kappa
        r = cfg.r if cfg.r is not None else (b + 0.04) / kappa ** 2
        prob = GLProblem(mesh, b)
        rep = beta_min_max(basis, mesh, seed=cfg.seed)
        if from_branch:
            xi = basis @ rep.direction_min
            xi = xi / math.sqrt(float(mesh.bracket(np.abs(xi) ** 2).real))
            eta = solve_eta(mesh, xi)
            s2, _ = s_squared(r, kappa, b, rep.beta)
            psi0, al0 = leading_order_state(math.sqrt(max(s2, 0.0)), xi, eta)
        else:
            rng = np.random.default_rng(cfg.seed)
            psi0 = seed_scale * (rng.standard_normal(mesh.ndof)
                                 + 1j * rng.standard_normal(mesh.ndof))
            al0 = np.zeros(prob.ne)
        psi0 = psi0.astype(complex)
        psi0[~prob.free_psi] = 0.0
        trace: list = []
        st = prob.minimize(GLState(psi=psi0, alpha=al0, kappa=kappa, r=r),
                           tol=cfg.tol, max_iter=cfg.max_iter, trace=trace)
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["iter,energy,grad_norm_psi,grad_norm_alpha,step"]
        for row in trace:
            lines.append(",".join(f17(v) for v in row))
        (out / "solve_trace.csv").write_text("\n".join(lines) + "\n")
        state_doc = json.loads(mesh.to_json())
        psi_nodes = mesh.expand_section(st.psi, b)
        state_doc["fields"] = {
            "psi_re": [float(v) for v in psi_nodes.real],
            "psi_im": [float(v) for v in psi_nodes.imag],
            "alpha": [float(v) for v in st.alpha],
        }
        (out / "solve_state.json").write_text(json.dumps(state_doc))
        e_norm = prob.normal_state(kappa, r).energy
        summary = {"energy": f17(st.energy), "E_normal": f17(e_norm),
                   "dE": f17(st.energy - e_norm),
                   "mean_density": f17(prob.mean_density(st)),
                   "flux": f17(degree_from_flux(mesh, b, st.alpha)),
                   "converged": st.converged, "iterations": st.iterations,
                   "message": st.message,
                   "supercurrent_residual": f17(
                       prob.supercurrent_coclosed_residual(st.psi, st.alpha))}
        write_manifest(cfg, "solve", {"summary": summary,
                                      "kappa": f17(kappa), "r": f17(r)})
        click.echo(json.dumps(summary, indent=2, sort_keys=True))
        if not st.converged and "stagnated" not in st.message:
            sys.exit(EXIT_NUMERICAL)

    run_guarded(run)


@main.command("sweep")
@common_options
@click.option("--kappas", type=str, default="0.9,1.0,1.1")
@click.option("--rs", type=str, default="1.0,1.04")
def cmd_sweep(config, kappas, rs, **kw):
    """Hessian classification and solve summary over a (kappa, r) grid."""
    cfg = load_config(config, kw)

    def run():
        set_threads(cfg.threads)
        surf, bundle = guard_bundle(cfg)
        b = bundle.b
        mesh = build_mesh(surf, cfg.Y, cfg.h, cfg.s0)
        kap_list = [float(v) for v in kappas.split(",")]
        r_list = [float(v) for v in rs.split(",")]
        lines = ["kappa,r,hessian_bottom,stable_normal"]
        for kap in kap_list:
            for r in r_list:
                hb = hessian_bottom(mesh, b, kap, r, seed=cfg.seed)
                lines.append(",".join([f17(kap), f17(r), f17(hb),
                                       "1" if hb >= 0 else "0"]))
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text("\n".join(lines) + "\n")
        write_manifest(cfg, "sweep", {"kappas": kap_list, "rs": r_list})
        click.echo(f"wrote sweep.csv with {len(kap_list) * len(r_list)} rows")

    run_guarded(run)


if __name__ == "__main__":
    main()
