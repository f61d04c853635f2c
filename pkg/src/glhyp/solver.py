"""Full nonlinear minimization of the rescaled Ginzburg-Landau energy.

State: complex nodal section psi (Dirichlet on cusp caps) and a real edge
1-form alpha (deviation from a^b), with energy

  E = 1/2 sum_te w |psi_to - e^{i(b c1 + sig alpha)} psi_from|^2
    + 1/2 sum_T (b + circ(alpha)/A_T)^2 A_T
    + kappa^2/4 sum_i wq_i (|psi_i|^2 - r)^2,

all in the conformal/link-phase discretization.  The minimizer is a
preconditioned Polak-Ribiere nonlinear conjugate gradient with Armijo
backtracking; alpha directions are projected onto the discretely co-closed,
zero-cap-circulation subspace each evaluation (Coulomb-type gauge fixing plus
flux conservation through the truncated cusps).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TruncatedMesh
from .spectra import (assemble, cap_circulation_matrix, circ_matrix, grad_matrix,
                      lowest_eigenpairs, scalar_stiffness, whitney_mass,
                      _require_integer_b)


class SolverError(RuntimeError):
    pass


@dataclass
class GLState:
    psi: np.ndarray          # complex, all surface dofs (caps held at 0)
    alpha: np.ndarray        # real, all edges
    kappa: float
    r: float
    energy: float = math.nan
    grad_norm_psi: float = math.nan
    grad_norm_alpha: float = math.nan
    iterations: int = 0
    converged: bool = False
    message: str = ""


class GLProblem:
    """Discrete GL energy on a fixed mesh and bundle (field strength b)."""

    def __init__(self, mesh: TruncatedMesh, b: float):
        self.mesh = mesh
        self.b = float(_require_integer_b(b))
        g = mesh.geometry()
        nxt = [1, 2, 0]
        self.TO = np.concatenate([g["dofs3"][:, nxt[k]] for k in range(3)])
        self.FROM = np.concatenate([g["dofs3"][:, k] for k in range(3)])
        self.W = np.concatenate([g["w"][:, k] for k in range(3)])
        self.C1 = np.concatenate([self.b * g["c1"][:, k] for k in range(3)])
        self.SIG = np.concatenate([g["sig"][:, k] for k in range(3)]).astype(float)
        self.EID = np.concatenate([g["eid"][:, k] for k in range(3)])
        self.wq = g["wq"]
        self.ah = g["area_hyp"]
        self.nd = mesh.ndof
        self.ne = g["n_edges"]
        self.D = circ_matrix(mesh).tocsr()
        self.Dt = self.D.T.tocsr()
        caps = mesh.cap_dofs()
        self.free_psi = np.ones(self.nd, dtype=bool)
        self.free_psi[caps] = False
        self.kdiag = (np.bincount(self.TO, weights=self.W, minlength=self.nd)
                      + np.bincount(self.FROM, weights=self.W, minlength=self.nd))
        self._proj = None

    def _projection(self) -> dict:
        """Lazy factorizations for the alpha constraint projection."""
        if self._proj is None:
            M1 = whitney_mass(self.mesh).tocsc()
            G = grad_matrix(self.mesh).tocsr()
            S0 = scalar_stiffness(self.mesh).tolil()
            S0[0, 0] += 1.0  # pin one node: gradients are constant-insensitive
            s0_lu = spla.splu(S0.tocsc())
            m1_lu = spla.splu(M1)
            R = cap_circulation_matrix(self.mesh).tocsr()
            cols = [m1_lu.solve(np.asarray(R[i].todense()).ravel())
                    for i in range(R.shape[0])]
            minv_rt = np.stack(cols, axis=1) if cols else np.zeros((self.ne, 0))
            rmr = R @ minv_rt
            rmr_inv = np.linalg.inv(rmr) if rmr.size else np.zeros((0, 0))
            # alpha preconditioner: shifted curl Laplacian (SPD)
            A = (self.Dt @ sp.diags(1.0 / self.ah) @ self.D + 0.2 * M1).tocsc()
            pa_lu = spla.splu(A)
            self._proj = {"M1": M1, "G": G, "s0_lu": s0_lu, "m1_lu": m1_lu,
                          "R": R, "minv_rt": minv_rt, "rmr_inv": rmr_inv,
                          "pa_lu": pa_lu}
        return self._proj

    def _psi_prec(self, kappa: float, r: float):
        """Shifted covariant stiffness factorization for the psi block."""
        key = (round(kappa, 12), round(r, 12))
        if getattr(self, "_psi_prec_key", None) != key:
            op = assemble(self.mesh, self.b)
            shift = max(kappa ** 2 * r, 0.2)
            P = (op.stiffness + shift * op.mass).tocsc()
            self._psi_prec_lu = spla.splu(P)
            self._psi_prec_free = op.free
            self._psi_prec_key = key
        return self._psi_prec_lu, self._psi_prec_free

    @property
    def G(self) -> sp.csr_matrix:
        return self._projection()["G"]

    @property
    def M1(self) -> sp.csc_matrix:
        return self._projection()["M1"]

    # -- energy and gradient -------------------------------------------------

    def energy(self, psi: np.ndarray, alpha: np.ndarray, kappa: float, r: float) -> float:
        phase = self.C1 + self.SIG * alpha[self.EID]
        d = psi[self.TO] - np.exp(1j * phase) * psi[self.FROM]
        e_kin = 0.5 * float(self.W @ np.abs(d) ** 2)
        f = self.b + (self.D @ alpha) / self.ah
        e_curl = 0.5 * float(self.ah @ f ** 2)
        e_pot = 0.25 * kappa ** 2 * float(self.wq @ (np.abs(psi) ** 2 - r) ** 2)
        E = e_kin + e_curl + e_pot
        if not math.isfinite(E):
            raise SolverError("non-finite energy (diverged state?)")
        return E

    def gradient(self, psi: np.ndarray, alpha: np.ndarray, kappa: float, r: float
                 ) -> tuple[np.ndarray, np.ndarray]:
        """(dE/d conj(psi) as complex Wirtinger*2, dE/d alpha); unprojected."""
        phase = self.C1 + self.SIG * alpha[self.EID]
        u = np.exp(1j * phase)
        upf = u * psi[self.FROM]
        d = psi[self.TO] - upf
        wd = 0.5 * self.W * d
        back = -np.conj(u) * wd
        gpsi = (np.bincount(self.TO, weights=wd.real, minlength=self.nd)
                + np.bincount(self.FROM, weights=back.real, minlength=self.nd)
                + 1j * (np.bincount(self.TO, weights=wd.imag, minlength=self.nd)
                        + np.bincount(self.FROM, weights=back.imag, minlength=self.nd)))
        gpsi += 0.5 * kappa ** 2 * self.wq * (np.abs(psi) ** 2 - r) * psi
        gpsi[~self.free_psi] = 0.0

        galpha = np.bincount(self.EID, weights=self.W * self.SIG * (np.conj(d) * upf).imag,
                             minlength=self.ne)
        f = self.b + (self.D @ alpha) / self.ah
        galpha += self.Dt @ f
        return gpsi, galpha

    def kinetic_alpha_gradient(self, psi: np.ndarray, alpha: np.ndarray | None = None
                               ) -> np.ndarray:
        """The discrete supercurrent paired with Whitney edge fields:
        J_e = dE_kin/d alpha_e (note J_e = -int W_e . Im(conj(psi) grad_a psi))."""
        phase = self.C1.copy()
        if alpha is not None:
            phase += self.SIG * alpha[self.EID]
        u = np.exp(1j * phase)
        upf = u * psi[self.FROM]
        d = psi[self.TO] - upf
        return np.bincount(self.EID, weights=self.W * self.SIG * (np.conj(d) * upf).imag,
                           minlength=self.ne)

    def supercurrent_coclosed_residual(self, psi: np.ndarray,
                                       alpha: np.ndarray | None = None) -> float:
        """||d* J||-type residual: G^T J_weak, scaled by the kinetic energy."""
        j = self.kinetic_alpha_gradient(psi, alpha)
        div = self.G.T @ j
        scale = max(float(np.abs(j).max()), 1e-300)
        return float(np.linalg.norm(div) / (scale * math.sqrt(self.nd)))

    # -- constraint projection ------------------------------------------------

    def project_alpha(self, v: np.ndarray) -> np.ndarray:
        """M1-orthogonal projection onto {co-closed, zero cap circulations}."""
        p = self._projection()
        phi = p["s0_lu"].solve(p["G"].T @ (p["M1"] @ v))
        out = v - p["G"] @ phi
        if p["rmr_inv"].size:
            c = p["rmr_inv"] @ (p["R"] @ out)
            out = out - p["minv_rt"] @ c
        return out

    def project_alpha_adjoint(self, g: np.ndarray) -> np.ndarray:
        """Euclidean adjoint of :meth:`project_alpha` acting on covectors."""
        p = self._projection()
        out = g - p["M1"] @ (p["G"] @ p["s0_lu"].solve(p["G"].T @ g))
        if p["rmr_inv"].size:
            c = p["rmr_inv"] @ (p["minv_rt"].T @ g)
            out = out - p["R"].T @ c
        return out

    def precondition(self, gpsi: np.ndarray, galpha: np.ndarray, kappa: float, r: float
                     ) -> tuple[np.ndarray, np.ndarray]:
        """(P_psi^{-1} g_psi, P_C A^{-1} P_C^T g_alpha).

        Sandwiching the SPD shifted-curl solve between the projector and its
        adjoint keeps <g, z> = (P^T g)^T A^{-1} (P^T g) >= 0 (descent) while the
        direction stays in the constraint set.
        """
        p = self._projection()
        lu, free = self._psi_prec(kappa, r)
        zpsi = np.zeros_like(gpsi)
        zpsi[free] = lu.solve(gpsi[free])
        zpsi[~self.free_psi] = 0.0
        zalpha = self.project_alpha(p["pa_lu"].solve(self.project_alpha_adjoint(galpha)))
        return zpsi, zalpha

    # -- minimization ----------------------------------------------------------

    def minimize(self, seed: GLState, tol: float = 1e-8, max_iter: int = 20000,
                 restart: int = 50, trace: list | None = None) -> GLState:
        """Preconditioned Polak-Ribiere NCG with Armijo backtracking.

        Terminates when both preconditioned residual norms drop below ``tol``
        relative to their scale at the seed (floored at an absolute 1e-14).
        Line-search failure and max-iteration are reported, not raised.
        """
        kappa, r = seed.kappa, seed.r
        psi = seed.psi.astype(complex).copy()
        psi[~self.free_psi] = 0.0
        alpha = self.project_alpha(seed.alpha.astype(float).copy())

        E = self.energy(psi, alpha, kappa, r)
        gp, ga = self.gradient(psi, alpha, kappa, r)
        zp, za = self.precondition(gp, ga, kappa, r)

        def dots(gp, ga, zp, za):
            return float(2.0 * np.vdot(zp, gp).real + za @ ga)

        def block_norms(gp, ga, zp, za):
            return (math.sqrt(abs(2.0 * np.vdot(zp, gp).real)),
                    math.sqrt(abs(za @ ga)))

        gz = dots(gp, ga, zp, za)
        np0, na0 = block_norms(gp, ga, zp, za)
        scale_p = max(np0, math.sqrt(abs(E)), 1.0)
        scale_a = max(na0, math.sqrt(abs(E)), 1.0)
        dp, da = -zp, -za
        step = 1.0
        message = "max iterations reached"
        converged = False
        it = 0
        best_res = math.inf
        best_res_iter = 0
        for it in range(1, max_iter + 1):
            npsi, nalpha = block_norms(gp, ga, zp, za)
            if trace is not None:
                trace.append((it - 1, E, npsi, nalpha, step))
            if npsi / scale_p < tol and nalpha / scale_a < tol:
                converged = True
                message = "converged"
                break
            res_now = max(npsi / scale_p, nalpha / scale_a)
            if res_now < 0.99 * best_res:
                best_res, best_res_iter = res_now, it
            elif it - best_res_iter > 1500:
                message = "stagnated at the round-off floor"
                break
            slope = dots(gp, ga, dp, da)
            if slope >= 0:
                dp, da = -zp, -za
                slope = -gz
            # Armijo backtracking with growth; the eps-sized allowance keeps the
            # search alive when true decrements reach machine precision of E
            fuzz = 4.0 * np.finfo(float).eps * (1.0 + abs(E))
            t = step * 2.0
            ok = False
            for _ in range(60):
                E_try = self.energy(psi + t * dp, alpha + t * da, kappa, r)
                if E_try <= E + 1e-4 * t * slope + fuzz:
                    ok = True
                    break
                t *= 0.4
            if not ok or slope >= 0 or t * math.sqrt(-slope) < 1e-17:
                message = "line search stagnated at machine precision"
                break
            if E - E_try < 1e3 * fuzz:
                # energy differences are cancellation-limited: refine with a
                # secant step on the directional derivative instead
                gp2, ga2 = self.gradient(psi + t * dp, alpha + t * da, kappa, r)
                gd2 = dots(gp2, ga2, dp, da)
                denom = gd2 - slope
                if denom > 0:
                    t = min(max(-slope * t / denom, 0.05 * t), 20.0 * t)
                    E_try = self.energy(psi + t * dp, alpha + t * da, kappa, r)
            step = t
            psi = psi + t * dp
            alpha = alpha + t * da
            E = E_try
            gp_new, ga_new = self.gradient(psi, alpha, kappa, r)
            zp_new, za_new = self.precondition(gp_new, ga_new, kappa, r)
            gz_new = dots(gp_new, ga_new, zp_new, za_new)
            if it % restart == 0:
                beta = 0.0
            else:
                mixed = float(2.0 * np.vdot(zp_new, gp_new - gp).real
                              + za_new @ (ga_new - ga))
                beta = max(0.0, mixed / gz)
            dp = -zp_new + beta * dp
            da = -za_new + beta * da
            gp, ga, zp, za, gz = gp_new, ga_new, zp_new, za_new, gz_new

        npsi, nalpha = block_norms(gp, ga, zp, za)
        return GLState(psi=psi, alpha=alpha, kappa=kappa, r=r, energy=E,
                       grad_norm_psi=npsi / scale_p, grad_norm_alpha=nalpha / scale_a,
                       iterations=it, converged=converged, message=message)

    # -- diagnostics -----------------------------------------------------------

    def normal_state(self, kappa: float, r: float) -> GLState:
        st = GLState(psi=np.zeros(self.nd, dtype=complex), alpha=np.zeros(self.ne),
                     kappa=kappa, r=r)
        st.energy = self.energy(st.psi, st.alpha, kappa, r)
        return st

    def mean_density(self, state: GLState) -> float:
        """<|psi|^2> against the exact area."""
        return float(self.mesh.bracket(np.abs(state.psi) ** 2))

    def gauge_invariants(self, state: GLState) -> dict:
        f = self.b + (self.D @ state.alpha) / self.ah
        return {"energy": self.energy(state.psi, state.alpha, state.kappa, state.r),
                "mean_density": self.mean_density(state),
                "abs_psi": np.abs(state.psi), "curvature": f}


def hessian_bottom(mesh: TruncatedMesh, b: float, kappa: float, r: float = 1.0,
                   seed: int = 0) -> float:
    """Smallest eigenvalue of the psi block of the normal-state Hessian,
    lambda_min(-Delta_{a^b}) - kappa^2 r.

    Nonnegative iff the constant-curvature state is a local minimizer (the
    alpha block d*d is always >= 0); the sign flips at kappa^2 r = b, i.e. at
    kappa^2 = b_r in the unscaled variables.
    """
    op = assemble(mesh, b)
    res = lowest_eigenpairs(op, 1, seed=seed)
    return float(res.eigenvalues[0] - kappa ** 2 * r)


def unscale(state: GLState, r: float | None = None) -> dict:
    """Map the rescaled state to physical fields on (Sigma, h_r).

    psi_tilde = psi / sqrt(r), alpha_tilde = alpha / sqrt(r); the energies obey
    E(psi_tilde, a_tilde; h_r) = E_r(psi, a) / r exactly at the discrete level.
    """
    if r is None:
        r = state.r
    if r <= 0:
        raise SolverError(f"scale r = {r} must be positive")
    rt = math.sqrt(r)
    return {
        "psi_tilde": state.psi / rt,
        "alpha_tilde": state.alpha / rt,
        "density_tilde": np.abs(state.psi) ** 2 / r,
        "energy_rescaled": state.energy,
        "energy_physical": state.energy / r,
        "r": r,
    }
