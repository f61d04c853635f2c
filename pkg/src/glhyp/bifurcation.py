"""Abrikosov functionals, the co-closed 1-form solve, and the leading-order
bifurcation branch (coefficients, s^2 law, energy expansion, B matrix)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TruncatedMesh
from .spectra import (_p1_gradients, cap_circulation_matrix, circ_matrix,
                      grad_matrix, whitney_mass)


class BifurcationError(RuntimeError):
    pass


def brackets(mesh: TruncatedMesh, xi: np.ndarray) -> tuple[float, float]:
    """(<|xi|^2>, <|xi|^4>) with the exact untruncated |Sigma| in the bracket."""
    a2 = np.abs(xi) ** 2
    return float(mesh.bracket(a2)), float(mesh.bracket(a2 ** 2))


@dataclass
class BranchPoint:
    """One point of the leading-order bifurcation branch."""

    s: float
    r: float
    R: float                      # r = b/kappa^2 + R s^2 coefficient
    s2_predicted: float
    e_normal: float
    de_predicted: float
    de_measured: float            # nan when the minimizer was not run
    mean_density: float
    valid: bool
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class AbrikosovReport:
    beta: float
    beta_plus: float
    kappa_c: float
    kappa_c_plus: float
    brackets: list[tuple[float, float]]          # per basis vector
    direction_min: np.ndarray                    # coefficients in the basis
    direction_max: np.ndarray
    dim: int


def kappa_c(beta: float) -> float:
    """Threshold GL parameter sqrt((1 - 1/beta)/2); requires beta > 1."""
    if beta <= 1.0:
        raise BifurcationError(f"beta = {beta} must exceed 1 (Hoelder)")
    return math.sqrt(0.5 * (1.0 - 1.0 / beta))


def _sphere_quartic(mesh: TruncatedMesh, basis: np.ndarray):
    """Quartic <|V c|^4> and Gram constraint c^H G c on the basis span."""
    wq = mesh.geometry()["wq"] / mesh.surf.area
    gram = (basis.conj().T * wq) @ basis

    def q(c: np.ndarray) -> float:
        f = basis @ c
        return float(wq @ np.abs(f) ** 4)

    def grad(c: np.ndarray) -> np.ndarray:
        f = basis @ c
        return 2.0 * (basis.conj().T @ (wq * np.abs(f) ** 2 * f))

    def normalize(c: np.ndarray) -> np.ndarray:
        return c / math.sqrt(abs(np.vdot(c, gram @ c).real))

    return q, grad, normalize, gram


def _optimize_direction(mesh, basis, sign: float, seed: int, n_starts: int = 24,
                        iters: int = 300) -> tuple[float, np.ndarray]:
    """Projected-gradient optimization of sign * <|xi|^4> on the Gram sphere."""
    d = basis.shape[1]
    q, grad, normalize, gram = _sphere_quartic(mesh, basis)
    rng = np.random.default_rng(seed)
    starts = [normalize(np.eye(d, dtype=complex)[:, j]) for j in range(d)]
    for _ in range(n_starts):
        starts.append(normalize(rng.standard_normal(d) + 1j * rng.standard_normal(d)))
    best_c, best_v = None, -math.inf
    for c0 in starts:
        c = c0
        step = 0.5
        val = sign * q(c)
        for _ in range(iters):
            g = sign * grad(c)
            # riemannian ascent with the Gram metric constraint
            c_try = normalize(c + step * g)
            v_try = sign * q(c_try)
            if v_try > val + 1e-15:
                c, val = c_try, v_try
                step = min(step * 1.3, 10.0)
            else:
                step *= 0.5
                if step < 1e-12:
                    break
        if val > best_v:
            best_v, best_c = val, c
    return sign * best_v, best_c


def beta_min_max(basis: np.ndarray, mesh: TruncatedMesh, seed: int = 0) -> AbrikosovReport:
    """Minimize/maximize <|xi|^4> over the unit sphere {<|xi|^2> = 1} in K."""
    if basis.ndim == 1:
        basis = basis[:, None]
    d = basis.shape[1]
    if d == 0:
        raise BifurcationError("no bifurcation (K trivial)")
    per = [brackets(mesh, basis[:, j]) for j in range(d)]
    if d == 1:
        b4 = per[0][1] / per[0][0] ** 2
        c = np.ones(1, dtype=complex)
        return AbrikosovReport(beta=b4, beta_plus=b4, kappa_c=kappa_c(b4),
                               kappa_c_plus=kappa_c(b4), brackets=per,
                               direction_min=c, direction_max=c, dim=1)
    bmin, cmin = _optimize_direction(mesh, basis, -1.0, seed)
    bmax, cmax = _optimize_direction(mesh, basis, +1.0, seed + 1)
    return AbrikosovReport(beta=bmin, beta_plus=bmax, kappa_c=kappa_c(bmin),
                           kappa_c_plus=kappa_c(bmax), brackets=per,
                           direction_min=cmin, direction_max=cmax, dim=d)


# ---------------------------------------------------------------------------
# the co-closed 1-form eta with d eta = (1/2)(1 - |xi|^2) omega
# ---------------------------------------------------------------------------

def triangle_source_integrals(mesh: TruncatedMesh, source: np.ndarray) -> np.ndarray:
    """int_T source * omega per triangle, edge-midpoint rule, for nodal source."""
    g = mesh.geometry()
    dofs3, area, ymid = g["dofs3"], g["area"], g["ymid"]
    s = np.asarray(source)
    out = np.zeros(mesh.n_tris)
    nxt = [1, 2, 0]
    for k in range(3):
        smid = 0.5 * (s[dofs3[:, k]] + s[dofs3[:, nxt[k]]])
        out += (area / 3.0) * smid / ymid[:, k] ** 2
    return out


def solve_eta(mesh: TruncatedMesh, xi: np.ndarray) -> np.ndarray:
    """Minimum-norm co-closed edge 1-form with d eta = (1/2)(1-|xi|^2) omega.

    The saddle system [M1 D^T; D 0] (eta, mu) = (0, c) prescribes the triangle
    circulations c exactly and makes eta orthogonal to every discrete gradient
    (DG = 0), i.e. discretely co-closed.  The source is shifted to exact
    discrete mean zero (the continuum mean vanishes because <|xi|^2> = 1).
    """
    b2 = float(mesh.bracket(np.abs(xi) ** 2))
    if abs(b2 - 1.0) > 1e-6:
        raise BifurcationError(f"<|xi|^2> = {b2} must be 1 (normalize first)")
    src = 0.5 * (1.0 - np.abs(xi) ** 2)
    c = triangle_source_integrals(mesh, src)
    ah = mesh.geometry()["area_hyp"]
    c = c - ah * (c.sum() / ah.sum())
    M1 = whitney_mass(mesh)
    D = circ_matrix(mesh)
    ne, nt = M1.shape[0], mesh.n_tris
    sad = sp.bmat([[M1, D.T], [D, None]], format="csc")
    rhs = np.concatenate([np.zeros(ne), c])
    sol = spla.splu(sad).solve(rhs)
    return sol[:ne]


def curl_norm_sq(mesh: TruncatedMesh, eta: np.ndarray) -> float:
    """||d eta||^2 = sum (circulation)^2 / hyperbolic area over triangles."""
    circ = circ_matrix(mesh) @ eta
    return float(np.sum(circ ** 2 / mesh.geometry()["area_hyp"]))


def coclosed_residual(mesh: TruncatedMesh, eta: np.ndarray) -> float:
    """||G^T M1 eta|| / ||M1 eta||: weak d* eta, zero for the saddle solution."""
    M1 = whitney_mass(mesh)
    G = grad_matrix(mesh)
    w = M1 @ eta
    return float(np.linalg.norm(G.T @ w) / max(np.linalg.norm(w), 1e-300))


def pairing_energy(mesh: TruncatedMesh, b: float, xi: np.ndarray,
                   eta: np.ndarray, alpha_bg: np.ndarray | None = None) -> float:
    """(1/|Sigma|) <xi, 2i eta . nabla_{a^b} xi> = -(2/|Sigma|) int eta . J dx dy.

    Evaluated through the discrete supercurrent J_e = dE_kin/d alpha_e (exact
    derivative of the link-phase kinetic form, so it inherits the Rayleigh
    quotient's accuracy); the identity to check is equality with
    (<|xi|^2>^2 - <|xi|^4>)/2.
    """
    from .solver import GLProblem

    prob = GLProblem(mesh, b)
    jw = prob.kinetic_alpha_gradient(xi, alpha_bg)   # = -int W_e . J
    return float(2.0 * (eta @ jw) / mesh.surf.area)


# ---------------------------------------------------------------------------
# branch coefficients
# ---------------------------------------------------------------------------

def coefficient_R(beta_effective: float, kappa: float) -> float:
    """R = 1/(2 kappa^2) + (1 - 1/(2 kappa^2)) beta."""
    if kappa <= 0:
        raise BifurcationError("kappa must be positive")
    return 0.5 / kappa ** 2 + (1.0 - 0.5 / kappa ** 2) * beta_effective


def s_squared(r: float, kappa: float, b: float, beta: float) -> tuple[float, bool]:
    """Leading-order s^2 = (kappa^2 r - b)/((kappa^2 - 1/2) beta + 1/2), with the
    existence flag (kappa - sqrt(b/r))(kappa - kappa_c) > 0 and s^2 > 0."""
    denom = (kappa ** 2 - 0.5) * beta + 0.5
    s2 = (kappa ** 2 * r - b) / denom
    valid = (kappa - math.sqrt(b / r)) * (kappa - kappa_c(beta)) > 0 and s2 > 0
    return s2, valid


def energy_expansion(r: float, kappa: float, b: float, beta: float,
                     area: float) -> tuple[float, float]:
    """(E_normal, Delta E): E_normal = (kappa^2 r^2/2 + b^2) |Sigma| / 2 and the
    leading energy gain -(|Sigma|/4)(kappa^2 r - b)^2 / ((kappa^2-1/2) beta + 1/2)."""
    e_normal = 0.5 * (kappa ** 2 * r ** 2 / 2.0 + b ** 2) * area
    de = -(area / 4.0) * (kappa ** 2 * r - b) ** 2 / ((kappa ** 2 - 0.5) * beta + 0.5)
    return e_normal, de


def degenerate_energy_bounds(r: float, kappa: float, b: float, beta: float,
                             beta_plus: float, area: float) -> dict:
    """Two-sided bounds for dim K > 1: the beta expansion bounds Delta E from
    below for kappa >= 1/sqrt(2) (above otherwise), beta_plus the other side."""
    _, de_lo = energy_expansion(r, kappa, b, beta, area)
    _, de_hi = energy_expansion(r, kappa, b, beta_plus, area)
    side = "lower" if kappa >= 1.0 / math.sqrt(2.0) else "upper"
    return {"bound_from_beta": de_lo, "bound_from_beta_plus": de_hi,
            "beta_bound_side": side}


def leading_order_state(s: float, xi: np.ndarray, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The branch seed (psi, alpha) = (s xi, s^2 eta)."""
    return s * xi, s * s * eta


# ---------------------------------------------------------------------------
# harmonic 1-forms and the B matrix
# ---------------------------------------------------------------------------

def weighted_whitney_mass(mesh: TruncatedMesh, tri_weight: np.ndarray) -> sp.csr_matrix:
    """Whitney edge mass with a per-triangle scalar weight (e.g. |xi|^2)."""
    g = mesh.geometry()
    pos, area, sig, eid = g["pos"], g["area"], g["sig"], g["eid"]
    grads = _p1_gradients(pos, area)
    nxt = [1, 2, 0]
    ne = g["n_edges"]
    phiphi = (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows, cols, vals = [], [], []
    wt = np.asarray(tri_weight) * area
    for ka in range(3):
        fa, ta = ka, nxt[ka]
        for kb in range(3):
            fb, tb = kb, nxt[kb]
            gg = lambda i, j: np.einsum("td,td->t", grads[:, i], grads[:, j])
            term = (phiphi[fa, fb] * gg(ta, tb) - phiphi[fa, tb] * gg(ta, fb)
                    - phiphi[ta, fb] * gg(fa, tb) + phiphi[ta, tb] * gg(fa, fb))
            rows.append(eid[:, ka])
            cols.append(eid[:, kb])
            vals.append(sig[:, ka] * sig[:, kb] * term * wt)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(ne, ne))


def tri_mean_sq(mesh: TruncatedMesh, xi: np.ndarray) -> np.ndarray:
    """Per-triangle mean of |xi|^2 (corner average)."""
    g = mesh.geometry()
    return np.mean(np.abs(xi[g["dofs3"]]) ** 2, axis=1)


def b_matrix(mesh: TruncatedMesh, omega_basis: np.ndarray | None,
             xi: np.ndarray) -> np.ndarray:
    """B_kl = <eta_k, |xi|^2 eta_l> over a basis of harmonic co-closed forms.

    Empty basis (genus 0) gives the empty matrix (t = 0 branch).
    """
    if omega_basis is None or (hasattr(omega_basis, "size") and omega_basis.size == 0):
        return np.zeros((0, 0))
    if omega_basis.ndim == 1:
        omega_basis = omega_basis[:, None]
    Mw = weighted_whitney_mass(mesh, tri_mean_sq(mesh, xi))
    return omega_basis.T @ (Mw @ omega_basis)


def harmonic_coefficients(mesh: TruncatedMesh, omega_basis: np.ndarray,
                          alpha: np.ndarray) -> np.ndarray:
    """M1-projections of an edge field onto the harmonic basis.

    For a converged branch state alpha these are the t coefficients, expected
    to be O(s^2) relative diagnostics (the branch machinery itself solves only
    the leading order).
    """
    if omega_basis.size == 0:
        return np.zeros(0)
    M1 = whitney_mass(mesh)
    return omega_basis.T @ (M1 @ alpha)


def harmonic_basis(mesh: TruncatedMesh, count: int | None = None,
                   threshold: float = 1e-6, cap_penalty: float = 10.0,
                   seed: int = 0) -> np.ndarray:
    """Numerical kernel of the 1-form Hodge Laplacian on co-closed edge fields.

    Returns an (n_edges, dim) M1-orthonormal basis; dim is the number of
    eigenvalues below ``threshold`` relative to the first excited one (2g for
    H/Gamma(N) once the cusp-circulating modes are removed by the cap penalty).
    """
    g = mesh.geometry()
    M1 = whitney_mass(mesh).tocsc()
    D = circ_matrix(mesh)
    G = grad_matrix(mesh)
    ah = g["area_hyp"]
    L = (D.T @ sp.diags(1.0 / ah) @ D).tocsr()
    wq = g["wq"]
    GM = (M1 @ G).tocsr()
    L = L + GM @ sp.diags(1.0 / wq) @ GM.T
    R = cap_circulation_matrix(mesh)
    scale = abs(L).max()
    L = L + cap_penalty * scale * (R.T @ R)
    k = (count if count is not None else 2 * mesh.surf.g) + 3
    k = min(k, L.shape[0] - 2)
    rng = np.random.default_rng(seed)
    vals, vecs = spla.eigsh(L.tocsc(), k=k, M=M1, sigma=0.0, which="LM",
                            v0=rng.standard_normal(L.shape[0]))
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    ref = max(vals[-1], 1e-30)
    dim = int(np.sum(vals < threshold * ref))
    if count is not None and dim != count:
        raise BifurcationError(f"harmonic kernel dim {dim} != expected {count}: {vals}")
    basis = vecs[:, :dim]
    # M1-orthonormalize
    for j in range(dim):
        for i in range(j):
            basis[:, j] -= basis[:, i] * (basis[:, i] @ (M1 @ basis[:, j]))
        basis[:, j] /= math.sqrt(basis[:, j] @ (M1 @ basis[:, j]))
    return basis
