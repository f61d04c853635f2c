"""Gauge-covariant magnetic Laplacian assembly, eigensolves, cylinder oracles.

The weak form uses 2D conformal invariance: the covariant Dirichlet energy is
assembled with Euclidean cotangent weights and link phases exp(i int_e a), and
the mass matrix carries the 1/y^2 weight.  Equivariant boundary identification
enters through the per-node automorphy angles of the mesh pairing table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TruncatedMesh


class SpectraError(RuntimeError):
    """Assembly or eigensolver failure."""


def _require_integer_b(b: float) -> int:
    if abs(b - round(b)) > 1e-12:
        raise SpectraError(
            f"field strength b = {b} is not an integer; the discrete automorphy "
            "phases only satisfy the cocycle (and hence glue consistently) for "
            "integer b"
        )
    return int(round(b))


@dataclass
class DiscreteOperatorPair:
    """Stiffness/mass pencil of -Delta_{a^b + alpha} on the free dofs."""

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    free: np.ndarray          # free dof ids (into mesh dofs)
    mesh: TruncatedMesh
    b: float

    @property
    def n(self) -> int:
        return len(self.free)

    def expand(self, v: np.ndarray) -> np.ndarray:
        """Zero-padded full-dof vector(s) from free-dof values."""
        out = np.zeros(v.shape[:-1] + (self.mesh.ndof,), dtype=complex)
        out[..., self.free] = v
        return out

    def restrict(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.free]


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray   # (ndof_free, k), mass-orthonormal
    residuals: np.ndarray
    op: DiscreteOperatorPair

    def full_vectors(self) -> np.ndarray:
        return self.op.expand(self.eigenvectors.T).T


def assemble(mesh: TruncatedMesh, b: float, alpha: np.ndarray | None = None,
             dirichlet_caps: bool = True) -> DiscreteOperatorPair:
    """Assemble the covariant stiffness and hyperbolic mass for -Delta_{a^b+alpha}.

    ``alpha`` is a real edge 1-form (integrated values on the global edges); the
    background a^b enters through exact straight-segment integrals.  The mass is
    the lumped (diagonal) 1/y^2 quadrature, which makes the pencil exactly
    covariant under discrete gauge transforms and matches the quadrature of the
    nonlinear GL energy.
    """
    bint = _require_integer_b(b)
    g = mesh.geometry()
    nd = mesh.ndof
    nxt = [1, 2, 0]
    dofs3, w, c1, sig, eid = g["dofs3"], g["w"], g["c1"], g["sig"], g["eid"]

    rows, cols, vals = [], [], []
    for k in range(3):
        A = dofs3[:, nxt[k]]   # "to" corner
        B = dofs3[:, k]        # "from" corner
        phase = bint * c1[:, k]
        if alpha is not None:
            phase = phase + sig[:, k] * alpha[eid[:, k]]
        u = np.exp(1j * phase)
        wk = w[:, k]
        rows += [A, B, A, B]
        cols += [A, B, B, A]
        vals += [wk.astype(complex), wk.astype(complex), -wk * u, -wk * np.conj(u)]
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nd, nd))
    M = sp.diags(g["wq"]).tocsr()

    if dirichlet_caps:
        capset = set(mesh.cap_dofs().tolist())
        free = np.array([i for i in range(nd) if i not in capset], dtype=np.int64)
    else:
        free = np.arange(nd, dtype=np.int64)
    K = K[free][:, free].tocsr()
    M = M[free][:, free].tocsr()

    herm = abs(K - K.getH()).max()
    if herm > 1e-12 * max(1.0, abs(K).max()):
        raise SpectraError(f"stiffness not Hermitian: residual {herm:.3e}")
    return DiscreteOperatorPair(stiffness=K, mass=M, free=free, mesh=mesh, b=float(b))


def lowest_eigenpairs(op: DiscreteOperatorPair, count: int, sigma: float | None = None,
                      seed: int = 0, tol: float = 0.0) -> SpectralResult:
    """The ``count`` smallest eigenpairs of K v = lambda M v by shift-invert."""
    if count > 20:
        raise SpectraError("count must be <= 20")
    if sigma is None:
        sigma = 0.5 * op.b if op.b > 0 else -0.1
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    try:
        vals, vecs = spla.eigsh(op.stiffness, k=count, M=op.mass, sigma=sigma,
                                which="LM", v0=v0, tol=tol, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        got = len(exc.eigenvalues) if exc.eigenvalues is not None else 0
        res = []
        if got:
            for j in range(got):
                v = exc.eigenvectors[:, j]
                res.append(float(np.linalg.norm(
                    op.stiffness @ v - exc.eigenvalues[j] * (op.mass @ v))))
        raise SpectraError(
            f"eigensolver converged only {got}/{count} pairs after max "
            f"iterations; attained residuals {res}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # enforce M-orthonormality (eigsh returns it up to roundoff) and residuals
    res = np.empty(len(vals))
    for j in range(len(vals)):
        v = vecs[:, j]
        nrm = math.sqrt(abs(np.vdot(v, op.mass @ v).real))
        vecs[:, j] = v / nrm
        r = op.stiffness @ vecs[:, j] - vals[j] * (op.mass @ vecs[:, j])
        res[j] = np.linalg.norm(r)
    return SpectralResult(eigenvalues=vals, eigenvectors=vecs, residuals=res, op=op)


# ---------------------------------------------------------------------------
# shared discrete-exterior-calculus operators (weight 0 / edge fields)
# ---------------------------------------------------------------------------

def scalar_stiffness(mesh: TruncatedMesh) -> sp.csr_matrix:
    """Euclidean P1 stiffness on surface dofs (= hyperbolic Dirichlet form)."""
    g = mesh.geometry()
    nxt = [1, 2, 0]
    dofs3, w = g["dofs3"], g["w"]
    nd = mesh.ndof
    rows, cols, vals = [], [], []
    for k in range(3):
        A, B = dofs3[:, nxt[k]], dofs3[:, k]
        wk = w[:, k]
        rows += [A, B, A, B]
        cols += [A, B, B, A]
        vals += [wk, wk, -wk, -wk]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nd, nd))


def scalar_mass(mesh: TruncatedMesh) -> sp.csr_matrix:
    """Consistent hyperbolic P1 mass matrix (real, weight 0)."""
    g = mesh.geometry()
    nxt = [1, 2, 0]
    dofs3, area, ymid = g["dofs3"], g["area"], g["ymid"]
    nd = mesh.ndof
    rows, cols, vals = [], [], []
    for k in range(3):
        da, db = dofs3[:, k], dofs3[:, nxt[k]]
        m_off = (area / 12.0) / ymid[:, k] ** 2
        rows += [da, db, da, db]
        cols += [da, db, db, da]
        vals += [m_off, m_off, m_off, m_off]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nd, nd))


def grad_matrix(mesh: TruncatedMesh) -> sp.csr_matrix:
    """Discrete gradient nodes -> edges: (G phi)_e = phi_j - phi_i for e = (i < j)."""
    g = mesh.geometry()
    ne = g["n_edges"]
    ed = g["edge_dofs"]
    rows = np.repeat(np.arange(ne), 2)
    cols = ed[:, [1, 0]].ravel()
    vals = np.tile([1.0, -1.0], ne)
    return sp.csr_matrix((vals, (rows, cols)), shape=(ne, mesh.ndof))


def circ_matrix(mesh: TruncatedMesh) -> sp.csr_matrix:
    """Discrete exterior derivative edges -> triangles (circulation)."""
    g = mesh.geometry()
    nt = mesh.n_tris
    rows = np.repeat(np.arange(nt), 3)
    cols = g["eid"].ravel()
    vals = g["sig"].ravel().astype(float)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nt, g["n_edges"]))


def _p1_gradients(pos: np.ndarray, area: np.ndarray) -> np.ndarray:
    """Constant gradients of the three hat functions per triangle, shape (nt,3,2)."""
    out = np.empty(pos.shape + (2,))
    for a in range(3):
        e = pos[:, (a + 2) % 3] - pos[:, (a + 1) % 3]   # opposite edge, CCW
        out[:, a, 0] = -e.imag / (2 * area)
        out[:, a, 1] = e.real / (2 * area)
    return out


def whitney_mass(mesh: TruncatedMesh) -> sp.csr_matrix:
    """Euclidean Whitney edge-element mass matrix (= hyperbolic 1-form L2)."""
    g = mesh.geometry()
    pos, area, dofs3, sig, eid = g["pos"], g["area"], g["dofs3"], g["sig"], g["eid"]
    grads = _p1_gradients(pos, area)
    nxt = [1, 2, 0]
    ne = g["n_edges"]
    nt = mesh.n_tris

    # int phi_i phi_j = area/12 (1 + delta_ij)
    phiphi = (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows, cols, vals = [], [], []
    for ka in range(3):
        fa, ta = ka, nxt[ka]
        for kb in range(3):
            fb, tb = kb, nxt[kb]
            gg = lambda i, j: np.einsum("td,td->t", grads[:, i], grads[:, j])
            term = (phiphi[fa, fb] * gg(ta, tb) - phiphi[fa, tb] * gg(ta, fb)
                    - phiphi[ta, fb] * gg(fa, tb) + phiphi[ta, tb] * gg(fa, fb))
            rows.append(eid[:, ka])
            cols.append(eid[:, kb])
            vals.append(sig[:, ka] * sig[:, kb] * term * area)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(ne, ne))


def curl_quadratic(mesh: TruncatedMesh) -> tuple[sp.csr_matrix, np.ndarray]:
    """(D, area_hyp): curvature density of an edge field alpha on triangle t is
    (D alpha)_t / area_hyp_t, and ||d alpha||^2 = sum (D alpha)^2 / area_hyp."""
    return circ_matrix(mesh), mesh.geometry()["area_hyp"]


def cap_circulation_matrix(mesh: TruncatedMesh) -> sp.csr_matrix:
    """Rows = circulations of an edge field around each cusp cap ring."""
    g = mesh.geometry()
    ne = g["n_edges"]
    nd = mesh.ndof
    edge_lookup = {}
    ed = g["edge_dofs"]
    for e in range(ne):
        edge_lookup[(int(ed[e, 0]), int(ed[e, 1]))] = e
    rows, cols, vals = [], [], []
    for i, nodes in sorted(mesh.caps.items()):
        dofs = [int(mesh.dof_of_node[v]) for v in nodes]
        ring = dofs + [dofs[0]]
        for a, b in zip(ring[:-1], ring[1:]):
            lo, hi = min(a, b), max(a, b)
            e = edge_lookup.get((lo, hi))
            if e is None:
                raise SpectraError(f"cap ring edge ({a},{b}) missing from mesh")
            rows.append(i)
            cols.append(e)
            vals.append(1.0 if a < b else -1.0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(mesh.caps), ne))


# ---------------------------------------------------------------------------
# cylinder-model oracles
# ---------------------------------------------------------------------------

def cylinder_operator(k: int, b: float, s: float, Y: float,
                      n_points: int = 400) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """P1 pencil for the Fourier-mode operator p_k^b on (s, Y), Dirichlet ends.

    The integer k indexes the unit-period modes e^{2 pi i k x}, so the angular
    frequency is w = 2 pi k.  In the section variable v (hyperbolic L2, weight
    1/y^2) the quadratic form is int |v'|^2 + w^2|v|^2 - 2bw|v|^2/y + b^2|v|^2/y^2
    against the mass int |v|^2/y^2: the k-th Fourier block of -Delta_{a^b} on
    the unit-width cusp cylinder (y(-d^2+w^2)y - 2bwy + b^2 in operator form).
    """
    if not (s >= 1 and Y > s):
        raise SpectraError(f"need 1 <= s < Y, got s={s}, Y={Y}")
    w_ang = 2.0 * math.pi * k
    y = s * (Y / s) ** (np.arange(n_points + 1) / n_points)
    hel = np.diff(y)
    ymid = 0.5 * (y[:-1] + y[1:])
    pot = w_ang * w_ang - 2.0 * b * w_ang / ymid + b * b / ymid ** 2
    n = n_points + 1
    main = np.zeros(n)
    off = np.zeros(n - 1)
    mmain = np.zeros(n)
    moff = np.zeros(n - 1)
    # stiffness 1/h [[1,-1],[-1,1]], weighted masses h/6 [[2,1],[1,2]] * f(ymid)
    main[:-1] += 1.0 / hel
    main[1:] += 1.0 / hel
    off -= 1.0 / hel
    main[:-1] += pot * hel / 3.0
    main[1:] += pot * hel / 3.0
    off += pot * hel / 6.0
    wm = hel / ymid ** 2
    mmain[:-1] += wm / 3.0
    mmain[1:] += wm / 3.0
    moff += wm / 6.0
    K = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    M = sp.diags([moff, mmain, moff], [-1, 0, 1], format="csr")
    keep = np.arange(1, n - 1)  # Dirichlet at both ends
    return K[keep][:, keep].tocsr(), M[keep][:, keep].tocsr()


def cylinder_lowest(k: int, b: float, s: float, Y: float, n_points: int = 400,
                    count: int = 1) -> np.ndarray:
    K, M = cylinder_operator(k, b, s, Y, n_points)
    vals = spla.eigsh(K, k=count, M=M, sigma=0.0, which="LM",
                      v0=np.ones(K.shape[0]))[0]
    return np.sort(vals)


def exact_cylinder_eigenfunction(z: complex, b: float) -> complex:
    """The cusp seed y^b e^{2 pi i z}; satisfies (-Delta_{a^b} - b) f = 0."""
    if z.imag <= 0:
        raise SpectraError(f"point {z} not in the upper half plane")
    return z.imag ** b * np.exp(2j * math.pi * z)


def cylinder_symbolic_residual(b):
    """(-Delta_{a^b} - b) applied to y^b e^{2 pi i z}, simplified symbolically."""
    import sympy as sym

    x, y = sym.symbols("x y", real=True, positive=True)
    bb = sym.Integer(b) if float(b) == int(b) else sym.Rational(b)
    f = y ** bb * sym.exp(2 * sym.pi * sym.I * (x + sym.I * y))
    op = (-y ** 2 * (sym.diff(f, x, 2) + sym.diff(f, y, 2))
          + 2 * sym.I * bb * y * sym.diff(f, x) + bb ** 2 * f)
    return sym.simplify(op - bb * f)


def generalized_mode_check(k: int, b: float):
    """Verify -Delta_{a^b} y^{1/2 - ik} = (k^2 + 1/4 + b^2) y^{1/2 - ik}; return lambda_k."""
    import sympy as sym

    if k < 0:
        raise SpectraError("mode number k must be >= 0")
    y = sym.symbols("y", positive=True)
    kk = sym.nsimplify(k)
    bb = sym.nsimplify(b)
    f = y ** (sym.Rational(1, 2) - sym.I * kk)
    op = -y ** 2 * sym.diff(f, y, 2) + bb ** 2 * f   # x-independent: d/dx terms drop
    lam = sym.simplify(sym.expand(op / f))
    expected = kk ** 2 + sym.Rational(1, 4) + bb ** 2
    if sym.simplify(lam - expected) != 0:
        raise SpectraError(f"generalized mode check failed: {lam} != {expected}")
    return float(expected)


def periodic_strip_mesh(s: float, Y: float, h: float) -> TruncatedMesh:
    """A flat-cylinder test mesh {0 <= x < 1, s <= y <= Y}, periodic in x.

    The wrap identification uses gamma = T (trivial automorphy), so sections of
    any weight live on it; both the bottom and top rows are registered as caps.
    Used by the cylinder-oracle convergence tests, not by surface runs.
    """
    from .arithmetic import MoebiusElement

    n_rows = max(2, math.ceil(math.log(Y / s) / h))
    nx = max(3, round(1.0 / (h * s)))
    nodes = []
    rows = []
    pairs = []
    for r in range(n_rows + 1):
        y = s * (Y / s) ** (r / n_rows)
        ids = list(range(len(nodes), len(nodes) + nx + 1))
        nodes.extend(complex(t / nx, y) for t in range(nx))
        nodes.append(complex(1.0, y))
        rows.append(ids)
        pairs.append((ids[0], ids[-1], MoebiusElement.translation(1)))
    tris: list[tuple[int, int, int]] = []
    xs = np.arange(nx + 1) / nx
    from .mesh import _merge_rows
    for r in range(n_rows):
        _merge_rows(rows[r], xs, rows[r + 1], xs, tris)
    return TruncatedMesh(level=2, Y=float(Y), h=float(h), s0=float(s),
                         nodes=np.asarray(nodes), tris=np.asarray(tris, dtype=np.int64),
                         pairs=pairs, caps={0: rows[0][:-1], 1: rows[-1][:-1]})


# ---------------------------------------------------------------------------
# Weitzenboeck / dbar diagnostics
# ---------------------------------------------------------------------------

def dbar_energy(mesh: TruncatedMesh, b: float, psi: np.ndarray,
                alpha: np.ndarray | None = None) -> float:
    """Q = (1/2) int |(D_1 + i D_2) psi|^2 dx dy, gauged per triangle.

    Corner values (in their chart, with automorphy phases) are parallel
    transported to the centroid; in that radial gauge the covariant derivative
    at the centroid is the plain P1 gradient of the transported values.  The
    discrete Weitzenboeck identity is <K psi, psi> = 2 Q + b <M psi, psi> up to
    O(h^2) for smooth fields; Q vanishes on the holomorphic ground space.
    """
    from .bundle import connection_segment_integrals

    bint = _require_integer_b(b)
    g = mesh.geometry()
    pos, area, dofs3 = g["pos"], g["area"], g["dofs3"]
    arg1_tri = g["arg1_tri"]
    grads = _p1_gradients(pos, area)
    cen = g["centroid"]

    v = psi[dofs3] * np.exp(1j * bint * arg1_tri)
    if alpha is not None:
        wx, wy = whitney_centroid_values(mesh, alpha)
    vt = np.empty_like(v)
    for a in range(3):
        seg = bint * connection_segment_integrals(pos[:, a], cen)
        if alpha is not None:
            d = cen - pos[:, a]
            seg = seg + wx * d.real + wy * d.imag
        vt[:, a] = v[:, a] * np.exp(1j * seg)

    gx = np.einsum("ta,ta->t", vt, grads[:, :, 0])
    gy = np.einsum("ta,ta->t", vt, grads[:, :, 1])
    dbar = gx + 1j * gy
    return float(0.5 * np.sum(np.abs(dbar) ** 2 * area))


def whitney_centroid_values(mesh: TruncatedMesh, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean components of the Whitney interpolant of alpha at centroids."""
    g = mesh.geometry()
    pos, area, sig, eid = g["pos"], g["area"], g["sig"], g["eid"]
    grads = _p1_gradients(pos, area)
    nxt = [1, 2, 0]
    wx = np.zeros(mesh.n_tris)
    wy = np.zeros(mesh.n_tris)
    third = 1.0 / 3.0
    for k in range(3):
        f, t = k, nxt[k]
        # W_ft at centroid = (grad_t - grad_f)/3
        cx = third * (grads[:, t, 0] - grads[:, f, 0])
        cy = third * (grads[:, t, 1] - grads[:, f, 1])
        a = sig[:, k] * alpha[eid[:, k]]
        wx += a * cx
        wy += a * cy
    return wx, wy


def weitzenbock_residual(mesh: TruncatedMesh, b: float, psi: np.ndarray,
                         op: DiscreteOperatorPair | None = None,
                         alpha: np.ndarray | None = None) -> float:
    """|<K psi, psi> - 2 Q_dbar - b <M psi, psi>| / <M psi, psi> for one trial."""
    if op is None:
        op = assemble(mesh, b, alpha=alpha, dirichlet_caps=False)
    pf = op.restrict(psi)
    qk = float(np.vdot(pf, op.stiffness @ pf).real)
    qm = float(np.vdot(pf, op.mass @ pf).real)
    q = dbar_energy(mesh, b, psi, alpha=alpha)
    return abs(qk - 2.0 * q - b * qm) / qm
