"""Analytic construction of the ground space: Poincare series, Whittaker
functions, dimension counts, and cross-validation against the spectral solver.

The series attached to cusp c_i is

    xi_i(z) = sum over Gamma_i \\ Gamma(N) of  phi(sigma_i gamma z) rho_b(sigma_i gamma, z)^{-1},

with seed phi(w) = (Im w)^b e^{2 pi i w} and sigma_i the width-normalized
scaling matrix.  Cosets are enumerated completely through their bottom rows:
gamma runs over Gamma_i\\Gamma(N) iff the bottom row (c, d) of g_i^{-1} gamma
runs over the primitive integer pairs congruent to the bottom row of g_i^{-1}
mod N (projectively for N = 2), one coset per row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arithmetic import CongruenceSurface, MoebiusElement, is_member


class CuspFormError(RuntimeError):
    pass


class DimensionMismatch(CuspFormError):
    """Spectral cluster size disagrees with the dimension formula."""


def dim_cusp_forms(surf: CongruenceSurface, k: int) -> int:
    """dim S_k(Gamma(N)) for even k >= 2: g for k = 2, else (k-1)(g-1) + (k/2-1)m.

    This is the classical count for a genus-g surface with m cusps and no
    elliptic points; it equals the multiplicity of the eigenvalue b = k/2 of
    the magnetic Laplacian (the L2 condition kills the constant Fourier term
    at every cusp).
    """
    if k <= 0 or k % 2 != 0:
        raise CuspFormError(f"weight k = {k} must be a positive even integer")
    if k == 2:
        return surf.g
    d = (k - 1) * (surf.g - 1) + (k // 2 - 1) * surf.m
    if d < 0:
        raise CuspFormError(f"negative dimension {d} for k={k}, N={surf.level}")
    return d


# ---------------------------------------------------------------------------
# Whittaker W
# ---------------------------------------------------------------------------

def whittaker_w(beta: float, mu: float, y):
    """The decaying Whittaker function W_{beta,mu}(y), vectorized in y.

    W solves W'' + (-1/4 + beta/y + (1/4 - mu^2)/y^2) W = 0 with W = O(e^{-y/2});
    on the ray mu = beta - 1/2 it reduces to the closed form y^beta e^{-y/2}.
    """
    from scipy.special import hyperu

    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise CuspFormError("Whittaker W requires y > 0")
    if abs(mu - (beta - 0.5)) < 1e-14:
        out = y ** beta * np.exp(-y / 2.0)
    else:
        out = np.exp(-y / 2.0) * y ** (mu + 0.5) * hyperu(mu - beta + 0.5, 1.0 + 2.0 * mu, y)
    if np.any(~np.isfinite(out)):
        raise CuspFormError(
            f"no stable evaluation for W_({beta},{mu}) at given y (hyperu overflow)")
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# coset enumeration and the Poincare series
# ---------------------------------------------------------------------------

def _ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    return old_r, old_s, old_t  # gcd, x, y with a x + b y = gcd


_COSET_CACHE: dict = {}


def coset_matrices(surf: CongruenceSurface, cusp_index: int, depth: int) -> np.ndarray:
    """Matrices mu = g_i^{-1} gamma, one per coset of Gamma_i\\Gamma(N), with
    bottom-row sup norm <= depth * N.  Returns an (n, 4) integer array."""
    key = (surf.level, cusp_index, depth)
    if key in _COSET_CACHE:
        return _COSET_CACHE[key]
    N = surf.level
    cusp = surf.cusps[cusp_index]
    ginv = cusp.g.inverse()
    a0, b0, c0, d0 = ginv.tuple()
    R = depth * N

    def residue_values(r0: int) -> range:
        lo = -((R + r0) // N)
        hi = (R - r0) // N
        return range(r0 + lo * N, r0 + hi * N + 1, N)

    mats: list[tuple[int, int, int, int]] = []
    for c in residue_values(c0 % N):
        for d in residue_values(d0 % N):
            if math.gcd(c, d) != 1:
                continue
            if N == 2 and (c < 0 or (c == 0 and d < 0)):
                continue  # projective quotient: -I lies in Gamma(2)
            g, x, yy = _ext_gcd(c, d)
            if g == -1:
                x, yy = -x, -yy
            # base completion (a*, b*) with a* d - b* c = 1: (y, -x)
            astar, bstar = yy, -x
            # shift by k along (c, d) to land in the residue class of the coset
            k = (x * (a0 - astar) + yy * (b0 - bstar)) % N
            a = astar + k * c
            b = bstar + k * d
            if (a - a0) % N or (b - b0) % N:
                continue  # this row only occurs with the opposite sign class
            mu = MoebiusElement(int(a), int(b), int(c), int(d))
            if not is_member(cusp.g @ mu, N):
                continue
            mats.append(mu.tuple())
    if not mats:
        raise CuspFormError("coset enumeration came up empty")
    arr = np.array(sorted(set(mats)), dtype=np.int64)
    _COSET_CACHE[key] = arr
    return arr


@dataclass
class CuspFormSample:
    """Poincare-series values with truncation metadata."""

    weight: int
    b: int
    cusp_index: int
    grid: np.ndarray       # evaluation points z in H
    values: np.ndarray
    tail: float            # estimated truncation error (uniform over the grid)
    depth: int


def _series_terms(mats: np.ndarray, z: complex, b: int, N: int, shift: float):
    a, bb, c, d = mats[:, 0], mats[:, 1], mats[:, 2], mats[:, 3]
    den = c * z + d
    w = (a * z + bb) / den
    w = w / N + shift
    u = den / np.conj(den)
    phi = w.imag ** b * np.exp(2j * math.pi * w)
    return phi * u ** (-b)


def poincare_series(surf: CongruenceSurface, cusp_index: int, z, b: int,
                    depth: int = 30) -> tuple[np.ndarray, float]:
    """Partial Poincare series at point(s) z with a tail estimate.

    ``depth`` bounds the coset bottom rows by sup norm depth*N; increasing it
    shrinks the reported tail.  Convergence requires b >= 1 (absolute for
    b >= 2; for b = 1 the tail is an empirical Cauchy estimate).
    """
    if b < 1 or b != int(b):
        raise CuspFormError(f"series requires integer b >= 1, got {b}")
    b = int(b)
    N = surf.level
    shift = 0.5 / N
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(zs.imag <= 0):
        raise CuspFormError("evaluation points must lie in the upper half plane")

    mats_half = coset_matrices(surf, cusp_index, max(1, depth // 2))
    mats = coset_matrices(surf, cusp_index, depth)
    half_keys = set(map(tuple, mats_half.tolist()))
    outer = np.array([not (tuple(r) in half_keys) for r in mats.tolist()])

    vals = np.empty(len(zs), dtype=complex)
    tail = 0.0
    for i, zz in enumerate(zs):
        terms = _series_terms(mats, complex(zz), b, N, shift)
        vals[i] = terms.sum()
        shell_abs = float(np.abs(terms[outer]).sum())
        increment = abs(terms[outer].sum())
        if b >= 2:
            est = shell_abs * max(1.0, (depth * N) / (2 * b - 2)) * 0.5 + increment
        else:
            est = 4.0 * increment + shell_abs
        tail = max(tail, est)
    out = vals if np.ndim(z) else complex(vals[0])
    return out, tail


def poincare_sample(surf: CongruenceSurface, cusp_index: int, grid, b: int,
                    depth: int = 30) -> CuspFormSample:
    vals, tail = poincare_series(surf, cusp_index, np.asarray(grid, dtype=complex),
                                 b, depth)
    return CuspFormSample(weight=2 * b, b=b, cusp_index=cusp_index,
                          grid=np.asarray(grid, dtype=complex),
                          values=np.atleast_1d(vals), tail=tail, depth=depth)


def cusp_chart_values(surf: CongruenceSurface, cusp_index: int, w_points,
                      b: int, depth: int = 30) -> tuple[np.ndarray, float]:
    """Series values pulled back to the cusp cylinder chart.

    For w in the width-normalized chart (Im w = cylinder height), returns
    xi(sigma^{-1} w) rho_b(sigma^{-1}, w)^{-1}; this pullback is 1-periodic in
    Re w and has the Whittaker Fourier expansion with no constant term.
    """
    import numpy.linalg as la

    from .bundle import automorphy_factor

    cusp = surf.cusps[cusp_index]
    sigma_inv = la.inv(cusp.scaling_matrix())
    ws = np.atleast_1d(np.asarray(w_points, dtype=complex))
    zs = np.array([cusp.from_cylinder(complex(w)) for w in ws])
    vals, tail = poincare_series(surf, cusp_index, zs, b, depth)
    rho = np.array([automorphy_factor(sigma_inv, complex(w), b) for w in ws])
    out = np.atleast_1d(vals) / rho
    return (out if np.ndim(w_points) else complex(out[0])), tail


# ---------------------------------------------------------------------------
# Fourier expansion at a cusp
# ---------------------------------------------------------------------------

def fourier_coefficients(values: np.ndarray, y: float, b: int,
                         k_range: range) -> dict[int, complex]:
    """Whittaker-normalized Fourier coefficients from values on a horizontal
    line Im w = y, Re w = j/M (cylinder coordinates).

    A_k = (FFT_k of values) / W_{b sgn k, b-1/2}(4 pi |k| y); the results are
    y-independent exactly when the field has the cusp-form expansion.
    """
    values = np.asarray(values, dtype=complex)
    M = len(values)
    raw = np.fft.fft(values) / M
    out: dict[int, complex] = {}
    for k in k_range:
        if k == 0:
            out[0] = complex(raw[0])
            continue
        wk = whittaker_w(b * (1 if k > 0 else -1), b - 0.5, 4.0 * math.pi * abs(k) * y)
        if abs(wk) < 1e-300:
            raise CuspFormError(f"W too small at k={k}, y={y}: lower the height")
        out[k] = complex(raw[k % M]) / wk
    return out


# ---------------------------------------------------------------------------
# spectral ground space
# ---------------------------------------------------------------------------

def ground_space_basis(result, expected_dim: int, window: float = 0.1) -> np.ndarray:
    """Mass-orthogonal ground-space basis, each column with <|xi|^2> = 1.

    ``result`` is a SpectralResult from lowest_eigenpairs; the cluster is the
    set of eigenvalues within ``window * b`` of b.  A count mismatch raises
    DimensionMismatch (mesh too coarse, or wrong expectation).
    """
    op = result.op
    b = op.b
    mask = np.abs(result.eigenvalues - b) <= window * max(b, 1.0)
    count = int(mask.sum())
    if count != expected_dim:
        raise DimensionMismatch(
            f"found {count} eigenvalues within {window * max(b, 1.0):.3f} of b={b}, "
            f"expected {expected_dim}: {result.eigenvalues}")
    vecs = result.full_vectors()[:, mask]
    mesh = op.mesh
    cols = []
    for j in range(count):
        v = vecs[:, j]
        nrm = math.sqrt(float(mesh.bracket(np.abs(v) ** 2).real))
        cols.append(v / nrm)
    return np.stack(cols, axis=1)
