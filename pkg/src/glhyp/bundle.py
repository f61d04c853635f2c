"""Automorphy factors, the constant-curvature connection, degree/weight bookkeeping.

The canonical factor is rho_b(gamma, z) = ((cz+d)/(c zbar+d))^b = exp(2ib arg(cz+d)).
For integer b it is an exact U(1) cocycle on all of SL(2,R); for non-integer b we
take the principal branch of the power, which can jump when cz+d crosses the
negative imaginary axis (documented limitation, flagged but not asserted).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .arithmetic import CongruenceSurface, GroupError, MoebiusElement


class BundleError(ValueError):
    """Invalid bundle data (degree, weight integrality, orientation...)."""


@dataclass(frozen=True)
class BundleData:
    """A degree-n unitary line bundle over H/Gamma(N) with its field strength b."""

    surface: CongruenceSurface
    degree: int

    def __post_init__(self):
        if self.degree < 1:
            raise BundleError(f"degree must be >= 1, got {self.degree}")

    @property
    def b_exact(self) -> Fraction:
        """b = 2 pi deg / |Sigma| as an exact rational."""
        return Fraction(2 * self.degree, 1) / self.surface.area_over_pi

    @property
    def b(self) -> float:
        return float(self.b_exact)

    @property
    def weight_exact(self) -> Fraction:
        return 2 * self.b_exact

    @property
    def weight(self) -> float:
        return float(self.weight_exact)

    def check_integrality(self) -> None:
        """Gauss-Bonnet cross-check: k (2g-2+m)/2 must reproduce the degree."""
        k = self.weight_exact
        s = self.surface
        deg = k * (2 * s.g - 2 + s.m) / 2
        if deg != self.degree:
            raise BundleError(f"weight/degree mismatch: {deg} != {self.degree}")


def weight_degree_convert(surf: CongruenceSurface, degree: int) -> tuple[Fraction, Fraction]:
    """(b, k) from the degree: b = 2 pi deg / area, k = 2b (exact rationals)."""
    bd = BundleData(surf, degree)
    bd.check_integrality()
    return bd.b_exact, bd.weight_exact


def degree_from_weight(surf: CongruenceSurface, k: Fraction) -> int:
    """Inverse conversion; rejects non-integral degrees."""
    deg = Fraction(k) * (2 * surf.g - 2 + surf.m) / 2
    if deg.denominator != 1 or deg <= 0:
        raise BundleError(f"weight {k} gives non-integral degree {deg}")
    return int(deg)


def automorphy_arg(gamma, z: complex) -> float:
    """The angle 2*arg(cz+d), so that rho_b = exp(i b * automorphy_arg)."""
    if isinstance(gamma, MoebiusElement):
        _, _, c, d = gamma.tuple()
    else:
        c, d = float(gamma[1][0]), float(gamma[1][1])
    return 2.0 * math.atan2(c * z.imag, c * z.real + d)


def automorphy_factor(gamma, z: complex, b: float) -> complex:
    """rho_b(gamma, z) = ((cz+d)/(c zbar + d))^b, unit modulus."""
    if z.imag <= 0:
        raise GroupError(f"point {z} is not in the upper half plane")
    if float(b) == int(b):
        # exact integer power of the unit ratio, no branch issues
        if isinstance(gamma, MoebiusElement):
            _, _, c, d = gamma.tuple()
        else:
            c, d = float(gamma[1][0]), float(gamma[1][1])
        w = c * z + d
        u = w / w.conjugate()
        return u ** int(b)
    return complex(np.exp(1j * b * automorphy_arg(gamma, z)))


def cocycle_residual(g1, g2, z: complex, b: float) -> float:
    """|rho(g1 g2, z) - rho(g1, g2 z) rho(g2, z)|."""
    if isinstance(g1, MoebiusElement) and isinstance(g2, MoebiusElement):
        g12 = g1 @ g2
        z2 = g2.apply(z)
    else:
        a1 = np.asarray(g1, dtype=float)
        a2 = np.asarray(g2, dtype=float)
        g12 = a1 @ a2
        z2 = (a2[0, 0] * z + a2[0, 1]) / (a2[1, 0] * z + a2[1, 1])
    lhs = automorphy_factor(g12, z, b)
    rhs = automorphy_factor(g1, z2, b) * automorphy_factor(g2, z, b)
    return abs(lhs - rhs)


def constant_connection(z: complex, b: float) -> tuple[float, float]:
    """The canonical constant-curvature connection a^b = b dx / y, as (a_x, a_y)."""
    if z.imag <= 0:
        raise GroupError(f"point {z} is not in the upper half plane")
    return (b / z.imag, 0.0)


def connection_segment_integral(zi: complex, zj: complex, b: float = 1.0) -> float:
    """Exact integral of a^b along the straight segment from zi to zj.

    int b dx/y = b (xj - xi) * log(yj/yi)/(yj - yi), with the y-constant limit.
    """
    dx = zj.real - zi.real
    yi, yj = zi.imag, zj.imag
    d = (yj - yi) / yi
    if abs(d) < 1e-7:
        fac = (1.0 - d / 2.0 + d * d / 3.0) / yi
    else:
        fac = math.log1p(d) / (yi * d)
    return b * dx * fac


def connection_segment_integrals(zi: np.ndarray, zj: np.ndarray) -> np.ndarray:
    """Vectorized unit-b version of :func:`connection_segment_integral`."""
    dx = zj.real - zi.real
    yi, yj = zi.imag, zj.imag
    d = (yj - yi) / yi
    small = np.abs(d) < 1e-7
    dsafe = np.where(small, 1.0, d)
    fac = np.where(small, (1.0 - d / 2.0 + d * d / 3.0) / yi, np.log1p(dsafe) / (yi * dsafe))
    return dx * fac


def equivariance_residual_connection(gamma: MoebiusElement, z: complex, b: float) -> float:
    """|gamma^* a^b - a^b - d(b * automorphy_arg)| at z, in closed form.

    The consistent transformation for sections psi(gamma z) = rho_b psi(z) under
    nabla = d - i a is gamma^* a^b = a^b + d f with rho_b = e^{i f},
    f = b * automorphy_arg = 2b arg(cz+d).
    """
    _, _, c, d = gamma.tuple()
    w = gamma.apply(z)
    jden = c * z + d
    jac = 1.0 / (jden * jden)  # dw/dz, holomorphic
    ax_w, _ = constant_connection(w, b)
    pull_x = ax_w * jac.real
    pull_y = -ax_w * jac.imag
    a0x, a0y = constant_connection(z, b)
    mod2 = abs(jden) ** 2
    dfx = -2.0 * b * c * c * z.imag / mod2
    dfy = 2.0 * b * c * (c * z.real + d) / mod2
    return abs(pull_x - a0x - dfx) + abs(pull_y - a0y - dfy)


def equivariance_residual_section(values_z: np.ndarray, values_gz: np.ndarray,
                                  gamma: MoebiusElement, zs: np.ndarray, b: float) -> float:
    """max |Psi(gamma z) - rho_b(gamma, z) Psi(z)| over the sample points."""
    rho = np.array([automorphy_factor(gamma, complex(z), b) for z in np.atleast_1d(zs)])
    return float(np.max(np.abs(np.asarray(values_gz) - rho * np.asarray(values_z))))


def degree_from_flux(mesh, b: float, alpha: np.ndarray | None = None) -> float:
    """(1/2pi) int da over the truncated mesh for a = a^b + alpha.

    Converges to the degree as Y -> infinity; the truncation deficit is
    exactly b*m/(2*pi*Y) for alpha with zero cap circulations.
    """
    from .spectra import circ_matrix

    if not mesh.caps:
        raise BundleError("mesh carries no cusp truncation metadata (caps)")
    total = b * mesh.area_hyp
    if alpha is not None:
        total += float(np.sum(circ_matrix(mesh) @ alpha))
    return total / (2.0 * math.pi)


def gauge_transform(psi: np.ndarray, alpha: np.ndarray, theta: np.ndarray,
                    edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Discrete local gauge transform: psi -> e^{i theta} psi, alpha_e += theta_j - theta_i.

    ``edges`` is an (n_edges, 2) array of (i, j) node indices with the canonical
    orientation i -> j used for the edge values.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(theta)):
        raise BundleError("gauge phase must be finite")
    psi2 = psi * np.exp(1j * theta)
    alpha2 = alpha + (theta[edges[:, 1]] - theta[edges[:, 0]])
    return psi2, alpha2
