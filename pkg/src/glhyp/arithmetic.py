"""Exact arithmetic of the principal congruence subgroups Gamma(N) in SL(2,Z).

Everything group- or area-valued is exact (integers, Fractions, rational
multiples of pi); floating point enters only when a Moebius map is applied
to a complex point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

#: Sentinel accepted by :func:`mobius_apply` for the boundary point at infinity.
INFINITY = complex(math.inf, 0.0)

_REDUCE_CAP = 10_000


class GroupError(ValueError):
    """Invalid group-theoretic input (level, determinant, membership...)."""


def _is_inf(z: complex) -> bool:
    return not (math.isfinite(z.real) and math.isfinite(z.imag))


@dataclass(frozen=True)
class MoebiusElement:
    """An element of SL(2,Z), identified projectively with its negation."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for entry in (self.a, self.b, self.c, self.d):
            if not isinstance(entry, (int, np.integer)):
                raise GroupError(f"matrix entries must be integers, got {entry!r}")
        if self.a * self.d - self.b * self.c != 1:
            raise GroupError(f"determinant must be 1, got matrix {self.tuple()}")

    def tuple(self) -> tuple[int, int, int, int]:
        return (int(self.a), int(self.b), int(self.c), int(self.d))

    def _canonical(self) -> tuple[int, int, int, int]:
        t = self.tuple()
        for entry in t:
            if entry != 0:
                return t if entry > 0 else tuple(-x for x in t)
        raise AssertionError("zero matrix cannot have determinant 1")

    def __eq__(self, other) -> bool:
        if not isinstance(other, MoebiusElement):
            return NotImplemented
        return self._canonical() == other._canonical()

    def __hash__(self) -> int:
        return hash(self._canonical())

    def __matmul__(self, other: "MoebiusElement") -> "MoebiusElement":
        a, b, c, d = self.tuple()
        e, f, g, h = other.tuple()
        return MoebiusElement(a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)

    def inverse(self) -> "MoebiusElement":
        a, b, c, d = self.tuple()
        return MoebiusElement(d, -b, -c, a)

    def apply(self, z: complex) -> complex:
        return mobius_apply(self, z)

    def apply_cusp(self, p: int, q: int) -> tuple[int, int]:
        """Image of the cusp p/q (q=0 for infinity), in lowest terms with q >= 0."""
        a, b, c, d = self.tuple()
        pp, qq = a * p + b * q, c * p + d * q
        return _normalize_cusp_pair(pp, qq)

    @staticmethod
    def identity() -> "MoebiusElement":
        return MoebiusElement(1, 0, 0, 1)

    @staticmethod
    def translation(n: int) -> "MoebiusElement":
        return MoebiusElement(1, n, 0, 1)

    @staticmethod
    def inversion() -> "MoebiusElement":
        return MoebiusElement(0, -1, 1, 0)


T = MoebiusElement.translation(1)
S = MoebiusElement.inversion()


def mobius_apply(gamma: MoebiusElement, z: complex) -> complex:
    """(az+b)/(cz+d) on the upper half plane; gamma(inf) = a/c."""
    a, b, c, d = gamma.tuple()
    if _is_inf(z):
        if c == 0:
            return INFINITY
        return complex(a / c, 0.0)
    z = complex(z)
    if z.imag <= 0.0:
        raise GroupError(f"point {z} is not in the upper half plane")
    if c == 0:
        # d = 1/a exactly, so this is z/d^2 + b/d
        return (a * z + b) / d
    den = c * z + d
    return (a * z + b) / den


def _normalize_cusp_pair(p: int, q: int) -> tuple[int, int]:
    g = math.gcd(p, q)
    if g == 0:
        raise GroupError("cusp (0, 0) is not a boundary point")
    p, q = p // g, q // g
    if q < 0 or (q == 0 and p < 0):
        p, q = -p, -q
    return p, q


def is_member(gamma: MoebiusElement, N: int) -> bool:
    """Membership in Gamma(N), projectively (gamma or -gamma congruent to I)."""
    if N < 1:
        raise GroupError(f"level must be >= 1, got {N}")
    a, b, c, d = gamma.tuple()
    for s in (1, -1):
        if (s * a - 1) % N == 0 and (s * d - 1) % N == 0 and (s * b) % N == 0 and (s * c) % N == 0:
            return True
    return False


def cusp_count(N: int) -> int:
    """Number of cusps of Gamma(N): 3 for N=2, else N^2/2 * prod(1 - 1/p^2)."""
    if N < 2:
        raise GroupError(f"level must be >= 2, got {N}")
    if N == 2:
        return 3
    m = Fraction(N * N, 2)
    for p in _prime_divisors(N):
        m *= Fraction(p * p - 1, p * p)
    if m.denominator != 1:
        raise AssertionError(f"cusp count for N={N} is not an integer: {m}")
    return int(m)


def genus(N: int) -> int:
    """Genus of H/Gamma(N): 1 + (N-6) m_N / 12."""
    if N < 2:
        raise GroupError(f"level must be >= 2, got {N}")
    g = 1 + Fraction((N - 6) * cusp_count(N), 12)
    if g.denominator != 1 or g < 0:
        raise AssertionError(f"genus formula gave {g} for N={N}")
    return int(g)


def area_over_pi(N: int) -> Fraction:
    """Hyperbolic area of H/Gamma(N) divided by pi: N * m_N / 3, exactly."""
    return Fraction(N * cusp_count(N), 3)


def _prime_divisors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        if n % p == 0:
            out.append(p)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


@dataclass(frozen=True)
class Cusp:
    """A cusp of Gamma(N): the point p/q (q=0 for infinity) plus its chart data.

    ``g`` is an integer matrix with g(inf) = p/q; the width-normalized scaling
    matrix is sigma = translation(1/(2N)) . dilation(1/N) . g^{-1}, so that
    sigma maps the cusp to infinity and conjugates the stabilizer generator
    g T^N g^{-1} to the unit translation.
    """

    p: int
    q: int
    g: MoebiusElement
    width: int  # = N for every cusp of Gamma(N)

    @property
    def value(self) -> Fraction | None:
        return None if self.q == 0 else Fraction(self.p, self.q)

    @property
    def is_infinity(self) -> bool:
        return self.q == 0

    def stabilizer_generator(self) -> MoebiusElement:
        return self.g @ MoebiusElement.translation(self.width) @ self.g.inverse()

    def scaling_matrix(self) -> np.ndarray:
        """The normalized scaling matrix sigma as a real 2x2 array, det 1."""
        rt = math.sqrt(self.width)
        dil = np.array([[1.0 / rt, 0.0], [0.0, rt]])
        tr = np.array([[1.0, 1.0 / (2.0 * self.width)], [0.0, 1.0]])
        ginv = np.array(self.g.inverse().tuple(), dtype=float).reshape(2, 2)
        return tr @ dil @ ginv

    def to_cylinder(self, z: complex) -> complex:
        """Normalized cusp coordinate w = sigma(z); Im w is the cylinder height."""
        w = mobius_apply(self.g.inverse(), z)
        if _is_inf(w):
            raise GroupError("the cusp point itself has no cylinder coordinate")
        return w / self.width + 0.5 / self.width

    def from_cylinder(self, w: complex) -> complex:
        return mobius_apply(self.g, complex(self.width * w.real - 0.5, self.width * w.imag))


def base_scaling_matrix(cusp_value: Fraction | None) -> np.ndarray:
    """The raw (un-normalized) scaling matrix: identity for infinity, else
    (0, -1; 1, -c)."""
    if cusp_value is None:
        return np.eye(2)
    c = float(cusp_value)
    return np.array([[0.0, -1.0], [1.0, -c]])


def _canonical_mod(gamma: MoebiusElement, N: int) -> tuple[int, int, int, int]:
    t = tuple(x % N for x in gamma.tuple())
    tneg = tuple((-x) % N for x in gamma.tuple())
    return min(t, tneg)


def _bezout_completion(p: int, q: int) -> MoebiusElement:
    """Some g in SL(2,Z) with g(inf) = p/q (first column (p, q))."""
    if math.gcd(p, q) != 1:
        raise GroupError(f"cusp pair ({p}, {q}) is not primitive")
    if q == 0:
        return MoebiusElement.identity()
    # find s, t with s*p + t*q = 1; then det (p, -t; q, s) = p*s + q*t = 1
    old_r, r = p, q
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        quo = old_r // r
        old_r, r = r, old_r - quo * r
        old_s, s = s, old_s - quo * s
        old_t, t = t, old_t - quo * t
    if old_r == -1:
        old_s, old_t = -old_s, -old_t
    return MoebiusElement(p, -old_t, q, old_s)


@dataclass(frozen=True)
class CongruenceSurface:
    """All geometric data of Sigma = H/Gamma(N)."""

    level: int
    m: int
    g: int
    area_over_pi: Fraction
    cusps: tuple[Cusp, ...]
    coset_reps: tuple[MoebiusElement, ...]
    _coset_table: dict = field(repr=False, hash=False, compare=False, default_factory=dict)

    @property
    def area(self) -> float:
        return math.pi * float(self.area_over_pi)

    def coset_index(self, gamma: MoebiusElement) -> int:
        """Index j with Gamma(N) coset_reps[j] = Gamma(N) gamma (projective)."""
        key = _canonical_mod(gamma, self.level)
        try:
            return self._coset_table[key]
        except KeyError:
            raise GroupError(f"{gamma} has no coset in the table (not in SL(2,Z) mod {self.level}?)")

    def contains(self, gamma: MoebiusElement) -> bool:
        return is_member(gamma, self.level)

    def cusp_class_index(self, p: int, q: int) -> int:
        """Which cusp representative (p, q) is Gamma(N)-equivalent to."""
        p, q = _normalize_cusp_pair(p, q)
        N = self.level
        for i, c in enumerate(self.cusps):
            if ((p - c.p) % N == 0 and (q - c.q) % N == 0) or ((p + c.p) % N == 0 and (q + c.q) % N == 0):
                return i
        raise GroupError(f"cusp ({p}, {q}) matched no class at level {N}")

    def to_json(self) -> str:
        data = {
            "level": self.level,
            "m": self.m,
            "g": self.g,
            "area_over_pi": [self.area_over_pi.numerator, self.area_over_pi.denominator],
            "cusps": [{"p": c.p, "q": c.q} for c in self.cusps],
            "coset_count": len(self.coset_reps),
        }
        return json.dumps(data, indent=2, sort_keys=True)


def _cusp_classes(N: int) -> list[tuple[int, int]]:
    """Representatives (p, q) of primitive vectors in (Z/N)^2 up to sign."""
    seen = set()
    classes = []
    for q in range(N):
        for p in range(N):
            if math.gcd(math.gcd(p, q), N) != 1:
                continue
            key = min((p % N, q % N), ((-p) % N, (-q) % N))
            if key in seen:
                continue
            seen.add(key)
            classes.append(key)
    return classes


def _lift_primitive(p: int, q: int, N: int) -> tuple[int, int]:
    """Lift a primitive pair mod N to a coprime integer pair (small search)."""
    for dq in range(0, 4 * N + 1):
        for sq in (q + dq * N, q - dq * N):
            for dp in range(0, 4 * N + 1):
                for sp in (p + dp * N, p - dp * N):
                    if math.gcd(sp, sq) == 1:
                        return _normalize_cusp_pair(sp, sq)
    raise AssertionError(f"no coprime lift found for ({p}, {q}) mod {N}")


def surface(N: int) -> CongruenceSurface:
    """Build the full surface data for Sigma = H/Gamma(N), N >= 2."""
    if N < 2:
        raise GroupError(
            f"level {N} rejected: Gamma(1) has elliptic points, which are excluded"
        )
    m = cusp_count(N)
    g = genus(N)
    area = area_over_pi(N)

    cusps = []
    for (p0, q0) in _cusp_classes(N):
        p, q = _lift_primitive(p0, q0, N)
        cusps.append(Cusp(p=p, q=q, g=_bezout_completion(p, q), width=N))
    # put infinity first, then sort by value for reproducibility
    cusps.sort(key=lambda c: (0 if c.is_infinity else 1, c.p if c.q == 0 else c.p / c.q))
    if len(cusps) != m:
        raise AssertionError(f"enumerated {len(cusps)} cusp classes, expected {m}")

    reps: list[MoebiusElement] = []
    table: dict = {}
    for i, c in enumerate(cusps):
        for k in range(N):
            rep = c.g @ MoebiusElement.translation(k)
            key = _canonical_mod(rep, N)
            if key in table:
                raise AssertionError(f"coset collision at cusp {i}, k={k}")
            table[key] = len(reps)
            reps.append(rep)
    if len(reps) != 3 * area:  # index in PSL(2,Z) equals 3*area/pi
        raise AssertionError(f"coset count {len(reps)} != 3*area/pi = {3 * area}")

    return CongruenceSurface(
        level=N,
        m=m,
        g=g,
        area_over_pi=area,
        cusps=tuple(cusps),
        coset_reps=tuple(reps),
        _coset_table=table,
    )


def _standard_reduce(z: complex) -> tuple[complex, MoebiusElement]:
    """Reduce z into the PSL(2,Z) cell {|Re| <= 1/2, |z| >= 1}; returns (gz, g)."""
    if z.imag <= 0:
        raise GroupError(f"point {z} is not in the upper half plane")
    g = MoebiusElement.identity()
    for _ in range(_REDUCE_CAP):
        n = round(z.real)
        if n != 0:
            z = z - n
            g = MoebiusElement.translation(-n) @ g
        zz = abs(z)
        if zz < 1.0 - 1e-15:
            z = -1.0 / z
            g = S @ g
        else:
            break
    else:
        raise GroupError("fundamental-domain reduction did not terminate")
    # boundary tie-break: prefer Re z = -1/2 over +1/2, and |z|=1 left half
    if abs(z.real - 0.5) < 1e-13:
        z = z - 1
        g = MoebiusElement.translation(-1) @ g
    if abs(abs(z) - 1.0) < 1e-13 and z.real > 1e-13:
        z = -1.0 / z
        g = S @ g
    return z, g


def reduce_point(z: complex, surf: CongruenceSurface) -> tuple[complex, MoebiusElement]:
    """Map z into the chosen fundamental domain of Gamma(N).

    Returns (z0, gamma) with gamma in Gamma(N) and z0 = gamma z lying in the
    union of coset translates rep_j(standard cell).
    """
    _, gstd = _standard_reduce(z)
    j = surf.coset_index(gstd.inverse())
    delta = surf.coset_reps[j] @ gstd
    if not is_member(delta, surf.level):
        raise AssertionError("coset bookkeeping produced a non-member")
    return mobius_apply(delta, z), delta


def in_domain(z: complex, surf: CongruenceSurface) -> bool:
    """Whether z already lies in the chosen fundamental domain (up to 1e-9)."""
    z0, _ = reduce_point(z, surf)
    return abs(z0 - z) < 1e-9
