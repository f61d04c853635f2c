"""Triangulated truncated fundamental domains with equivariant pairing tables.

The fundamental domain of Gamma(N) is a union of N*m coset translates of the
standard PSL(2,Z) cell.  Each translate is a Moebius copy of one reference mesh
of the cell truncated at height N*s0 in cell coordinates; above that, each cusp
carries a structured cylinder mesh in width-normalized cusp coordinates,
truncated at height Y.  Seam nodes exist once per chart copy; a pairing table
(master i, slave j, gamma) with gamma in Gamma(N) and gamma z_i = z_j records
every identification, and the equivariant phase bookkeeping derives from it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .arithmetic import CongruenceSurface, MoebiusElement, surface
from .bundle import automorphy_arg, connection_segment_integrals

PAIR_TOL = 1e-9

_S = MoebiusElement.inversion()


class MeshError(RuntimeError):
    """Non-manifold gluing or inconsistent mesh construction."""


def hyperbolic_distance(z1: complex, z2: complex) -> float:
    return math.acosh(1.0 + abs(z1 - z2) ** 2 / (2.0 * z1.imag * z2.imag))


def _mobius_vec(g: MoebiusElement, z: np.ndarray) -> np.ndarray:
    a, b, c, d = g.tuple()
    return (a * z + b) / (c * z + d)


# ---------------------------------------------------------------------------
# reference cell
# ---------------------------------------------------------------------------

_CORNER_Y = math.sqrt(3.0) / 2.0


def _arc_nodes(n_arc: int) -> np.ndarray:
    """Nodes on the unit arc between the cell corners, uniform in hyperbolic
    arclength and exactly mirror-symmetric about x = 0 (ordered by x)."""
    L = math.log(3.0)
    pts = np.empty(n_arc + 1, dtype=complex)
    half = n_arc // 2
    for i in range(half + 1):
        s = i * L / n_arc
        theta = 2.0 * math.atan(math.tan(math.pi / 6.0) * math.exp(s))
        # theta runs pi/3 .. pi/2, so x = cos(theta) runs 1/2 .. 0: right half
        pts[n_arc - i] = complex(math.cos(theta), math.sin(theta))
    for i in range(half + 1):
        pts[i] = complex(-pts[n_arc - i].real, pts[n_arc - i].imag)
    pts[0] = complex(-0.5, _CORNER_Y)
    pts[-1] = complex(0.5, _CORNER_Y)
    return pts


def _merge_rows(row_a: list[int], xa, row_b: list[int], xb,
                tris: list[tuple[int, int, int]]) -> None:
    """Triangulate the strip between node row a (below) and row b (above).

    Both rows ascend in x over the same interval; triangles come out CCW.
    """
    i = j = 0
    na, nb = len(row_a), len(row_b)
    while i < na - 1 or j < nb - 1:
        if j == nb - 1 or (i < na - 1 and xa[i + 1] <= xb[j + 1] + 1e-14):
            tris.append((row_a[i], row_a[i + 1], row_b[j]))
            i += 1
        else:
            tris.append((row_a[i], row_b[j + 1], row_b[j]))
            j += 1


@dataclass
class _RefCell:
    pts: np.ndarray
    tris: np.ndarray
    arc: list[int]          # ordered by increasing x
    wall_left: list[int]    # ordered by increasing y, corners included
    wall_right: list[int]
    top: list[int]          # ordered by increasing x
    n_top: int


def _reference_cell(N: int, s0: float, h: float) -> _RefCell:
    """Mesh the truncated standard cell {|x| <= 1/2, |z| >= 1, y <= N*s0}."""
    H = N * s0
    if H <= 1.01:
        raise MeshError(f"cut height N*s0 = {H} must exceed the arc top (1.0)")
    # N * n_top is the cylinder bottom ring; rings need >= 3 distinct nodes
    n_top = max(math.ceil(3 / N), round(1.0 / (N * s0 * h)))

    n_arc = max(2, 2 * math.ceil(math.log(3.0) / (2.0 * h)))
    arc_pts = _arc_nodes(n_arc)

    y_a = min(1.25, 0.5 * (1.0 + H))
    pts: list[complex] = list(arc_pts)
    rows: list[list[int]] = [list(range(n_arc + 1))]

    # lower patch: transfinite blend from the arc up to the line y = y_a
    n_a = max(2, math.ceil(math.log(y_a / _CORNER_Y) / h))
    top_a = np.array([complex(-0.5 + i / n_arc, y_a) for i in range(n_arc + 1)])
    top_a[-1] = complex(0.5, y_a)
    for j in range(1, n_a + 1):
        v = j / n_a
        row_pts = top_a.copy() if j == n_a else (1.0 - v) * arc_pts + v * top_a
        row_pts[0] = complex(-0.5, row_pts[0].imag)
        row_pts[-1] = complex(0.5, row_pts[-1].imag)
        ids = list(range(len(pts), len(pts) + n_arc + 1))
        pts.extend(row_pts)
        rows.append(ids)

    # tower patch: log-graded rows with shrinking x-counts up to y = H
    n_b = max(1, math.ceil(math.log(H / y_a) / h))
    count = n_arc
    for j in range(1, n_b + 1):
        y = H if j == n_b else y_a * (H / y_a) ** (j / n_b)
        n = min(count, max(n_top, round(1.0 / (y * h))))
        if j == n_b:
            n = n_top
        count = n
        ids = list(range(len(pts), len(pts) + n + 1))
        pts.extend(complex(-0.5 + t / n, y) for t in range(n))
        pts.append(complex(0.5, y))
        rows.append(ids)

    tris: list[tuple[int, int, int]] = []
    parr = np.asarray(pts)
    for j in range(len(rows) - 1):
        _merge_rows(rows[j], parr[rows[j]].real, rows[j + 1], parr[rows[j + 1]].real, tris)

    tri_arr = np.asarray(tris, dtype=np.int64)
    p = parr[tri_arr]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    if np.any(e1.real * e2.imag - e1.imag * e2.real <= 0):
        raise MeshError("reference cell produced a degenerate or clockwise triangle")

    return _RefCell(pts=parr, tris=tri_arr, arc=rows[0],
                    wall_left=[r[0] for r in rows], wall_right=[r[-1] for r in rows],
                    top=rows[-1], n_top=n_top)


# ---------------------------------------------------------------------------
# the assembled truncated surface mesh
# ---------------------------------------------------------------------------

@dataclass
class TruncatedMesh:
    """Truncated fundamental-domain triangulation of H/Gamma(N)."""

    level: int
    Y: float
    h: float
    s0: float
    nodes: np.ndarray                               # complex (n,)
    tris: np.ndarray                                # (nt, 3), CCW per chart
    pairs: list[tuple[int, int, MoebiusElement]]    # gamma z_master = z_slave
    caps: dict[int, list[int]]                      # cusp index -> cap node ids
    surf: CongruenceSurface = field(repr=False, default=None, compare=False)

    def __post_init__(self):
        if self.surf is None:
            self.surf = surface(self.level)
        self._geom = None
        self._identify()

    # -- equivariant identification ------------------------------------------

    def _identify(self) -> None:
        n = len(self.nodes)
        parent = np.arange(n)
        gam: list[MoebiusElement] = [MoebiusElement.identity()] * n
        ident = MoebiusElement.identity()

        def find(x: int) -> tuple[int, MoebiusElement]:
            # z_x = gam[x] z_parent[x]; compose walking up, compress the start.
            x0, total = x, ident
            while parent[x] != x:
                total = total @ gam[x]
                x = parent[x]
            if parent[x0] != x:
                parent[x0] = x
                gam[x0] = total
            return x, total

        for (i, j, g) in self.pairs:
            ri, gi = find(i)
            rj, gj = find(j)
            if ri == rj:
                if gj != g @ gi:
                    raise MeshError(f"inconsistent pairing cycle at nodes {i}->{j}")
                continue
            parent[rj] = ri
            gam[rj] = gj.inverse() @ g @ gi

        root = np.empty(n, dtype=np.int64)
        gamma_root: list[MoebiusElement] = [ident] * n
        for x in range(n):
            root[x], gamma_root[x] = find(x)

        # position verification (spec: pairing residual below 1e-9)
        worst = 0.0
        for x in range(n):
            err = abs(gamma_root[x].apply(complex(self.nodes[root[x]])) - complex(self.nodes[x]))
            if err > worst:
                worst = err
        if worst > PAIR_TOL:
            raise MeshError(f"pairing verification failed: worst residual {worst:.3e}")

        self.root = root
        self.gamma_root = gamma_root
        is_root = root == np.arange(n)
        dof_index = np.cumsum(is_root) - 1
        self.dof_of_node = dof_index[root]
        self.ndof = int(is_root.sum())
        self.dof_node = np.flatnonzero(is_root)
        self.pair_residual = worst

    # -- basic queries ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_tris(self) -> int:
        return len(self.tris)

    @property
    def dof_positions(self) -> np.ndarray:
        return self.nodes[self.dof_node]

    def cap_dofs(self) -> np.ndarray:
        ids: set[int] = set()
        for nodes in self.caps.values():
            ids.update(int(self.dof_of_node[v]) for v in nodes)
        return np.array(sorted(ids), dtype=np.int64)

    # -- geometry ---------------------------------------------------------------

    def geometry(self) -> dict:
        """Per-triangle geometry, quadrature and edge tables (cached)."""
        if self._geom is not None:
            return self._geom
        pos = self.nodes[self.tris]                       # (nt, 3)
        nxt = [1, 2, 0]
        prv = [2, 0, 1]
        e1, e2 = pos[:, 1] - pos[:, 0], pos[:, 2] - pos[:, 0]
        area2 = e1.real * e2.imag - e1.imag * e2.real
        if np.any(area2 <= 0):
            raise MeshError("mesh contains a degenerate or clockwise triangle")
        area = 0.5 * area2

        w = np.empty((self.n_tris, 3))
        ymid = np.empty((self.n_tris, 3))
        theta1 = np.empty((self.n_tris, 3))
        for k in range(3):
            a = pos[:, k] - pos[:, prv[k]]
            b = pos[:, nxt[k]] - pos[:, prv[k]]
            cross = a.real * b.imag - a.imag * b.real
            dot = a.real * b.real + a.imag * b.imag
            w[:, k] = 0.5 * dot / cross                   # edge k: corner k -> corner k+1
            mid = 0.5 * (pos[:, k] + pos[:, nxt[k]])
            ymid[:, k] = mid.imag
            theta1[:, k] = connection_segment_integrals(pos[:, k], pos[:, nxt[k]])
        area_hyp = (area / 3.0) * np.sum(1.0 / ymid ** 2, axis=1)
        centroid = pos.mean(axis=1)

        # automorphy angle (unit b) of each node relative to its root
        arg1 = np.zeros(self.n_nodes)
        ident = MoebiusElement.identity()
        for x in range(self.n_nodes):
            g = self.gamma_root[x]
            if g != ident:
                arg1[x] = automorphy_arg(g, complex(self.nodes[self.root[x]]))
        arg1_tri = arg1[self.tris]
        c1 = np.empty((self.n_tris, 3))
        for k in range(3):
            c1[:, k] = theta1[:, k] + arg1_tri[:, k] - arg1_tri[:, nxt[k]]

        dofs3 = self.dof_of_node[self.tris]
        if np.any(dofs3[:, [0, 1, 2]] == dofs3[:, [1, 2, 0]]):
            raise MeshError("triangle with two corners on the same surface node")

        # undirected global edges keyed by sorted dof pair
        keys = np.empty((self.n_tris, 3), dtype=np.int64)
        sig = np.empty((self.n_tris, 3), dtype=np.int64)
        for k in range(3):
            d0, d1 = dofs3[:, k], dofs3[:, nxt[k]]
            lo, hi = np.minimum(d0, d1), np.maximum(d0, d1)
            keys[:, k] = lo * self.ndof + hi
            sig[:, k] = np.where(d0 < d1, 1, -1)
        uniq, inv, counts = np.unique(keys.ravel(), return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("more than two triangles share a surface edge")
        eid = inv.reshape(self.n_tris, 3)
        edge_dofs = np.stack([uniq // self.ndof, uniq % self.ndof], axis=1)

        # quadrature weights of int f omega for nodal f (edge-midpoint rule)
        wq = np.zeros(self.ndof)
        for k in range(3):
            contrib = (area / 3.0) / (2.0 * ymid[:, k] ** 2)
            np.add.at(wq, dofs3[:, k], contrib)
            np.add.at(wq, dofs3[:, nxt[k]], contrib)

        self._geom = {
            "pos": pos, "area": area, "w": w, "ymid": ymid, "theta1": theta1,
            "area_hyp": area_hyp, "centroid": centroid, "arg1": arg1,
            "arg1_tri": arg1_tri, "c1": c1, "dofs3": dofs3, "eid": eid, "sig": sig,
            "n_edges": len(uniq), "edge_dofs": edge_dofs, "wq": wq,
        }
        return self._geom

    @property
    def area_hyp(self) -> float:
        return float(np.sum(self.geometry()["area_hyp"]))

    def integrate(self, f: np.ndarray):
        """int f dx dy / y^2 for nodal (per-dof) f, edge-midpoint quadrature."""
        f = np.asarray(f)
        if f.shape[-1] != self.ndof:
            raise MeshError(f"field has {f.shape[-1]} entries, mesh has {self.ndof} dofs")
        return f @ self.geometry()["wq"]

    def bracket(self, f: np.ndarray):
        """<f> = integral divided by the exact untruncated area |Sigma|."""
        return self.integrate(f) / self.surf.area

    def sample(self, fn) -> np.ndarray:
        """Evaluate a callable of z at the dof positions."""
        return np.asarray([fn(complex(z)) for z in self.dof_positions])

    def expand_section(self, dof_values: np.ndarray, b: float = 0.0) -> np.ndarray:
        """Per-node values of a weight-b section from its dof values.

        Slave copies pick up the automorphy phase rho_b(gamma, z_root), so the
        result is the honest equivariant function value at every node position.
        """
        vals = np.asarray(dof_values)[self.dof_of_node]
        if b:
            vals = vals * np.exp(1j * b * self.geometry()["arg1"])
        return vals

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> str:
        data = {
            "level": self.level, "Y": self.Y, "h": self.h, "s0": self.s0,
            "nodes": [[z.real, z.imag] for z in self.nodes],
            "tris": self.tris.tolist(),
            "pairs": [[int(i), int(j), list(g.tuple())] for (i, j, g) in self.pairs],
            "caps": {str(k): list(map(int, v)) for k, v in self.caps.items()},
        }
        return json.dumps(data)

    @staticmethod
    def from_json(text: str) -> "TruncatedMesh":
        data = json.loads(text)
        nodes = np.array([complex(x, y) for x, y in data["nodes"]])
        pairs = [(i, j, MoebiusElement(*g)) for i, j, g in data["pairs"]]
        return TruncatedMesh(
            level=data["level"], Y=data["Y"], h=data["h"], s0=data["s0"],
            nodes=nodes, tris=np.asarray(data["tris"], dtype=np.int64),
            pairs=pairs, caps={int(k): v for k, v in data["caps"].items()},
        )


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------

def build_mesh(surf: CongruenceSurface | int, Y: float = 20.0, h: float = 0.1,
               s0: float = 1.0) -> TruncatedMesh:
    """Build the truncated, cusp-cylinder-capped mesh of H/Gamma(N).

    Y is the truncation height in width-normalized cusp coordinates (the area
    removed is exactly m/Y); h is the target hyperbolic edge length.
    """
    if isinstance(surf, int):
        surf = surface(surf)
    if Y < 5:
        raise MeshError(f"truncation height Y = {Y} must be >= 5")
    if not (0 < h <= 0.5):
        raise MeshError(f"target edge length h = {h} must be in (0, 0.5]")
    N = surf.level
    ref = _reference_cell(N, s0, h)
    n_top = ref.n_top
    n_ref = len(ref.pts)

    nodes: list[np.ndarray] = []
    tris: list[np.ndarray] = []
    pairs: list[tuple[int, int, MoebiusElement]] = []
    caps: dict[int, list[int]] = {}
    offset = 0

    # cell copies; cell (i, k) has rep g_i T^k at linear index i*N + k
    cell_off: list[int] = []
    for idx, rep in enumerate(surf.coset_reps):
        cell_off.append(offset)
        nodes.append(_mobius_vec(rep, ref.pts))
        tris.append(ref.tris + offset)
        offset += n_ref

    def wall_ids(cell: int, side: str) -> list[int]:
        base = cell_off[cell]
        lst = ref.wall_left if side == "left" else ref.wall_right
        return [base + t for t in lst]

    # wall gluings (within one cusp's cell chain; the wrap closes the cylinder)
    for i, cusp in enumerate(surf.cusps):
        gwrap = cusp.stabilizer_generator()
        for k in range(N):
            c = i * N + k
            cnext = i * N + (k + 1) % N
            g = MoebiusElement.identity() if k < N - 1 else gwrap
            for a, b in zip(wall_ids(cnext, "left"), wall_ids(c, "right")):
                pairs.append((a, b, g))

    # arc gluings
    n_arc = len(ref.arc) - 1
    for c, rep in enumerate(surf.coset_reps):
        c2 = surf.coset_index(rep @ _S)
        if c2 == c:
            raise MeshError("cell glued to itself along the arc (elliptic point?)")
        if c2 < c:
            continue
        delta = (rep @ _S) @ surf.coset_reps[c2].inverse()
        if not surf.contains(delta):
            raise MeshError("arc gluing element not in Gamma(N)")
        for t in range(n_arc + 1):
            slave = cell_off[c] + ref.arc[t]
            master = cell_off[c2] + ref.arc[n_arc - t]
            pairs.append((master, slave, delta))

    # cusp cylinders in normalized coordinates, mapped back to H
    for i, cusp in enumerate(surf.cusps):
        heights = [s0]
        while heights[-1] * math.exp(h) < Y * math.exp(-h / 2):
            heights.append(heights[-1] * math.exp(h))
        heights.append(Y)

        gwrap = cusp.stabilizer_generator()
        row_ids: list[list[int]] = []
        row_xs: list[np.ndarray] = []
        count = N * n_top
        for r, y in enumerate(heights):
            if r > 0:
                count = min(count, max(3, round(1.0 / (y * h))))
            xs = np.arange(count + 1) / count           # includes the wrap copy at x=1
            w = xs + 1j * y
            zrow = _mobius_vec(cusp.g, (N * w.real - 0.5) + 1j * (N * w.imag))
            ids = list(range(offset, offset + count + 1))
            nodes.append(zrow)
            offset += count + 1
            row_ids.append(ids)
            row_xs.append(xs)
            pairs.append((ids[0], ids[-1], gwrap))       # wrap duplicate
        strip: list[tuple[int, int, int]] = []
        for r in range(len(heights) - 1):
            _merge_rows(row_ids[r], row_xs[r], row_ids[r + 1], row_xs[r + 1], strip)
        tris.append(np.asarray(strip, dtype=np.int64))
        caps[i] = row_ids[-1][:-1]

        # glue the cell tops to the cylinder bottom row
        for k in range(N):
            c = i * N + k
            for t in range(n_top + 1):
                cyl_node = row_ids[0][k * n_top + t]
                cell_node = cell_off[c] + ref.top[t]
                pairs.append((cyl_node, cell_node, MoebiusElement.identity()))

    mesh = TruncatedMesh(
        level=N, Y=float(Y), h=float(h), s0=float(s0),
        nodes=np.concatenate(nodes), tris=np.concatenate(tris),
        pairs=pairs, caps=caps, surf=surf,
    )
    return mesh


_MESH_CACHE: dict = {}


def cached_mesh(level: int, Y: float = 20.0, h: float = 0.1, s0: float = 1.0) -> TruncatedMesh:
    key = (level, float(Y), float(h), float(s0))
    if key not in _MESH_CACHE:
        _MESH_CACHE[key] = build_mesh(level, Y, h, s0)
    return _MESH_CACHE[key]


def cusp_coordinates(cusp, z: complex, s_min: float | None = None) -> complex:
    """Normalized cusp coordinate w (cylinder chart); rejects points outside
    the cusp neighborhood when a cut height is given."""
    w = cusp.to_cylinder(z)
    if s_min is not None and w.imag <= s_min:
        raise MeshError(f"point {z} is below the cusp neighborhood (Im w = {w.imag})")
    return w
