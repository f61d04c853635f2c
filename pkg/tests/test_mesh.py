import math

import numpy as np
import pytest

from glhyp import arithmetic as ar
from glhyp import mesh as mm


def test_truncated_area_gamma2():
    m = mm.cached_mesh(2, Y=10.0, h=0.1)
    exact = m.surf.area - 3.0 / 10.0
    assert abs(m.area_hyp - exact) < 0.02  # O(h^2) with a modest constant


def test_truncated_area_gamma6():
    m = mm.cached_mesh(6, Y=10.0, h=0.15)
    exact = m.surf.area - 12.0 / 10.0
    assert abs(m.area_hyp - exact) < 0.2


def test_area_convergence_order():
    errs = []
    hs = (0.2, 0.1, 0.05)
    for h in hs:
        m = mm.cached_mesh(2, Y=10.0, h=h)
        errs.append(abs(m.area_hyp - (m.surf.area - 0.3)))
    slope = math.log(errs[0] / errs[-1]) / math.log(hs[0] / hs[-1])
    assert abs(slope - 2.0) < 0.2


def test_pairing_residuals(mesh6):
    assert mesh6.pair_residual < 1e-9
    # explicit spot check of the stored pairs
    for (i, j, g) in mesh6.pairs[::197]:
        assert abs(g.apply(complex(mesh6.nodes[i])) - complex(mesh6.nodes[j])) < 1e-9
        assert ar.is_member(g, 6) or g == ar.MoebiusElement.identity()


def test_boundary_accounting(mesh2_small):
    m = mesh2_small
    slaves = {j for (_, j, _) in m.pairs}
    masters = {i for (i, _, _) in m.pairs}
    cap_nodes = {v for nodes in m.caps.values() for v in nodes}
    # every cap node resolves to itself (caps are master rows)
    for v in cap_nodes:
        assert m.root[v] == v or m.root[v] in cap_nodes or m.root[v] in masters
    # pairing is consistent under the equivalence: pair of pair lands in the
    # same orbit (involution at the level of surface points)
    for (i, j, g) in m.pairs[::11]:
        assert m.root[i] == m.root[j]


def test_integrate_constant(mesh2_small):
    one = np.ones(mesh2_small.ndof)
    val = mesh2_small.integrate(one)
    assert abs(val - (2 * math.pi - 0.3)) < 0.02
    assert mesh2_small.integrate(np.zeros(mesh2_small.ndof)) == 0.0


def test_integrate_constant_gamma2_y20():
    m = mm.cached_mesh(2, Y=20.0, h=0.1)
    val = m.integrate(np.ones(m.ndof))
    assert abs(val - (2 * math.pi - 0.15)) < 0.01


def test_cusp_cylinder_indicator():
    m = mm.cached_mesh(2, Y=10.0, h=0.1)
    cusp = m.surf.cusps[0]
    height = np.array([cusp.to_cylinder(complex(z)).imag
                       if abs(complex(z) - 1j) > 0 else 0.0
                       for z in m.dof_positions])
    ind = (height > 2.0).astype(float)
    # int_2^Y dy/y^2 = 1/2 - 1/Y, up to O(h) smearing at the cut line
    assert abs(m.integrate(ind) - (0.5 - 1.0 / m.Y)) < 0.05


def test_quadrature_exact_for_conformal_affine(mesh2_small):
    # the rule integrates y^2 (a + bx + cy) / y^2 = affine exactly per triangle
    g = mesh2_small.geometry()
    pos, area = g["pos"], g["area"]
    a, b, c = 0.7, -0.3, 0.2
    mids = [(pos[:, k] + pos[:, (k + 1) % 3]) / 2.0 for k in range(3)]
    rule = sum((area / 3.0) * (a + b * m.real + c * m.imag) for m in mids)
    cen = g["centroid"]
    exact = area * (a + b * cen.real + c * cen.imag)
    assert np.max(np.abs(rule - exact)) < 1e-13 * np.max(np.abs(exact))


def test_cusp_coordinates_isometry(surf2, rng):
    cusp = surf2.cusps[1]
    for _ in range(20):
        z1 = complex(rng.uniform(-0.2, 0.2), rng.uniform(0.5, 2.0))
        z2 = complex(rng.uniform(-0.2, 0.2), rng.uniform(0.5, 2.0))
        w1, w2 = cusp.to_cylinder(z1), cusp.to_cylinder(z2)
        assert abs(mm.hyperbolic_distance(z1, z2)
                   - mm.hyperbolic_distance(w1, w2)) < 1e-10


def test_cusp_coordinates_examples(surf2):
    # cusp infinity: the chart is an affine rescaling of z itself
    cinf = surf2.cusps[0]
    w = cinf.to_cylinder(0.3 + 4j)
    assert abs(w.imag - 2.0) < 1e-14  # width 2 halves the height
    # cusp 0: z -> -1/z up to the width normalization
    c0 = surf2.cusps[1]
    t = 3.0
    w = c0.to_cylinder(1j * t)
    assert abs(w.imag - 1.0 / (2 * t)) * 2 < 1e-12
    # a point far from the cusp is below any sensible cut height
    with pytest.raises(mm.MeshError):
        mm.cusp_coordinates(c0, 3j, s_min=1.0)
    # while a point close to it is high in the chart
    assert mm.cusp_coordinates(c0, 0.01j, s_min=1.0).imag > 1.0


def test_mesh_json_roundtrip():
    m = mm.build_mesh(2, Y=10.0, h=0.3)
    js = m.to_json()
    m2 = mm.TruncatedMesh.from_json(js)
    assert np.array_equal(m.nodes, m2.nodes)
    assert np.array_equal(m.tris, m2.tris)
    assert m.pairs == m2.pairs
    assert m.caps == m2.caps
    assert m2.to_json() == js  # bit-exact round trip
    assert np.array_equal(m.root, m2.root)


def test_build_mesh_guards():
    with pytest.raises(mm.MeshError):
        mm.build_mesh(2, Y=3.0, h=0.1)
    with pytest.raises(mm.MeshError):
        mm.build_mesh(2, Y=10.0, h=0.7)


def test_y_stability_of_cusp_form_quadrature():
    """Quadrature of a cusp-form-type density is insensitive to Y.

    |xi|^2 for weight 2 decays as e^{-4 pi height} into every cusp; the model
    density below has exactly that profile and is evaluable to machine
    precision at any depth (the truncated Poincare series itself loses all
    relative accuracy deep in a cusp, where its value is absolutely tiny).
    """
    def density(m):
        # e^{-4 pi (height - 1)} above the horoball cut, 1 in the bulk
        ht = np.zeros(m.ndof)
        for c in m.surf.cusps:
            hc = np.array([c.to_cylinder(complex(z)).imag for z in m.dof_positions])
            ht = np.maximum(ht, hc)
        return np.exp(-4.0 * math.pi * np.maximum(ht - 1.0, 0.0))

    vals = {}
    for Y in (10.0, 20.0):
        m = mm.cached_mesh(2, Y=Y, h=0.25)
        vals[Y] = m.integrate(density(m))
    rel = abs(vals[10.0] - vals[20.0]) / abs(vals[20.0])
    assert rel < 1e-12
