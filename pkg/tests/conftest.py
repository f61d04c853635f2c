import numpy as np
import pytest

from glhyp import arithmetic as ar
from glhyp import bifurcation as bif
from glhyp import cuspforms as cf
from glhyp import mesh as mm
from glhyp import spectra as spc


@pytest.fixture(scope="session")
def surf2():
    return ar.surface(2)


@pytest.fixture(scope="session")
def surf6():
    return ar.surface(6)


@pytest.fixture(scope="session")
def mesh2_small():
    """Coarse Gamma(2) mesh for fast unit tests."""
    return mm.cached_mesh(2, Y=10.0, h=0.2)


@pytest.fixture(scope="session")
def mesh2_fine():
    return mm.cached_mesh(2, Y=20.0, h=0.08)


@pytest.fixture(scope="session")
def mesh6():
    """The acceptance-scale Gamma(6) mesh (h=0.1, Y=20)."""
    return mm.cached_mesh(6, Y=20.0, h=0.1)


@pytest.fixture(scope="session")
def ground6(mesh6):
    """Gamma(6), deg 12 ground data: (xi, beta, eta)."""
    op = spc.assemble(mesh6, 1)
    res = spc.lowest_eigenpairs(op, 4)
    xi = cf.ground_space_basis(res, 1)[:, 0]
    beta = bif.brackets(mesh6, xi)[1]
    eta = bif.solve_eta(mesh6, xi)
    return {"op": op, "result": res, "xi": xi, "beta": beta, "eta": eta}


@pytest.fixture(scope="session")
def spectrum2_b5(mesh2_fine):
    """Gamma(2), deg 5 (b=5) spectral run with its 3-dim ground space."""
    op = spc.assemble(mesh2_fine, 5)
    res = spc.lowest_eigenpairs(op, 8, sigma=2.5)
    basis = cf.ground_space_basis(res, 3)
    return {"op": op, "result": res, "basis": basis}


def random_gamma2(rng, nfac=5):
    """A random element of Gamma(2) as a product of generator powers."""
    gens = [ar.MoebiusElement(1, 2, 0, 1), ar.MoebiusElement(1, 0, 2, 1),
            ar.MoebiusElement(1, -2, 0, 1), ar.MoebiusElement(1, 0, -2, 1)]
    g = ar.MoebiusElement.identity()
    for _ in range(nfac):
        g = g @ gens[rng.integers(len(gens))]
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
