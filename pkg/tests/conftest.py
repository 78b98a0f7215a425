import pytest

from pipelines import rates
from pipelines.lattice import Torus
from pipelines.valleys import Taxonomy

N, L = 4, 9


@pytest.fixture(scope="session")
def small():
    return N, L


@pytest.fixture(scope="session")
def torus():
    return Torus(L)


@pytest.fixture(scope="session")
def taxonomy():
    return Taxonomy.get(N, L)


@pytest.fixture(scope="session")
def meso(taxonomy):
    return rates.meso_chain(N, L)


@pytest.fixture(scope="session")
def q(meso):
    return rates.absorption_q(meso)


@pytest.fixture(scope="session")
def kernel(meso, q):
    return rates.ground_kernel(N, L, meso, q)
