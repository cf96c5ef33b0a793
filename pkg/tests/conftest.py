import numpy as np
import pytest

from modulilab import bundle as bnd
from modulilab.surface import build_polygon_gluing, equip_conformal, refine


@pytest.fixture(scope="session")
def fan2():
    return build_polygon_gluing(2)


@pytest.fixture(scope="session")
def fan2_r1(fan2):
    return refine(fan2)


@pytest.fixture(scope="session")
def fan2_r2(fan2_r1):
    return refine(fan2_r1)


@pytest.fixture(scope="session")
def surf_hyp(fan2_r2):
    return equip_conformal(fan2_r2, layout="stored", density="hyperbolic")


@pytest.fixture(scope="session")
def surf_uni(fan2_r2):
    return equip_conformal(fan2_r2, layout="equilateral", density="uniform")


@pytest.fixture(scope="session")
def surf_hyp_r1(fan2_r1):
    return equip_conformal(fan2_r1, layout="stored", density="hyperbolic")


@pytest.fixture(scope="session")
def su2_r2(fan2, fan2_r1, fan2_r2):
    c = bnd.su2_preset(fan2)
    c = bnd.refine_cocycle(c, fan2_r1)
    return bnd.refine_cocycle(c, fan2_r2)


@pytest.fixture(scope="session")
def su2_r1(fan2, fan2_r1):
    return bnd.refine_cocycle(bnd.su2_preset(fan2), fan2_r1)


@pytest.fixture(scope="session")
def triv1_r2(fan2_r2):
    return bnd.trivial_cocycle(fan2_r2, 1)


@pytest.fixture(scope="session")
def triv2_r2(fan2_r2):
    return bnd.trivial_cocycle(fan2_r2, 2)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240814)


def random_cochain(rng, sites, n, degree):
    vals = rng.standard_normal((sites, n, n)) + 1j * rng.standard_normal((sites, n, n))
    return bnd.BundleCochain(vals, degree)
