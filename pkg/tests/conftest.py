from functools import lru_cache

import numpy as np
import pytest

from meshfree_mgm.discretize import DiscretizationConfig, assemble_lbo, poisson_operator, shifted_operator
from meshfree_mgm.geometry import icosahedral_sphere_nodes
from meshfree_mgm.mgm import setup


@lru_cache(maxsize=None)
def sphere(k):
    return icosahedral_sphere_nodes(k)


@lru_cache(maxsize=None)
def lbo(k, ell=3, method="rbf-fd", alpha=4.0):
    return assemble_lbo(sphere(k), DiscretizationConfig(method, ell, gfd_alpha=alpha))


@lru_cache(maxsize=None)
def shifted_system(k, ell=3, mu=1.0, method="rbf-fd"):
    return shifted_operator(lbo(k, ell, method), mu).matrix


@lru_cache(maxsize=None)
def shifted_hierarchy(k, ell=3, mu=1.0, method="rbf-fd"):
    return setup(shifted_system(k, ell, mu, method), sphere(k))


@lru_cache(maxsize=None)
def poisson_hierarchy(k, ell=3):
    return setup(poisson_operator(lbo(k, ell)).matrix, sphere(k), mode="poisson")


def y54(p):
    x, y, z = p.T
    return z * (x**4 - 6 * x**2 * y**2 + y**4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance lines, printed after the run whatever the capture mode
ACCEPTANCE: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
