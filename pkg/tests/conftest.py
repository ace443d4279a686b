import numpy as np
import pytest

from lpsfrac.geometry import square_domain, generate_grid
from lpsfrac.quadrature import build_rule, mask_from_domain


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long fracture runs, excluded by default")


@pytest.fixture(scope="session")
def square_dirichlet():
    dom = square_domain(np.pi / 2, ())
    h = np.pi / 12
    cloud = generate_grid(dom, h, 3.5 * h)
    rule = build_rule(cloud)
    return dom, cloud, rule


@pytest.fixture(scope="session")
def square_top_traction():
    dom = square_domain(np.pi / 2, ("top",))
    h = np.pi / 12
    cloud = generate_grid(dom, h, 3.5 * h)
    rule = build_rule(cloud)
    gamma = mask_from_domain(cloud, dom)
    return dom, cloud, rule, gamma


@pytest.fixture(scope="session")
def perturbed_square():
    dom = square_domain(np.pi / 2, ("top", "right"))
    h = np.pi / 12
    cloud = generate_grid(dom, h, 3.5 * h, perturb_r=0.2, seed=7)
    rule = build_rule(cloud)
    gamma = mask_from_domain(cloud, dom)
    return dom, cloud, rule, gamma
