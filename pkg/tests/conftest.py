import json
import os

import numpy as np
import pytest

from czbench import bench, fem

CONFIG_PATH = os.path.join(os.path.dirname(__file__), "..", "configs", "benchmark.json")


@pytest.fixture(scope="session")
def config():
    return bench.load_config(CONFIG_PATH)


@pytest.fixture(scope="session")
def coarse_itp(config):
    return bench.build_problem(config, "ItP", "coarse")


@pytest.fixture(scope="session")
def coarse_itc(config):
    return bench.build_problem(config, "ItC", "coarse")


@pytest.fixture(scope="session")
def fine_itc(config):
    return bench.build_problem(config, "ItC", "fine")


@pytest.fixture()
def fresh_config(config):
    return json.loads(json.dumps(config))


def stiff_spring_law(K_p=1e4):
    """Law whose onset is far beyond any displacement in play: the interface
    acts as a plain penalty spring, so the whole problem is affine."""
    return fem.CohesiveLaw(K_p=K_p, delta_0=1e6, delta_f=2e6)


@pytest.fixture()
def affine_problem():
    mesh = fem.build_mesh(2, 1.0, 0.5)
    return fem.make_case("ItP", mesh, fem.Material(E=1.0, A=1.0),
                         stiff_spring_law(), 0.1)


def sample_away_from_kinks(problem, n, rng, margin_factor=1e-6):
    """Random free-DOF vectors whose interface opening keeps a safe distance
    from both kinks of the cohesive law."""
    law = problem.law
    m, nn = problem.mesh.cz_pair
    lo = -1.5 * law.delta_f
    hi = problem.case.u_right + 1.5 * law.delta_f
    margin = margin_factor * law.delta_f
    out = []
    while len(out) < n:
        u = rng.uniform(lo, hi, size=problem.n_free)
        full = problem.full_displacement(u)
        opening = full[nn] - full[m]
        if abs(opening - law.delta_0) > margin and abs(opening - law.delta_f) > margin:
            out.append(u)
    return out
