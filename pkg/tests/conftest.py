import numpy as np
import pytest

from esgsched.model import ApplicationDag, ConfigGrid, FunctionSpec, ProfileTable
from esgsched.search import StageOptions
from esgsched.workload import load_catalog


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def functions(catalog):
    return catalog[0]


@pytest.fixture(scope="session")
def builtin_apps(catalog):
    return catalog[1]


@pytest.fixture(scope="session")
def profiles(functions):
    return ProfileTable.synthesize(functions.values(), ConfigGrid())


@pytest.fixture
def two_by_two():
    """Two functions with two options each: (label, exec_ms, cost)."""
    return {
        "f1": StageOptions.from_items([("a", 10.0, 5.0), ("b", 5.0, 8.0)]),
        "f2": StageOptions.from_items([("c", 10.0, 4.0), ("d", 6.0, 9.0)]),
    }


def chain_app(app_id, times, slo_ms=None, cold=0.0, size=0.0):
    funcs = [FunctionSpec(f"{app_id}_f{i}", t, cold, size) for i, t in enumerate(times)]
    return ApplicationDag.chain(app_id, funcs, slo_ms)


def dag_from_edges(edges, app_id="a", exec_ms=10.0):
    ids = sorted({x for e in edges for x in e})
    return ApplicationDag(app_id, tuple(FunctionSpec(i, exec_ms) for i in ids), tuple(edges))


def random_stages(rng, n_stages, n_opts, scale=100.0):
    """Random stage options: times and costs drawn independently, sorted by time."""
    out = []
    for j in range(n_stages):
        t = np.sort(rng.uniform(1.0, scale, n_opts))
        c = rng.uniform(0.0, 1.0, n_opts)
        out.append(StageOptions([f"s{j}o{i:03d}" for i in range(n_opts)], t, c))
    return out
