import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esgsched.model import ApplicationDag, ConfigGrid, Configuration, FunctionSpec, ProfileTable, MissingProfileError
from esgsched.slo_dist import (
    Group,
    Parallel,
    build_dominator_tree,
    distribute_slo,
    label_anl,
    plan_slo,
    reduce_and_group,
)
from conftest import dag_from_edges

NESTED_EDGES = [
    ("A", "B"), ("A", "C"), ("B", "D"), ("B", "E"), ("D", "F"),
    ("E", "F"), ("F", "G"), ("C", "G"), ("G", "H"),
]
NESTED_ANL = {"A": 0.1, "B": 0.1, "C": 0.3, "D": 0.15, "E": 0.05, "F": 0.1, "G": 0.1, "H": 0.1}


def random_dag(rng, n, p):
    """Random single-entry single-exit DAG on n nodes in index order."""
    ids = [f"f{i:02d}" for i in range(n)]
    edges = set()
    for j in range(1, n):
        preds = [i for i in range(j) if rng.random() < p] or [int(rng.integers(j))]
        edges.update((ids[i], ids[j]) for i in preds)
    sources = {a for a, _ in edges}
    edges.update((ids[i], ids[-1]) for i in range(n - 1) if ids[i] not in sources)
    return ApplicationDag("r", tuple(FunctionSpec(x, 10.0) for x in ids), tuple(sorted(edges)))


def idom_by_paths(dag):
    """Immediate dominators from the definition: intersect node sets over every entry-to-node path."""
    paths_to = {n: [] for n in dag.node_ids}

    def walk(node, prefix):
        prefix = prefix + (node,)
        paths_to[node].append(set(prefix))
        for s in dag.successors(node):
            walk(s, prefix)

    walk(dag.entry, ())
    dom = {n: set.intersection(*paths_to[n]) for n in dag.node_ids}
    idom = {}
    for n in dag.node_ids:
        strict = dom[n] - {n}
        # the strict dominator that every other strict dominator dominates
        idom[n] = next((d for d in strict if strict <= dom[d]), None)
    return idom


# ---------------------------------------------------------------------------
# dominator tree


def test_chain_dominators():
    t = build_dominator_tree(dag_from_edges([("A", "B"), ("B", "C")]))
    assert t.parent == {"A": None, "B": "A", "C": "B"}


def test_diamond_dominators():
    t = build_dominator_tree(dag_from_edges([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]))
    assert t.parent == {"A": None, "B": "A", "C": "A", "D": "A"}


def test_nested_dominators():
    d = dag_from_edges(NESTED_EDGES)
    t = build_dominator_tree(d)
    assert t.parent == {"A": None, "B": "A", "C": "A", "D": "B", "E": "B", "F": "B", "G": "A", "H": "G"}
    assert t.parent == idom_by_paths(d)
    assert t.order == ("D", "E", "F", "B", "C", "H", "G", "A")
    assert t.dominators("H") == {"A", "G", "H"}


def test_multiple_entries_rejected():
    # the DAG type itself refuses, which is where the error surfaces
    with pytest.raises(ValueError, match="unique entry"):
        dag_from_edges([("A", "C"), ("B", "C")])


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10), p=st.floats(0.1, 0.7))
def test_dominators_match_path_enumeration(seed, n, p):
    d = random_dag(np.random.default_rng(seed), n, p)
    assert build_dominator_tree(d).parent == idom_by_paths(d)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), p=st.floats(0.1, 0.7))
def test_dominators_match_networkx(seed, n, p):
    nx = pytest.importorskip("networkx")
    d = random_dag(np.random.default_rng(seed), n, p)
    g = nx.DiGraph(list(d.edges))
    ref = nx.immediate_dominators(g, d.entry)
    parent = build_dominator_tree(d).parent
    assert {k: (v if v is not None else k) for k, v in parent.items()} == ref


# ---------------------------------------------------------------------------
# ANL labels


def _table(times_by_fn, grid):
    return ProfileTable({(f, c): t for f, ts in times_by_fn.items() for c, t in zip(grid, ts)})


def test_anl_constant_ratios():
    grid = [Configuration(1, 1, 1), Configuration(1, 2, 1)]
    d = dag_from_edges([("a", "b"), ("b", "c")])
    prof = _table({"a": [100, 50], "b": [200, 100], "c": [100, 50]}, grid)
    assert label_anl(d, prof) == pytest.approx({"a": 0.25, "b": 0.5, "c": 0.25}, abs=1e-12)


def test_anl_single_function():
    d = ApplicationDag("x", (FunctionSpec("a", 5.0),))
    prof = _table({"a": [5.0]}, [Configuration(1, 1, 1)])
    assert label_anl(d, prof) == {"a": 1.0}


def test_anl_hand_oracle_four_points():
    grid = [Configuration(1, 1, 1), Configuration(1, 2, 1), Configuration(2, 1, 1), Configuration(2, 2, 1)]
    d = dag_from_edges([("a", "b")])
    prof = _table({"a": [10, 30, 20, 5], "b": [30, 10, 20, 15]}, grid)
    # per point: a/(a+b) = 1/4, 3/4, 1/2, 1/4
    expected_a = (0.25 + 0.75 + 0.5 + 0.25) / 4
    got = label_anl(d, prof)
    assert got["a"] == pytest.approx(expected_a, abs=1e-12)
    assert got["b"] == pytest.approx(1 - expected_a, abs=1e-12)


def test_anl_missing_profile():
    d = dag_from_edges([("a", "b")])
    prof = _table({"a": [1.0]}, [Configuration(1, 1, 1)])
    with pytest.raises(MissingProfileError, match="'b'"):
        label_anl(d, prof)


def test_anl_chain_sums_to_one(builtin_apps, profiles):
    for app in builtin_apps:
        assert sum(label_anl(app, profiles).values()) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# grouping and quotas


def test_chain_of_seven_groups():
    ids = "abcdefg"
    d = dag_from_edges(list(zip(ids, ids[1:])))
    plan = reduce_and_group(build_dominator_tree(d), {f: 1 / 7 for f in ids}, 3)
    assert plan.groups == (("a", "b", "c"), ("d", "e", "f"), ("g",))
    assert not plan.collapsed


def test_diamond_takes_max_branch_sum():
    d = dag_from_edges([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    plan = reduce_and_group(build_dominator_tree(d), {"A": 0.1, "B": 0.3, "C": 0.5, "D": 0.1}, 3)
    par = [u for u in plan.structure if isinstance(u, Parallel)]
    assert len(par) == 1 and par[0].anl == 0.5
    assert sorted(plan.groups) == [("A",), ("B",), ("C",), ("D",)]


def test_nested_fixture_structure_and_quotas():
    """Hand execution on the nested-branch DAG.

    Post-order D, E, F, B, C, H, G, A. Under B the branches D and E fold into a
    parallel unit of ANL max(0.15, 0.05) = 0.15 followed by F, giving the branch
    B, (D|E), F with sum 0.35. Under A that branch runs beside C (0.3), so the
    outer parallel unit has ANL 0.35; G and H form one straight run. Top chain:
    [A] 0.1, (B..F | C) 0.35, [G,H] 0.2, total 0.65.
    """
    d = dag_from_edges(NESTED_EDGES)
    plan = plan_slo(d, NESTED_ANL, 1000.0, 3)
    top = plan.structure
    assert [type(u) for u in top] == [Group, Parallel, Group]
    assert top[0].functions == ("A",) and top[2].functions == ("G", "H")
    outer = top[1]
    assert outer.anl == pytest.approx(0.35)
    left, right = outer.branches
    assert [u.functions for u in right] == [("C",)]
    assert isinstance(left[1], Parallel) and left[1].anl == 0.15
    assert left[0].functions == ("B",) and left[2].functions == ("F",)

    q = {g: plan.quota[i] for i, g in enumerate(plan.groups)}
    par_q = 1000 * 0.35 / 0.65
    expected = {
        ("A",): 1000 * 0.1 / 0.65,
        ("G", "H"): 1000 * 0.2 / 0.65,
        ("C",): par_q,
        ("B",): par_q * 0.1 / 0.35,
        ("F",): par_q * 0.1 / 0.35,
        ("D",): par_q * 0.15 / 0.35,
        ("E",): par_q * 0.15 / 0.35,
    }
    assert q == pytest.approx(expected, rel=1e-12)
    # recorded values for the fixture
    assert q[("A",)] == pytest.approx(153.84615384615384)
    assert q[("C",)] == pytest.approx(538.4615384615385)
    assert q[("D",)] == pytest.approx(230.76923076923077)


def test_chain_quotas():
    d = dag_from_edges([("a", "b"), ("b", "c")])
    plan = plan_slo(d, {"a": 0.25, "b": 0.5, "c": 0.25}, 400.0, 1)
    assert plan.quota == pytest.approx({0: 100.0, 1: 200.0, 2: 100.0})


def test_single_group_gets_full_slo():
    d = dag_from_edges([("a", "b")])
    plan = plan_slo(d, {"a": 0.3, "b": 0.7}, 250.0, 3)
    assert plan.groups == (("a", "b"),) and plan.quota == {0: 250.0}


def test_degenerate_labels():
    d = dag_from_edges([("a", "b")])
    with pytest.raises(ValueError, match="degenerate ANL labels"):
        plan_slo(d, {"a": 0.0, "b": 0.0}, 100.0)
    with pytest.raises(ValueError):
        distribute_slo(reduce_and_group(build_dominator_tree(d), {"a": 1, "b": 1}), 0.0)


def test_skip_edge_collapses():
    # A->C bypasses B with no work: no series-parallel fold keeps both paths whole
    d = dag_from_edges([("A", "B"), ("B", "C"), ("A", "C")])
    plan = plan_slo(d, {"A": 0.2, "B": 0.5, "C": 0.3}, 100.0, 3)
    assert plan.collapsed
    assert plan.groups == (("A", "B", "C"),) and plan.quota == {0: 100.0}


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), p=st.floats(0.05, 0.7), g=st.integers(1, 4))
def test_quota_conservation_and_partition(seed, n, p, g):
    rng = np.random.default_rng(seed)
    d = random_dag(rng, n, p)
    labels = {f: float(rng.uniform(0.01, 1.0)) for f in d.node_ids}
    slo = float(rng.uniform(10.0, 5000.0))
    plan = plan_slo(d, labels, slo, g)
    members = [f for grp in plan.groups for f in grp]
    assert sorted(members) == sorted(d.node_ids)
    if not plan.collapsed:
        assert all(len(grp) <= g for grp in plan.groups)
    assert all(plan.quota[i] > 0 for i in range(len(plan.groups)))
    for path in d.paths():
        traversed = {plan.group_of(f) for f in path}
        assert sum(plan.quota[i] for i in traversed) == pytest.approx(slo, rel=0, abs=1e-9 * max(1.0, slo / 1000))
    assert plan_slo(d, labels, slo, g).to_dict() == plan.to_dict()


def _series_parallel(rng, depth, counter, edges):
    """Random node series-parallel body; returns its (entry, exit) and appends edges."""

    def fresh():
        counter[0] += 1
        return f"n{counter[0]:02d}"

    if depth == 0 or rng.random() < 0.3:
        x = fresh()
        return x, x
    parts = [_series_parallel(rng, depth - 1, counter, edges) for _ in range(int(rng.integers(2, 4)))]
    if rng.random() < 0.5:
        for (_, out), (nxt, _) in zip(parts, parts[1:]):
            edges.append((out, nxt))
        return parts[0][0], parts[-1][1]
    fork, join = fresh(), fresh()
    for entry, out in parts:
        edges += [(fork, entry), (out, join)]
    return fork, join


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), g=st.integers(1, 4))
def test_series_parallel_never_collapses(seed, g):
    rng = np.random.default_rng(seed)
    edges = []
    entry, out = _series_parallel(rng, 3, [0], edges)
    d = dag_from_edges(edges + [("src", entry), (out, "sink")])
    plan = plan_slo(d, {f: float(rng.uniform(0.1, 1)) for f in d.node_ids}, 100.0, g)
    assert not plan.collapsed
    assert all(len(grp) <= g for grp in plan.groups)
    for path in d.paths():
        assert sum(plan.quota[i] for i in {plan.group_of(f) for f in path}) == pytest.approx(100.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=10), st.integers(1, 4), st.floats(1.0, 1e4))
def test_chain_proportionality(anls, g, slo):
    ids = [f"c{i}" for i in range(len(anls))]
    d = ApplicationDag.chain("c", [FunctionSpec(i, 1.0) for i in ids])
    labels = dict(zip(ids, anls))
    plan = plan_slo(d, labels, slo, g)
    total = sum(anls)
    for i, grp in enumerate(plan.groups):
        assert plan.quota[i] / slo == pytest.approx(sum(labels[f] for f in grp) / total, abs=1e-9)
