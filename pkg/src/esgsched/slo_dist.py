"""Dominator-based SLO distribution.

Steps: build the dominator tree, label every function with its average
normalized length (ANL), fold parallel branches bottom-up into synthetic
nodes while chunking straight runs into groups of at most ``g`` functions,
then hand the end-to-end SLO down the folded structure in proportion to ANL.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .model import ApplicationDag, MissingProfileError, ProfileTable


@dataclass(frozen=True)
class DominatorTree:
    dag: ApplicationDag
    parent: dict  # node -> immediate dominator (entry maps to None)
    children: dict  # node -> tuple of children, lexical order
    order: tuple  # post-order, children visited lexically

    @property
    def root(self) -> str:
        return self.dag.entry

    def dominators(self, node: str) -> set[str]:
        out = {node}
        while self.parent[node] is not None:
            node = self.parent[node]
            out.add(node)
        return out


def build_dominator_tree(dag: ApplicationDag) -> DominatorTree:
    """Immediate dominators of a DAG: the tree-LCA of all predecessors, in topological order."""
    topo = dag.topological_order()
    roots = [n for n in topo if not dag.predecessors(n)]
    if len(roots) != 1:
        raise ValueError("DAG must have unique entry")
    parent = {roots[0]: None}
    depth = {roots[0]: 0}

    def lca(a, b):
        while a != b:
            if depth[a] < depth[b]:
                a, b = b, a
            a = parent[a]
        return a

    for n in topo[1:]:
        preds = dag.predecessors(n)
        d = preds[0]
        for p in preds[1:]:
            d = lca(d, p)
        parent[n] = d
        depth[n] = depth[d] + 1
    children = {n: [] for n in topo}
    for n, p in parent.items():
        if p is not None:
            children[p].append(n)
    children = {n: tuple(sorted(c)) for n, c in children.items()}
    order = []

    def post(n):
        for c in children[n]:
            post(c)
        order.append(n)

    post(roots[0])
    return DominatorTree(dag, parent, children, tuple(order))


def label_anl(dag: ApplicationDag, profiles: ProfileTable) -> dict[str, float]:
    """anl(f) = mean over grid points c of t_f(c) / sum_j t_j(c)."""
    fids = dag.node_ids
    grid = profiles.grid
    for f in fids:
        if f not in profiles:
            raise MissingProfileError(f, grid[0] if grid else None)
    times = np.array([[profiles.exec_ms(f, c) for c in grid] for f in fids])
    ratios = times / times.sum(axis=0)
    return {f: float(v) for f, v in zip(fids, ratios.mean(axis=1))}


# ---------------------------------------------------------------------------
# folded structure


@dataclass(frozen=True)
class Group:
    functions: tuple[str, ...]
    anl: float


@dataclass(frozen=True)
class Parallel:
    """Synthetic node standing for parallel branches; its ANL is the largest branch sum."""

    branches: tuple[tuple["Unit", ...], ...]
    anl: float


@dataclass(frozen=True)
class _Fn:
    id: str
    anl: float


Unit = Union[Group, Parallel]
_Item = Union[_Fn, Group, Parallel]


@dataclass
class GroupPlan:
    groups: tuple[tuple[str, ...], ...]
    structure: tuple  # top-level chain of Group / Parallel units
    max_group_size: int
    quota: dict = field(default_factory=dict)  # group index -> ms
    collapsed: bool = False  # a non-series-parallel subtree became one oversized group

    def group_of(self, fid: str) -> int:
        for i, g in enumerate(self.groups):
            if fid in g:
                return i
        raise KeyError(fid)

    @property
    def first_group(self) -> tuple[str, ...]:
        return self.groups[self.group_index(self.structure[0])]

    def group_index(self, unit: Group) -> int:
        return self.groups.index(unit.functions)

    def to_dict(self) -> dict:
        def enc(u):
            if isinstance(u, Group):
                d = {"group": list(u.functions), "anl": u.anl}
                if self.quota:
                    d["quota_ms"] = self.quota[self.group_index(u)]
                return d
            return {"parallel": [[enc(x) for x in br] for br in u.branches], "anl": u.anl}

        return {"max_group_size": self.max_group_size, "chain": [enc(u) for u in self.structure]}


def _chain_anl(chain) -> float:
    return float(sum(u.anl for u in chain))


def _group_chain(chain: list, g: int) -> list:
    """Chunk runs of loose functions into groups of at most g; other items stay single."""
    out, run = [], []

    def flush():
        for i in range(0, len(run), g):
            part = run[i : i + g]
            out.append(Group(tuple(f.id for f in part), float(sum(f.anl for f in part))))
        run.clear()

    for it in chain:
        if isinstance(it, _Fn):
            run.append(it)
        else:
            flush()
            out.append(it)
    flush()
    return out


def reduce_and_group(tree: DominatorTree, labels: Mapping[str, float], g: int = 3) -> GroupPlan:
    """Fold the DAG into a chain of groups and parallel units, post-order over the dominator tree.

    Each node's dominator subtree becomes a chain that every path from the
    node to any edge leaving the subtree traverses in full. Subtrees whose
    internal edges do not form a series-parallel shape (skip edges, crossing
    branches) collapse into one group holding all their functions, which
    keeps that property at the price of a group larger than ``g``.
    """
    if g < 1:
        raise ValueError("group size must be >= 1")
    dag = tree.dag
    for f in dag.node_ids:
        if f not in labels:
            raise KeyError(f"no ANL label for {f!r}")
    pos = {n: i for i, n in enumerate(dag.topological_order())}
    subtree = {}
    for n in tree.order:
        s = {n}
        for c in tree.children[n]:
            s |= subtree[c]
        subtree[n] = s
    chains: dict[str, list] = {}
    collapsed = False
    for n in tree.order:
        kids = tree.children[n]
        own = _Fn(n, float(labels[n]))
        if not kids:
            chains[n] = [own]
            continue
        # children of a branching node are chunked into groups; a lone child stays loose
        # so that straight runs keep merging upward
        segs = {c: _group_chain(chains[c], g) if len(kids) > 1 else chains[c] for c in kids}
        body = _fold_region(dag, n, kids, subtree, segs)
        if body is None:
            members = tuple(sorted(subtree[n], key=pos.__getitem__))
            chains[n] = [Group(members, float(sum(labels[f] for f in members)))]
            collapsed = True
        else:
            chains[n] = [own] + body
    top = _group_chain(chains[tree.root], g)
    groups = []

    def collect(chain):
        for u in chain:
            if isinstance(u, Group):
                groups.append(u.functions)
            else:
                for br in u.branches:
                    collect(br)

    collect(top)
    return GroupPlan(tuple(groups), tuple(top), g, collapsed=collapsed)


def _fold_region(dag, head, kids, subtree, segs):
    """Fold the child segments below ``head`` into one chain, or None if impossible.

    Segments become edges of a two-terminal multigraph (S = head, T = every
    edge leaving the head's subtree) and the graph is shrunk by series and
    parallel merges. The fold fails when the graph is not series-parallel or
    when a parallel merge would pair work with an empty bypass.
    """
    owner = {}
    for c in kids:
        for x in subtree[c]:
            owner[x] = c
    region = subtree[head]
    S, T = ("S",), ("T",)
    edges = []  # [u, v, chain]
    for c in kids:
        edges.append([("in", c), ("out", c), list(segs[c])])
    links = set()
    for c in kids:
        for x in subtree[c]:
            for y in dag.successors(x):
                if y in region and owner[y] != c:
                    links.add((("out", c), ("in", owner[y])))
                elif y not in region:
                    links.add((("out", c), T))
        if any(not dag.successors(x) for x in subtree[c]):
            # the subtree holds the workflow exit
            links.add((("out", c), T))
    for y in dag.successors(head):
        # an edge leaving the subtree straight from the head carries no work
        links.add((S, ("in", owner[y])) if y in region else (S, T))
    for u, v in sorted(links):
        edges.append([u, v, []])

    changed = True
    while changed and len(edges) > 1:
        changed = False
        # parallel merge: several edges with the same ends
        byends = {}
        for e in edges:
            byends.setdefault((e[0], e[1]), []).append(e)
        for (u, v), es in sorted(byends.items()):
            if len(es) > 1:
                branches = tuple(tuple(e[2]) for e in es)
                if any(not b for b in branches):
                    return None
                par = Parallel(branches, max(_chain_anl(b) for b in branches))
                edges = [e for e in edges if (e[0], e[1]) != (u, v)] + [[u, v, [par]]]
                changed = True
                break
        if changed:
            continue
        # series merge: an inner vertex with one edge in and one edge out
        ins, outs = {}, {}
        for e in edges:
            outs.setdefault(e[0], []).append(e)
            ins.setdefault(e[1], []).append(e)
        for x in sorted(set(ins) | set(outs)):
            if x in (S, T):
                continue
            if len(ins.get(x, ())) == 1 and len(outs.get(x, ())) == 1:
                a, b = ins[x][0], outs[x][0]
                edges = [e for e in edges if e is not a and e is not b] + [[a[0], b[1], a[2] + b[2]]]
                changed = True
                break
    if len(edges) == 1 and edges[0][0] == S and edges[0][1] == T:
        return edges[0][2]
    return None


def distribute_slo(plan: GroupPlan, slo_ms: float) -> GroupPlan:
    """Split ``slo_ms`` along the top chain by ANL; each parallel branch receives its unit's full quota."""
    if not slo_ms > 0:
        raise ValueError("slo_ms must be > 0")
    quota = {}

    def assign(chain, q):
        total = _chain_anl(chain)
        if not chain:
            return
        if not total > 0:
            raise ValueError("degenerate ANL labels")
        for u in chain:
            share = q * (u.anl / total)
            if isinstance(u, Group):
                quota[plan.group_index(u)] = share
            else:
                for br in u.branches:
                    assign(br, share)

    assign(plan.structure, float(slo_ms))
    return GroupPlan(plan.groups, plan.structure, plan.max_group_size, quota, plan.collapsed)


def plan_slo(dag: ApplicationDag, labels: Mapping[str, float], slo_ms: float = 1.0, g: int = 3) -> GroupPlan:
    """Dominator tree, folding and quota assignment in one call."""
    return distribute_slo(reduce_and_group(build_dominator_tree(dag), labels, g), slo_ms)
