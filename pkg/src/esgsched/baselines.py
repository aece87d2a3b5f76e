"""Reference schedulers: exhaustive oracle, best-first preplanning and per-function enumeration."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import ApplicationDag, Configuration, Pricing, ProfileTable, per_job_cost
from .search import ConfigPath, ConfigPQ, SearchBudget, StageOptions, resolve_stages

ORACLE_MAX_GROUP = 4
ORACLE_MAX_GRID = 256
P95_Z = 1.645


def oracle_top_k(
    group: Sequence[str],
    budget: SearchBudget | float,
    profiles,
    k: int = 5,
    *,
    pricing: Pricing | None = None,
    max_batch: int | None = None,
) -> ConfigPQ:
    """Enumerate every full path and keep the K cheapest with time < budget.

    Path sums are taken left to right, the same order the search uses, so the
    two agree bit for bit.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    stages = resolve_stages(group, profiles, pricing, max_batch)
    if len(stages) > ORACLE_MAX_GROUP or any(len(s) > ORACLE_MAX_GRID for s in stages):
        raise ValueError("oracle intractable")
    g_slo = budget.g_slo_ms if isinstance(budget, SearchBudget) else float(budget)
    pq = ConfigPQ(k, g_slo)
    if not stages:
        return pq
    pq.stats.generated = int(np.prod([len(s) for s in stages]))
    for cost, t, idx in _enumerate_top_k(stages, g_slo, k):
        pq._paths.append(ConfigPath(tuple(stages[j].labels[i] for j, i in enumerate(idx)), t, cost))
    return pq


def _enumerate_top_k(stages: Sequence[StageOptions], g_slo: float, k: int):
    n = len(stages)
    if n == 1:
        head, tail = [], stages
    else:
        head, tail = stages[:-2], stages[-2:]
    best: list[tuple] = []
    if len(tail) == 2:
        ra = np.repeat(tail[0].rank, len(tail[1]))
        rb = np.tile(tail[1].rank, len(tail[0]))
    for prefix in itertools.product(*(range(len(s)) for s in head)):
        pc, pt = 0.0, 0.0
        for j, i in enumerate(prefix):
            pc = pc + float(stages[j].cost[i])
            pt = pt + float(stages[j].exec_ms[i])
        prank = tuple(int(stages[j].rank[i]) for j, i in enumerate(prefix))
        if len(tail) == 1:
            s = tail[0]
            cost = pc + s.cost
            time = pt + s.exec_ms
            feas = np.flatnonzero(time < g_slo)
            cand = [(cost[x], time[x], prank + (int(s.rank[x]),), prefix + (int(x),)) for x in _top(cost, time, [s.rank], feas, k)]
        else:
            a, b = tail
            cost = (pc + a.cost)[:, None] + b.cost[None, :]
            time = (pt + a.exec_ms)[:, None] + b.exec_ms[None, :]
            feas = np.flatnonzero((time < g_slo).ravel())
            cand = []
            for x in _top(cost.ravel(), time.ravel(), [ra, rb], feas, k):
                i, j = divmod(int(x), len(b))
                cand.append((cost[i, j], time[i, j], prank + (int(a.rank[i]), int(b.rank[j])), prefix + (i, j)))
        best.extend((float(c), float(t), r, p) for c, t, r, p in cand)
        best.sort()
        del best[k:]
    return [(c, t, p) for c, t, _, p in best]


def _top(cost, time, ranks, feas, k):
    """Indices among ``feas`` of the K smallest by (cost, time, ranks...)."""
    if feas.size == 0:
        return []
    c = cost[feas]
    if feas.size > k:
        kth = np.partition(c, k - 1)[k - 1]
        sel = c <= kth
        feas = feas[sel]
    keys = [r[feas] for r in reversed(ranks)] + [time[feas], cost[feas]]
    return feas[np.lexsort(keys)][:k].tolist()


# ---------------------------------------------------------------------------
# best-first preplanning


@dataclass(frozen=True)
class PreplanResult:
    plan: dict  # function id -> Configuration
    latency_ms: float  # modeled P95 end-to-end latency of the plan
    cost: float  # summed per-job cost of the plan
    states: int  # states popped from the open list
    search_ms: float  # modeled search time, capped at the cutoff
    reached_goal: bool


def p95_latency(dag: ApplicationDag, plan: Mapping[str, Configuration], profiles: ProfileTable, sigma: float) -> float:
    weights = {f: profiles.exec_ms(f, plan[f]) * (1.0 + P95_Z * sigma) for f in dag.node_ids}
    return dag.critical_path_ms(weights)


def best_first_preplan(
    dag: ApplicationDag,
    slo_ms: float,
    profiles: ProfileTable,
    cutoff_ms: float = 100.0,
    *,
    pricing: Pricing | None = None,
    sigma: float = 0.05,
    state_cost_ms: float = 0.05,
) -> PreplanResult:
    """Plan every stage up front by best-first search over per-stage (batch, vCPU, vGPU) vectors.

    The start state takes the minimum of every dimension; a successor raises one
    dimension of one stage to its next grid value. States pop by (P95 latency in
    excess of the SLO, per-job cost): the search first closes in on the SLO and
    then walks down in cost among states that meet it. Each popped state costs
    ``state_cost_ms`` of simulated search time. When the cutoff is spent (or the
    space is exhausted) the cheapest popped state meeting the SLO is returned,
    else the popped state with latency closest to the SLO.
    """
    if not cutoff_ms > 0:
        raise ValueError("cutoff_ms must be > 0")
    pricing = pricing or Pricing()
    fids = dag.node_ids
    grid = profiles.grid
    dims = (
        sorted({c.batch for c in grid}),
        sorted({c.vcpus for c in grid}),
        sorted({c.vgpus for c in grid}),
    )
    limits = tuple(len(d) for d in dims)
    infl = 1.0 + P95_Z * sigma

    def evaluate(state):
        plan = {f: Configuration(dims[0][s[0]], dims[1][s[1]], dims[2][s[2]]) for f, s in zip(fids, state)}
        times = {f: profiles.exec_ms(f, c) for f, c in plan.items()}
        cost = sum(per_job_cost(plan[f], times[f], pricing) for f in fids)
        lat = dag.critical_path_ms({f: t * infl for f, t in times.items()})
        return plan, cost, lat

    def entry(state):
        plan, cost, lat = evaluate(state)
        seen[state] = plan
        return (max(0.0, lat - slo_ms), cost, lat, state)

    seen: dict = {}
    start = tuple((0, 0, 0) for _ in fids)
    open_list = [entry(start)]
    max_states = max(1, int(cutoff_ms // state_cost_ms)) if state_cost_ms > 0 else None
    popped = 0
    best = closest = None
    while open_list:
        if max_states is not None and popped >= max_states:
            break
        excess, cost, lat, state = heapq.heappop(open_list)
        popped += 1
        if excess == 0.0:
            if best is None or (cost, lat, state) < best[:3]:
                best = (cost, lat, state)
        else:
            key = (abs(lat - slo_ms), cost, state)
            if closest is None or key < closest[0]:
                closest = (key, cost, lat, state)
        for si in range(len(fids)):
            for dim in range(3):
                if state[si][dim] + 1 >= limits[dim]:
                    continue
                st = list(state[si])
                st[dim] += 1
                nxt = state[:si] + (tuple(st),) + state[si + 1 :]
                if nxt not in seen:
                    heapq.heappush(open_list, entry(nxt))
    search_ms = min(cutoff_ms, popped * state_cost_ms)
    if best is not None:
        cost, lat, state = best
        return PreplanResult(seen[state], lat, cost, popped, search_ms, True)
    _, cost, lat, state = closest
    return PreplanResult(seen[state], lat, cost, popped, search_ms, False)


# ---------------------------------------------------------------------------
# per-function enumeration


def avg_service_ms(profiles: ProfileTable, fid: str) -> float:
    return float(np.mean([t for _, t in profiles.sorted_view(fid)]))


def per_function_slos(dag: ApplicationDag, slo_ms: float, profiles: ProfileTable) -> dict[str, float]:
    """Split the SLO across functions in proportion to their average service time."""
    avg = {f: avg_service_ms(profiles, f) for f in dag.node_ids}
    total = sum(avg.values())
    return {f: slo_ms * a / total for f, a in avg.items()}


def enum_candidates(
    fid: str,
    per_fn_slo: float,
    profiles: ProfileTable,
    pricing: Pricing | None = None,
    max_batch: int | None = None,
    k: int = 1,
) -> list[Configuration]:
    """Up to K cheapest configurations meeting ``per_fn_slo``; else the single fastest one."""
    pricing = pricing or Pricing()
    view = [(c, t) for c, t in profiles.sorted_view(fid) if max_batch is None or c.batch <= max_batch]
    if not view:
        raise ValueError(f"no configuration of {fid!r} has batch <= {max_batch}")
    ok = [(per_job_cost(c, t, pricing), t, c) for c, t in view if t <= per_fn_slo]
    if not ok:
        return [view[0][0]]
    ok.sort()
    return [c for _, _, c in ok[:k]]


def enum_per_function(
    fid: str,
    per_fn_slo: float,
    profiles: ProfileTable,
    pricing: Pricing | None = None,
    max_batch: int | None = None,
) -> Configuration:
    return enum_candidates(fid, per_fn_slo, profiles, pricing, max_batch, 1)[0]
