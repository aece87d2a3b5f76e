"""Top-K configuration-path search for one function group.

The search walks the latency-sorted option list of every function in the
group, best first on a cost lower bound, and prunes with two blades:

* time: a prefix whose elapsed time plus the fastest possible remainder
  already reaches the group budget is dead, and since options are sorted by
  latency every slower sibling is dead too (a ``break``, not a ``continue``);
* cost: a prefix whose cost plus the cheapest possible remainder exceeds the
  K-th smallest *achievable* full-path cost seen so far is dead.

Achievable costs come from completing a prefix with the fastest option of
every remaining function, which is feasible whenever the time blade let the
prefix through.
"""

from __future__ import annotations

import heapq
import itertools
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .model import Configuration, Pricing, ProfileTable, per_job_cost, weighted_job_cost

# relative slack on pruning comparisons; bounds are sums taken in a different
# order than realized path sums, so they may be off by a few ulps
_SLACK = 1e-12


@dataclass(frozen=True)
class SearchBudget:
    """Latency budget of one group: ``(slo_ms - w_ms) * quota``."""

    slo_ms: float
    w_ms: float = 0.0
    quota: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.quota <= 1.0 + 1e-12:
            raise ValueError(f"quota must lie in (0, 1], got {self.quota}")
        if self.w_ms < 0:
            raise ValueError("w_ms must be >= 0")

    @property
    def g_slo_ms(self) -> float:
        return (self.slo_ms - self.w_ms) * self.quota


class StageOptions:
    """Options of one function sorted by execution time (ties by label).

    ``labels`` are usually Configurations but any orderable labels work, which
    keeps hand-written fixtures short.
    """

    __slots__ = ("labels", "exec_ms", "cost", "rank", "_exec_list")

    def __init__(self, labels: Sequence[Hashable], exec_ms, cost, *, check: bool = True):
        self.labels = tuple(labels)
        self.exec_ms = np.asarray(exec_ms, dtype=float)
        self.cost = np.asarray(cost, dtype=float)
        if not (len(self.labels) == self.exec_ms.size == self.cost.size):
            raise ValueError("labels, exec_ms and cost must have equal length")
        if check and self.exec_ms.size > 1 and np.any(np.diff(self.exec_ms) < 0):
            raise ValueError("stage options must be sorted by nondecreasing execution time")
        # position of every label in lexicographic order, used for tie-breaking
        order = sorted(range(len(self.labels)), key=lambda i: self.labels[i])
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        self.rank = rank
        self._exec_list = self.exec_ms.tolist()

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_items(cls, items: Iterable[tuple[Hashable, float, float]]) -> "StageOptions":
        """Build from ``(label, exec_ms, cost)`` triples in any order."""
        rows = sorted(items, key=lambda r: (r[1], r[0]))
        return cls([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows])

    @classmethod
    def from_profiles(
        cls,
        profiles: ProfileTable,
        fid: str,
        pricing: Pricing,
        max_batch: int | None = None,
        weighted: bool = False,
    ) -> "StageOptions":
        cost_fn = weighted_job_cost if weighted else per_job_cost
        view = profiles.sorted_view(fid)
        if max_batch is not None:
            view = [(c, t) for c, t in view if c.batch <= max_batch]
        return cls(
            [c for c, _ in view],
            [t for _, t in view],
            [cost_fn(c, t, pricing) for c, t in view],
        )


class StageCache:
    """Lazily built StageOptions per (function, batch cap) for fixed profiles and pricing."""

    def __init__(self, profiles: ProfileTable, pricing: Pricing, weighted: bool = False):
        self.profiles = profiles
        self.pricing = pricing
        self.weighted = weighted
        self._cache: dict[tuple[str, int | None], StageOptions] = {}

    def get(self, fid: str, max_batch: int | None = None) -> StageOptions:
        batches = {c.batch for c in self.profiles.grid}
        if max_batch is not None and max_batch >= max(batches):
            max_batch = None
        elif max_batch is not None:
            # snap to the largest grid batch not above the cap so keys stay few
            max_batch = max((b for b in batches if b <= max_batch), default=0)
        key = (fid, max_batch)
        opts = self._cache.get(key)
        if opts is None:
            opts = StageOptions.from_profiles(self.profiles, fid, self.pricing, max_batch, self.weighted)
            self._cache[key] = opts
        return opts


@dataclass(frozen=True)
class ConfigPath:
    configs: tuple
    time_ms: float
    cost: float

    def sort_key(self):
        return (self.cost, self.time_ms, self.configs)

    def __len__(self):
        return len(self.configs)


@dataclass
class SearchStats:
    expanded: int = 0  # prefixes whose children were generated
    generated: int = 0  # child bound evaluations, including the probe that triggers a break
    popped: int = 0


class ConfigPQ:
    """Up to K feasible paths, cheapest first; ties by time, then configs."""

    def __init__(self, k: int, g_slo_ms: float, paths: Iterable[ConfigPath] = (), stats: SearchStats | None = None):
        if k < 1:
            raise ValueError("K must be >= 1")
        self.k = int(k)
        self.g_slo_ms = float(g_slo_ms)
        self.stats = stats or SearchStats()
        self._paths: list[ConfigPath] = []
        for p in paths:
            self.insert(p)

    def insert(self, path: ConfigPath) -> bool:
        if not path.time_ms < self.g_slo_ms:
            raise ValueError(f"path time {path.time_ms} violates budget {self.g_slo_ms}")
        key = path.sort_key()
        keys = [p.sort_key() for p in self._paths]
        pos = bisect_left(keys, key)
        if pos >= self.k:
            return False
        self._paths.insert(pos, path)
        del self._paths[self.k :]
        return True

    @property
    def head(self) -> ConfigPath | None:
        return self._paths[0] if self._paths else None

    def costs(self) -> list[float]:
        return [p.cost for p in self._paths]

    def __len__(self):
        return len(self._paths)

    def __iter__(self):
        return iter(self._paths)

    def __getitem__(self, i):
        return self._paths[i]

    def __bool__(self):
        return bool(self._paths)

    def __repr__(self):
        return f"ConfigPQ(k={self.k}, g_slo_ms={self.g_slo_ms:.3f}, paths={self._paths!r})"


@dataclass(frozen=True)
class BoundsCache:
    """Suffix sums indexed by the first remaining stage (length n + 1, last entry 0)."""

    min_time_ms: tuple[float, ...]
    min_cost: tuple[float, ...]
    fastest_cost: tuple[float, ...]

    @classmethod
    def from_stages(cls, stages: Sequence[StageOptions]) -> "BoundsCache":
        n = len(stages)
        mt = [0.0] * (n + 1)
        mc = [0.0] * (n + 1)
        fc = [0.0] * (n + 1)
        for j in range(n - 1, -1, -1):
            s = stages[j]
            mt[j] = mt[j + 1] + float(s.exec_ms[0])
            mc[j] = mc[j + 1] + float(s.cost.min())
            fc[j] = fc[j + 1] + float(s.cost[0])
        return cls(tuple(mt), tuple(mc), tuple(fc))


def time_low_bound(partial: ConfigPath, cache: BoundsCache) -> float:
    return partial.time_ms + cache.min_time_ms[len(partial.configs)]


def cost_low_bound(partial: ConfigPath, cache: BoundsCache) -> float:
    return partial.cost + cache.min_cost[len(partial.configs)]


def cost_fastest(partial: ConfigPath, cache: BoundsCache) -> float:
    return partial.cost + cache.fastest_cost[len(partial.configs)]


def resolve_stages(
    group: Sequence[str],
    profiles,
    pricing: Pricing | None = None,
    max_batch: int | None = None,
) -> list[StageOptions]:
    """Stage options for ``group`` from a ProfileTable, a StageCache or a mapping of StageOptions."""
    if isinstance(profiles, StageCache):
        return [profiles.get(f, max_batch) for f in group]
    if isinstance(profiles, ProfileTable):
        pricing = pricing or Pricing()
        return [StageOptions.from_profiles(profiles, f, pricing, max_batch) for f in group]
    if isinstance(profiles, Mapping):
        stages = []
        for f in group:
            s = profiles[f]
            if not isinstance(s, StageOptions):
                raise TypeError(f"expected StageOptions for {f!r}")
            if s.exec_ms.size > 1 and np.any(np.diff(s.exec_ms) < 0):
                raise ValueError("stage options must be sorted by nondecreasing execution time")
            stages.append(s)
        return stages
    raise TypeError(f"unsupported profile source {type(profiles).__name__}")


def esg_1q(
    group: Sequence[str],
    budget: SearchBudget | float,
    profiles,
    k: int = 5,
    *,
    pricing: Pricing | None = None,
    max_batch: int | None = None,
) -> ConfigPQ:
    """Top-K cheapest configuration paths of ``group`` finishing strictly within the budget.

    An empty queue means no path fits, not an error.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    if len(group) < 1:
        raise ValueError("group must contain at least one function")
    g_slo = budget.g_slo_ms if isinstance(budget, SearchBudget) else float(budget)
    stages = resolve_stages(group, profiles, pricing, max_batch)
    found, stats = search_stages(stages, g_slo, k)
    pq = ConfigPQ(k, g_slo, stats=stats)
    for cost, t, idx in found:
        pq._paths.append(ConfigPath(tuple(stages[j].labels[i] for j, i in enumerate(idx)), t, cost))
    return pq


def search_stages(stages: Sequence[StageOptions], g_slo: float, k: int):
    """Core best-first search.

    Returns ``([(cost, time, option indices)], SearchStats)`` in (cost, time, labels) order.
    """
    n = len(stages)
    stats = SearchStats()
    if n == 0 or any(len(s) == 0 for s in stages) or not g_slo > 0:
        return [], stats
    ts = [s.exec_ms for s in stages]
    cs = [s.cost for s in stages]
    tl = [s._exec_list for s in stages]
    bounds = BoundsCache.from_stages(stages)
    sm, sc = bounds.min_time_ms, bounds.min_cost
    fast_t = [float(s.exec_ms[0]) for s in stages]
    fast_c = [float(s.cost[0]) for s in stages]
    g_hi = g_slo * (1.0 + _SLACK)
    lo = 1.0 - _SLACK

    ub: list[float] = []  # negated K smallest achievable costs (max-heap)
    frontier: list = []
    seq = itertools.count()
    out = []

    def threshold() -> float:
        return -ub[0] * (1.0 + _SLACK) if len(ub) >= k else math.inf

    def offer(values: np.ndarray):
        if values.size > k:
            values = np.partition(values, k - 1)[:k]
        for v in values.tolist():
            if len(ub) < k:
                heapq.heappush(ub, -v)
            elif v < -ub[0]:
                heapq.heapreplace(ub, -v)

    def expand(pc: float, pt: float, prefix: tuple, d: int):
        stats.expanded += 1
        rest_t = sm[d + 1]
        opts_t = tl[d]
        brk = bisect_left(opts_t, g_hi - pt - rest_t)
        stats.generated += brk + (1 if brk < len(opts_t) else 0)
        if brk == 0:
            return
        pcc = pc + cs[d][:brk]
        ptt = pt + ts[d][:brk]
        rl = pcc + sc[d + 1]
        keep = np.flatnonzero(rl * lo <= threshold())
        if keep.size == 0:
            return
        last = d + 1 == n
        if not last:
            ft = ptt[keep]
            fc = pcc[keep]
            for j in range(d + 1, n):
                ft = ft + fast_t[j]
                fc = fc + fast_c[j]
            ok = ft < g_slo
            if d > 0:
                # option 0 completes to the same path the parent already offered
                ok &= keep != 0
            if ok.any():
                offer(fc[ok])
            idx = keep[np.argsort(rl[keep], kind="stable")]
            keys = (rl[idx] * lo).tolist()
            heapq.heappush(frontier, ((keys[0], 0, next(seq)), (idx, keys, prefix, pc, pt, d), 0))
        else:
            idx = keep[ptt[keep] < g_slo]
            if idx.size == 0:
                return
            offer(pcc[idx] if d == 0 else pcc[idx[idx != 0]])
            r = stages[d].rank[idx]
            idx = idx[np.lexsort((r, ptt[idx], pcc[idx]))]
            costs = pcc[idx].tolist()
            times = ptt[idx].tolist()
            prefix_rank = tuple(int(stages[j].rank[i]) for j, i in enumerate(prefix))
            ranks = [prefix_rank + (int(x),) for x in stages[d].rank[idx]]
            b = (idx, costs, times, ranks, prefix)
            heapq.heappush(frontier, ((costs[0], 1, times[0], ranks[0]), b, 0))

    expand(0.0, 0.0, (), 0)
    while frontier and len(out) < k:
        key, b, pos = heapq.heappop(frontier)
        stats.popped += 1
        if key[1] == 1:
            idx, costs, times, ranks, prefix = b
            out.append((costs[pos], times[pos], prefix + (int(idx[pos]),)))
            if pos + 1 < len(costs):
                p = pos + 1
                heapq.heappush(frontier, ((costs[p], 1, times[p], ranks[p]), b, p))
            continue
        if key[0] > threshold():
            # siblings carry larger keys, so the rest of the bundle is dead too
            continue
        idx, keys, prefix, pc0, pt0, d = b
        if pos + 1 < len(keys):
            heapq.heappush(frontier, ((keys[pos + 1], 0, next(seq)), b, pos + 1))
        i = int(idx[pos])
        expand(pc0 + float(cs[d][i]), pt0 + float(ts[d][i]), prefix + (i,), d + 1)
    return out, stats
