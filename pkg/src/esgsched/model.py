"""Domain types shared by the scheduler, the simulator and the metrics.

Durations are milliseconds, payload sizes are MB and money is USD throughout.
"""

from __future__ import annotations

import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MS_PER_HOUR = 3_600_000.0


class MissingProfileError(KeyError):
    """A (function, configuration) pair has no profiled execution time."""

    def __init__(self, function_id, config):
        self.function_id = function_id
        self.config = config
        super().__init__(f"missing profile entry for function {function_id!r} at {config}")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True, order=True, slots=True)
class Configuration:
    """One (batch size, #vCPUs, #vGPUs) triple for a single function invocation."""

    batch: int
    vcpus: int
    vgpus: int

    def __post_init__(self):
        for name in ("batch", "vcpus", "vgpus"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"Configuration.{name} must be an integer >= 1, got {v!r}")

    def __str__(self):
        return f"({self.batch},{self.vcpus},{self.vgpus})"

    @property
    def resources(self) -> tuple[int, int]:
        return (self.vcpus, self.vgpus)

    def as_dict(self) -> dict:
        return {"batch": self.batch, "vcpus": self.vcpus, "vgpus": self.vgpus}


MIN_CONFIG = Configuration(1, 1, 1)


@dataclass(frozen=True)
class ConfigGrid:
    batch: tuple[int, ...] = (1, 2, 4, 8)
    vcpus: tuple[int, ...] = tuple(range(1, 9))
    vgpus: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        for name in ("batch", "vcpus", "vgpus"):
            values = tuple(sorted(set(int(v) for v in getattr(self, name))))
            if values and values[0] < 1:
                raise ValueError(f"grid values for {name} must be >= 1")
            object.__setattr__(self, name, values)

    @classmethod
    def from_ranges(cls, batch: tuple[int, int], vcpus: tuple[int, int], vgpus: tuple[int, int]):
        """Build a grid from inclusive ``(lo, hi)`` bounds per dimension."""
        return cls(
            tuple(range(batch[0], batch[1] + 1)),
            tuple(range(vcpus[0], vcpus[1] + 1)),
            tuple(range(vgpus[0], vgpus[1] + 1)),
        )

    @property
    def max_batch(self) -> int:
        return max(self.batch) if self.batch else 0

    def __len__(self):
        return len(self.batch) * len(self.vcpus) * len(self.vgpus)

    def as_dict(self) -> dict:
        return {"batch": list(self.batch), "vcpus": list(self.vcpus), "vgpus": list(self.vgpus)}


def enumerate_configs(grid: ConfigGrid) -> list[Configuration]:
    """Full Cartesian product of the grid, batch-major, then vCPUs, then vGPUs."""
    if len(grid) == 0:
        raise ValueError("empty configuration space")
    return [Configuration(b, c, g) for b, c, g in itertools.product(grid.batch, grid.vcpus, grid.vgpus)]


@dataclass(frozen=True)
class FunctionSpec:
    id: str
    base_exec_ms: float
    cold_start_ms: float = 0.0
    input_size_mb: float = 0.0

    def __post_init__(self):
        if not self.id:
            raise ValueError("FunctionSpec.id must be non-empty")
        if not self.base_exec_ms > 0:
            raise ValueError(f"{self.id}: base_exec_ms must be > 0")
        if self.cold_start_ms < 0:
            raise ValueError(f"{self.id}: cold_start_ms must be >= 0")
        if self.input_size_mb < 0:
            raise ValueError(f"{self.id}: input_size_mb must be >= 0")


@dataclass(frozen=True)
class ProfileModel:
    """Parameters of the synthetic latency model used when no measured profiles exist.

    ``vgpu_scale`` is the number of minimal GPU partitions one allocation unit
    stands for; it is 1 with GPU sharing and 7 when a whole GPU is the unit.
    """

    kappa_b: float = 0.6
    kappa_c: float = 0.15
    kappa_g: float = 0.35
    vgpu_scale: int = 1

    def __post_init__(self):
        if min(self.kappa_b, self.kappa_c, self.kappa_g) < 0:
            raise ValueError("profile model coefficients must be >= 0")
        if self.vgpu_scale < 1:
            raise ValueError("vgpu_scale must be >= 1")


def synth_exec_time(spec: FunctionSpec, cfg: Configuration, params: ProfileModel | None = None) -> float:
    """Execution time of one task of ``cfg.batch`` jobs.

    t = base * (1 + kb*(b-1)) / (1 + kc*(c-1) + kg*(g-1)); exactly ``base`` at (1,1,1).
    """
    p = params or ProfileModel()
    g_eff = cfg.vgpus * p.vgpu_scale
    batch_factor = 1.0 + p.kappa_b * (cfg.batch - 1)
    speedup = 1.0 + p.kappa_c * (cfg.vcpus - 1) + p.kappa_g * (g_eff - 1)
    if batch_factor == 1.0 and speedup == 1.0:
        return float(spec.base_exec_ms)
    return spec.base_exec_ms * batch_factor / speedup


@dataclass(frozen=True)
class Pricing:
    vcpu_per_hour: float = 0.034
    vgpu_per_hour: float = 0.67
    alpha: float = 0.5

    def __post_init__(self):
        if self.vcpu_per_hour < 0 or self.vgpu_per_hour < 0:
            raise ValueError("prices must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    def hourly_rate(self, vcpus: int, vgpus: int) -> float:
        return vcpus * self.vcpu_per_hour + vgpus * self.vgpu_per_hour


def per_job_cost(cfg: Configuration, exec_ms: float, pricing: Pricing) -> float:
    """Monetary cost of one job when a task of ``cfg`` runs for ``exec_ms``."""
    return pricing.hourly_rate(cfg.vcpus, cfg.vgpus) * (exec_ms / MS_PER_HOUR) / cfg.batch


def weighted_job_cost(cfg: Configuration, exec_ms: float, pricing: Pricing) -> float:
    """Abstract (alpha*vcpus + beta*vgpus) * time per job, the price-free objective."""
    return (pricing.alpha * cfg.vcpus + pricing.beta * cfg.vgpus) * exec_ms / cfg.batch


class ProfileTable:
    """(function, configuration) -> execution time, plus per-function latency-sorted views.

    Instances are treated as immutable once built.
    """

    def __init__(self, entries: Mapping[tuple[str, Configuration], float]):
        by_fn: dict[str, dict[Configuration, float]] = defaultdict(dict)
        for (fid, cfg), t in entries.items():
            t = float(t)
            if not t > 0 or not np.isfinite(t):
                raise ValueError(f"exec_ms must be finite and > 0 for ({fid!r}, {cfg}), got {t}")
            by_fn[fid][cfg] = t
        if not by_fn:
            raise ValueError("profile table is empty")
        grid = sorted(set().union(*(set(d) for d in by_fn.values())))
        for fid, d in by_fn.items():
            if len(d) != len(grid):
                missing = next(c for c in grid if c not in d)
                raise MissingProfileError(fid, missing)
        self._by_fn = {fid: dict(d) for fid, d in by_fn.items()}
        self._grid = tuple(grid)
        self._views: dict[str, tuple[tuple[Configuration, float], ...]] = {}
        for fid, d in self._by_fn.items():
            self._views[fid] = tuple(sorted(d.items(), key=lambda kv: (kv[1], kv[0])))

    @classmethod
    def synthesize(
        cls,
        functions: Iterable[FunctionSpec],
        grid: ConfigGrid | Sequence[Configuration],
        params: ProfileModel | None = None,
    ) -> "ProfileTable":
        configs = enumerate_configs(grid) if isinstance(grid, ConfigGrid) else list(grid)
        entries = {}
        for spec in functions:
            for cfg in configs:
                entries[(spec.id, cfg)] = synth_exec_time(spec, cfg, params)
        return cls(entries)

    @property
    def functions(self) -> tuple[str, ...]:
        return tuple(self._by_fn)

    @property
    def grid(self) -> tuple[Configuration, ...]:
        return self._grid

    def __contains__(self, fid) -> bool:
        return fid in self._by_fn

    def exec_ms(self, fid: str, cfg: Configuration) -> float:
        try:
            return self._by_fn[fid][cfg]
        except KeyError:
            raise MissingProfileError(fid, cfg) from None

    def sorted_view(self, fid: str) -> tuple[tuple[Configuration, float], ...]:
        """Configurations of ``fid`` in nondecreasing execution time (ties by configuration)."""
        try:
            return self._views[fid]
        except KeyError:
            raise MissingProfileError(fid, None) from None

    def entries(self) -> Iterator[tuple[str, Configuration, float]]:
        for fid, d in self._by_fn.items():
            for cfg, t in d.items():
                yield fid, cfg, t

    def subset(self, fids: Iterable[str]) -> "ProfileTable":
        return ProfileTable({(f, c): t for f in fids for c, t in self._by_fn[f].items()})

    def to_dict(self) -> dict:
        return {
            "functions": {
                fid: [dict(cfg.as_dict(), exec_ms=t) for cfg, t in sorted(d.items())]
                for fid, d in self._by_fn.items()
            }
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProfileTable":
        entries = {}
        for fid, rows in data["functions"].items():
            for i, row in enumerate(rows):
                try:
                    cfg = Configuration(int(row["batch"]), int(row["vcpus"]), int(row["vgpus"]))
                    entries[(fid, cfg)] = float(row["exec_ms"])
                except (KeyError, TypeError) as exc:
                    raise ValueError(f"profiles.functions.{fid}[{i}]: malformed row ({exc})") from None
        return cls(entries)


@dataclass(frozen=True)
class ApplicationDag:
    """A DNN workflow: functions, producer->consumer edges and an end-to-end SLO.

    ``slo_ms`` may be left unset (None) until it is derived from profiles.
    """

    id: str
    functions: tuple[FunctionSpec, ...]
    edges: tuple[tuple[str, str], ...] = ()
    slo_ms: float | None = None
    _succ: dict = field(init=False, repr=False, compare=False, hash=False)
    _pred: dict = field(init=False, repr=False, compare=False, hash=False)
    _topo: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "edges", tuple((str(a), str(b)) for a, b in self.edges))
        if not self.functions:
            raise ValueError(f"application {self.id!r} has no functions")
        ids = [f.id for f in self.functions]
        if len(set(ids)) != len(ids):
            raise ValueError(f"application {self.id!r} has duplicate function ids")
        if self.slo_ms is not None and not self.slo_ms > 0:
            raise ValueError(f"application {self.id!r}: slo_ms must be > 0")
        succ = {i: [] for i in ids}
        pred = {i: [] for i in ids}
        for a, b in self.edges:
            if a not in succ or b not in succ:
                raise ValueError(f"application {self.id!r}: edge ({a!r}, {b!r}) names an unknown function")
            if a == b:
                raise ValueError("DAG contains a cycle")
            if b in succ[a]:
                continue
            succ[a].append(b)
            pred[b].append(a)
        for d in (succ, pred):
            for k in d:
                d[k] = tuple(sorted(d[k]))
        object.__setattr__(self, "_succ", succ)
        object.__setattr__(self, "_pred", pred)
        object.__setattr__(self, "_topo", _topological_order(ids, succ, pred))
        entries = [i for i in ids if not pred[i]]
        exits = [i for i in ids if not succ[i]]
        if len(entries) != 1:
            raise ValueError("DAG must have unique entry")
        if len(exits) != 1:
            raise ValueError("DAG must have unique exit")

    @classmethod
    def chain(cls, app_id: str, functions: Sequence[FunctionSpec], slo_ms: float | None = None):
        edges = [(a.id, b.id) for a, b in zip(functions, functions[1:])]
        return cls(app_id, tuple(functions), tuple(edges), slo_ms)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.functions)

    @property
    def entry(self) -> str:
        return self._topo[0]

    @property
    def exit(self) -> str:
        return self._topo[-1]

    @property
    def is_chain(self) -> bool:
        return all(len(s) <= 1 for s in self._succ.values()) and all(len(p) <= 1 for p in self._pred.values())

    def function(self, fid: str) -> FunctionSpec:
        for f in self.functions:
            if f.id == fid:
                return f
        raise KeyError(fid)

    def successors(self, fid: str) -> tuple[str, ...]:
        return self._succ[fid]

    def predecessors(self, fid: str) -> tuple[str, ...]:
        return self._pred[fid]

    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def descendants(self, fid: str) -> set[str]:
        seen = set()
        stack = [fid]
        while stack:
            for s in self._succ[stack.pop()]:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return seen

    def suffix(self, fid: str) -> "ApplicationDag":
        """Sub-workflow made of ``fid`` and everything downstream of it."""
        keep = self.descendants(fid) | {fid}
        funcs = tuple(f for f in self.functions if f.id in keep)
        edges = tuple((a, b) for a, b in self.edges if a in keep and b in keep)
        return ApplicationDag(self.id, funcs, edges, self.slo_ms)

    def with_slo(self, slo_ms: float) -> "ApplicationDag":
        return ApplicationDag(self.id, self.functions, self.edges, float(slo_ms))

    def paths(self) -> list[tuple[str, ...]]:
        """Every entry-to-exit path (exponential; meant for small graphs and tests)."""
        out = []

        def walk(node, prefix):
            prefix = prefix + (node,)
            if not self._succ[node]:
                out.append(prefix)
            for s in self._succ[node]:
                walk(s, prefix)

        walk(self.entry, ())
        return out

    def critical_path_ms(self, weight: Mapping[str, float]) -> float:
        finish = {}
        for n in self._topo:
            finish[n] = weight[n] + max((finish[p] for p in self._pred[n]), default=0.0)
        return finish[self.exit]

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "functions": [f.id for f in self.functions],
            "edges": [list(e) for e in self.edges],
        }
        if self.slo_ms is not None:
            d["slo_ms"] = self.slo_ms
        return d


def _topological_order(ids, succ, pred) -> tuple[str, ...]:
    indeg = {i: len(pred[i]) for i in ids}
    ready = deque(sorted(i for i in ids if indeg[i] == 0))
    order = []
    while ready:
        n = ready.popleft()
        order.append(n)
        released = []
        for s in succ[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                released.append(s)
        # keep lexical order among simultaneously released nodes
        ready = deque(sorted(list(ready) + released))
    if len(order) != len(ids):
        raise ValueError("DAG contains a cycle")
    return tuple(order)
