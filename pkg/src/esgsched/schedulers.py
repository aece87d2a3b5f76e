"""Scheduling policies behind a fit/predict estimator interface.

``fit`` precomputes everything that depends only on the applications,
profiles and prices; ``decide`` (used by the controller) and ``predict``
(offline, on plain requests) map a queue state to a ranked configuration list.
Hyper-parameters live in ``__init__`` so ``get_params``/``set_params``/``clone``
drive parameter sweeps.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

from sklearn.base import BaseEstimator

from .baselines import best_first_preplan, enum_candidates, oracle_top_k, per_function_slos
from .dispatch import AfwQueue, Decision
from .model import MIN_CONFIG, ApplicationDag, Pricing, ProfileTable
from .search import SearchBudget, StageCache, esg_1q
from .slo_dist import label_anl, plan_slo


class SchedulingRequest(NamedTuple):
    app_id: str
    fn_id: str
    queue_len: int
    wait_ms: float  # time since the oldest candidate job entered its application


class _Scheduler(BaseEstimator):
    name = ""

    def fit(self, apps: Sequence[ApplicationDag], profiles: ProfileTable, pricing: Pricing | None = None):
        for a in apps:
            if a.slo_ms is None:
                raise ValueError(f"application {a.id!r} has no SLO")
            for f in a.node_ids:
                if f not in profiles:
                    raise ValueError(f"no profile for function {f!r} of application {a.id!r}")
        self.apps_ = {a.id: a for a in apps}
        self.profiles_ = profiles
        self.pricing_ = pricing or Pricing()
        self.max_batch_ = max(c.batch for c in profiles.grid)
        self._fit()
        return self

    def _fit(self):
        pass

    def request_for(self, queue: AfwQueue, now: float) -> SchedulingRequest:
        app_id, fn_id = queue.key
        head = queue.head(self.max_batch_)
        wait = max(0.0, now - min(j.app_arrival_ms for j in head))
        return SchedulingRequest(app_id, fn_id, len(queue), wait)

    def decide(self, queue: AfwQueue, now: float) -> Decision:
        return self._decide(self.request_for(queue, now))

    def predict(self, requests: Iterable[SchedulingRequest]) -> list[Decision]:
        return [self._decide(SchedulingRequest(*r)) for r in requests]

    def _decide(self, req: SchedulingRequest) -> Decision:
        raise NotImplementedError


def _distinct_heads(paths) -> tuple:
    seen, out = set(), []
    for p in paths:
        c = p.configs[0]
        if c not in seen:
            seen.add(c)
            out.append(c)
    return tuple(out)


class ESGScheduler(_Scheduler):
    """Adaptive group search: re-plans the remaining workflow at every stage.

    Scheduling overhead is modeled, not measured, so runs stay reproducible:
    ``base_ms + node_ms * expanded + probe_ms * generated``.
    """

    name = "esg"

    def __init__(self, k: int = 5, group_size: int = 3, base_ms: float = 1.0, node_ms: float = 0.01, probe_ms: float = 0.0005):
        self.k = k
        self.group_size = group_size
        self.base_ms = base_ms
        self.node_ms = node_ms
        self.probe_ms = probe_ms

    def _fit(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        self.stages_ = StageCache(self.profiles_, self.pricing_)
        # first group of every workflow suffix and its share of the remaining SLO
        self.groups_ = {}
        for app in self.apps_.values():
            for fn in app.node_ids:
                suffix = app.suffix(fn)
                plan = plan_slo(suffix, label_anl(suffix, self.profiles_), 1.0, self.group_size)
                first = plan.first_group
                self.groups_[(app.id, fn)] = (first, plan.quota[plan.groups.index(first)])
        self._check_groups()

    def _check_groups(self):
        pass

    def _search(self, group, budget, max_batch):
        return esg_1q(group, budget, self.stages_, self.k, max_batch=max_batch)

    def _overhead(self, pq) -> float:
        st = pq.stats
        return self.base_ms + self.node_ms * st.expanded + self.probe_ms * st.generated

    def _decide(self, req: SchedulingRequest) -> Decision:
        app = self.apps_[req.app_id]
        group, ratio = self.groups_[(req.app_id, req.fn_id)]
        wait = min(req.wait_ms, app.slo_ms)
        budget = SearchBudget(app.slo_ms, wait, min(1.0, ratio))
        max_batch = max(1, min(req.queue_len, self.max_batch_))
        pq = self._search(group, budget, max_batch)
        cost_ms = self._overhead(pq)
        if not pq:
            return Decision((MIN_CONFIG,), cost_ms, None, True)
        return Decision(_distinct_heads(pq), cost_ms)


class OracleScheduler(ESGScheduler):
    """ESG with the exhaustive group search; overhead charged per enumerated path."""

    name = "oracle"

    def _check_groups(self):
        from .baselines import ORACLE_MAX_GROUP

        for group, _ in self.groups_.values():
            if len(group) > ORACLE_MAX_GROUP:
                raise ValueError("oracle intractable")

    def _search(self, group, budget, max_batch):
        return oracle_top_k(group, budget, self.stages_, self.k, max_batch=max_batch)

    def _overhead(self, pq) -> float:
        return self.base_ms + self.probe_ms * pq.stats.generated


class BestFirstScheduler(_Scheduler):
    """Plans all stages when the entry function is scheduled and never revisits the plan."""

    name = "best_first"

    def __init__(self, cutoff_ms: float = 100.0, state_cost_ms: float = 0.05, sigma: float = 0.05):
        self.cutoff_ms = cutoff_ms
        self.state_cost_ms = state_cost_ms
        self.sigma = sigma

    def _fit(self):
        self.plans_ = {
            a.id: best_first_preplan(
                a, a.slo_ms, self.profiles_, self.cutoff_ms,
                pricing=self.pricing_, sigma=self.sigma, state_cost_ms=self.state_cost_ms,
            )
            for a in self.apps_.values()
        }
        self.batches_ = sorted({c.batch for c in self.profiles_.grid})

    def _decide(self, req: SchedulingRequest) -> Decision:
        res = self.plans_[req.app_id]
        app = self.apps_[req.app_id]
        cfg = res.plan[req.fn_id]
        search_ms = res.search_ms if req.fn_id == app.entry else 0.0
        planned = cfg.batch
        if cfg.batch > req.queue_len:
            # the plan does not apply; run what the queue allows
            b = max(x for x in self.batches_ if x <= req.queue_len)
            cfg = type(cfg)(b, cfg.vcpus, cfg.vgpus)
        return Decision((cfg,), search_ms, planned)


class EnumScheduler(_Scheduler):
    """Per-function enumeration against a static SLO share proportional to mean service time."""

    name = "enum"

    def __init__(self, k: int = 5, probe_ms: float = 0.0005):
        self.k = k
        self.probe_ms = probe_ms

    def _fit(self):
        self.slos_ = {}
        for a in self.apps_.values():
            for f, s in per_function_slos(a, a.slo_ms, self.profiles_).items():
                self.slos_[(a.id, f)] = s
        self.grid_size_ = len(self.profiles_.grid)

    def _decide(self, req: SchedulingRequest) -> Decision:
        max_batch = max(1, min(req.queue_len, self.max_batch_))
        cands = enum_candidates(
            req.fn_id, self.slos_[(req.app_id, req.fn_id)], self.profiles_, self.pricing_, max_batch, self.k
        )
        return Decision(tuple(cands), self.probe_ms * self.grid_size_)


SCHEDULERS = {
    "esg": ESGScheduler,
    "best_first": BestFirstScheduler,
    "enum": EnumScheduler,
    "oracle": OracleScheduler,
}


def make_scheduler(name: str, **params) -> _Scheduler:
    try:
        cls = SCHEDULERS[name]
    except KeyError:
        raise ValueError(f"unknown scheduler {name!r}; expected one of {sorted(SCHEDULERS)}") from None
    valid = cls().get_params()
    return cls(**{k: v for k, v in params.items() if k in valid})
