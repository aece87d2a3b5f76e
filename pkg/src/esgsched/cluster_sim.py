"""Deterministic discrete-event simulation of the invoker fleet."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dispatch import Controller, StageJob, Task, home_invoker
from .model import ApplicationDag, Configuration, ProfileTable
from .workload import Arrival

log = logging.getLogger(__name__)

KEEP_ALIVE_MS = 600_000.0
NOISE_FLOOR = 0.05

# event kinds, in tie-break order at equal timestamps
COMPLETE, PREWARM, DISPATCH, ARRIVAL = 0, 1, 2, 3

# labels that split the root seed per subsystem
WORKLOAD_STREAM, NOISE_STREAM = 1, 2


def sample_exec_time(profile_ms: float, noise_sigma: float, rng: np.random.Generator) -> float:
    """profile * max(0.05, N(1, sigma)); exactly the profile when sigma is 0."""
    if noise_sigma <= 0:
        return float(profile_ms)
    return float(profile_ms) * max(NOISE_FLOOR, float(rng.normal(1.0, noise_sigma)))


@dataclass(frozen=True)
class TransferParams:
    fixed_latency_ms: float = 5.0
    bandwidth_mb_per_ms: float = 1.0  # 1 GB/s

    def __post_init__(self):
        if self.fixed_latency_ms < 0 or not self.bandwidth_mb_per_ms > 0:
            raise ValueError("transfer latency must be >= 0 and bandwidth > 0")


def transfer_delay(size_mb: float, same_node: bool, params: TransferParams | None = None) -> float:
    if size_mb < 0:
        raise ValueError("size must be >= 0")
    if same_node:
        return 0.0
    p = params or TransferParams()
    return p.fixed_latency_ms + size_mb / p.bandwidth_mb_per_ms


class NodeState:
    """Free resources, warm containers and running tasks of one invoker."""

    def __init__(self, index: int, vcpus: int = 16, vgpus: int = 7):
        self.index = index
        self.vcpu_capacity = vcpus
        self.vgpu_capacity = vgpus
        self.free_vcpus = vcpus
        self.free_vgpus = vgpus
        # (fn, vgpus) -> (ready_ms, expiry_ms). A container's CPU quota can be resized in
        # place and its batch size is a request property; its GPU partition is fixed.
        self.warm: dict[tuple[str, int], tuple[float, float]] = {}
        self.running: set[int] = set()

    def fits(self, cfg: Configuration) -> bool:
        return self.free_vcpus >= cfg.vcpus and self.free_vgpus >= cfg.vgpus

    def allocate(self, cfg: Configuration, task_id: int):
        if not self.fits(cfg):
            raise RuntimeError(f"node {self.index} cannot host {cfg}")
        self.free_vcpus -= cfg.vcpus
        self.free_vgpus -= cfg.vgpus
        self.running.add(task_id)

    def release(self, cfg: Configuration, task_id: int):
        self.running.discard(task_id)
        self.free_vcpus += cfg.vcpus
        self.free_vgpus += cfg.vgpus
        if self.free_vcpus > self.vcpu_capacity or self.free_vgpus > self.vgpu_capacity:
            raise RuntimeError(f"node {self.index} released more than it holds")

    def is_warm(self, fn_id: str, cfg: Configuration, now: float) -> bool:
        w = self.warm.get((fn_id, cfg.vgpus))
        return w is not None and w[0] <= now < w[1]

    def cold_delay(self, fn_id: str, cfg: Configuration, now: float, cold_start_ms: float) -> float:
        """Launch latency still to pay for a container needed at ``now``."""
        w = self.warm.get((fn_id, cfg.vgpus))
        if w is None or now >= w[1]:
            return cold_start_ms
        return max(0.0, w[0] - now)

    def mark_warm(self, fn_id: str, vgpus: int, ready: float, expiry: float):
        key = (fn_id, vgpus)
        old = self.warm.get(key)
        if old is not None and old[1] > ready:
            ready = min(ready, old[0])
            expiry = max(expiry, old[1])
        self.warm[key] = (ready, expiry)


class ClusterState:
    def __init__(self, n_nodes: int = 16, vcpus: int = 16, vgpus: int = 7):
        if n_nodes < 1:
            raise ValueError("cluster needs at least one node")
        self.vcpu_capacity = vcpus
        self.vgpu_capacity = vgpus
        self.nodes = [NodeState(i, vcpus, vgpus) for i in range(n_nodes)]

    def __len__(self):
        return len(self.nodes)


class EwmaPredictor:
    """Smoothed inter-arrival estimate per key: est <- lam * interval + (1 - lam) * est."""

    def __init__(self, lam: float = 0.3):
        if not 0 < lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")
        self.lam = lam
        self.last: dict = {}
        self.estimate: dict = {}

    def observe(self, key, t: float) -> float | None:
        prev = self.last.get(key)
        self.last[key] = t
        if prev is None:
            return None
        interval = t - prev
        est = self.estimate.get(key)
        est = interval if est is None else self.lam * interval + (1 - self.lam) * est
        self.estimate[key] = est
        return est


@dataclass(frozen=True)
class SimSettings:
    n_nodes: int = 16
    vcpus_per_node: int = 16
    vgpus_per_node: int = 7
    noise_sigma: float = 0.05
    transfer: TransferParams = TransferParams()
    keep_alive_ms: float = KEEP_ALIVE_MS
    prewarm: bool = True
    ewma_lambda: float = 0.3
    tick_ms: float = 10.0
    recheck_rounds: int = 3
    initial_warm: bool = False  # every node starts with live containers for every shape
    max_time_ms: float | None = None  # stop here; unfinished jobs count as misses

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.tick_ms > 0:
            raise ValueError("tick_ms must be > 0")
        if self.keep_alive_ms < 0:
            raise ValueError("keep_alive_ms must be >= 0")


@dataclass
class StageRecord:
    fn_id: str
    enqueued_ms: float
    task_id: int = -1
    node: int = -1
    config: Configuration | None = None
    batch: int = 0
    dispatch_ms: float = math.nan
    search_ms: float = 0.0
    transfer_ms: float = 0.0
    cold_ms: float = 0.0
    start_ms: float = math.nan
    end_ms: float = math.nan

    @property
    def queue_wait_ms(self) -> float:
        return self.dispatch_ms - self.enqueued_ms


@dataclass
class JobRecord:
    job_id: int
    app_id: str
    arrival_ms: float
    slo_ms: float
    stages: dict = field(default_factory=dict)  # fn id -> StageRecord
    end_ms: float | None = None
    done: set = field(default_factory=set, repr=False)  # completed stages

    @property
    def latency_ms(self) -> float | None:
        return None if self.end_ms is None else self.end_ms - self.arrival_ms

    @property
    def hit(self) -> bool:
        return self.end_ms is not None and self.end_ms - self.arrival_ms <= self.slo_ms


@dataclass
class SimTrace:
    jobs: list[JobRecord]
    tasks: list[Task]
    settings: SimSettings
    seed: int
    scheduler: str = ""

    TRACE_COLUMNS = (
        "job_id", "app_id", "fn_id", "arrival_ms", "slo_ms", "enqueued_ms", "dispatch_ms",
        "search_ms", "transfer_ms", "cold_start_ms", "exec_start_ms", "end_ms",
        "node", "task_id", "batch", "vcpus", "vgpus", "warm",
    )

    def rows(self) -> Iterable[list]:
        for job in self.jobs:
            for fn, s in job.stages.items():
                cfg = s.config
                yield [
                    job.job_id, job.app_id, fn, _fmt(job.arrival_ms), _fmt(job.slo_ms), _fmt(s.enqueued_ms),
                    _fmt(s.dispatch_ms), _fmt(s.search_ms), _fmt(s.transfer_ms), _fmt(s.cold_ms),
                    _fmt(s.start_ms), _fmt(s.end_ms), s.node, s.task_id, s.batch,
                    cfg.vcpus if cfg else "", cfg.vgpus if cfg else "", int(s.cold_ms == 0.0) if cfg else "",
                ]

    def write_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.TRACE_COLUMNS)
            w.writerows(self.rows())


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


class Simulator:
    def __init__(
        self,
        apps: Sequence[ApplicationDag],
        profiles: ProfileTable,
        scheduler,
        settings: SimSettings | None = None,
        seed: int = 0,
    ):
        self.apps = {a.id: a for a in apps}
        for a in apps:
            if a.slo_ms is None:
                raise ValueError(f"application {a.id!r} has no SLO")
        self.profiles = profiles
        self.settings = settings or SimSettings()
        self.seed = int(seed)
        s = self.settings
        self.cluster = ClusterState(s.n_nodes, s.vcpus_per_node, s.vgpus_per_node)
        self.scheduler = scheduler
        self.controller = Controller(scheduler, self.cluster, self.launch_task, s.recheck_rounds)
        self.ewma = EwmaPredictor(s.ewma_lambda)
        self.events: list = []
        self._seq = itertools.count()
        self._ticks: set[float] = set()
        self._recheck_at: float | None = None  # the single pending recheck tick
        self.jobs: dict[int, JobRecord] = {}
        self.tasks: list[Task] = []
        self.last_used: dict[tuple[str, str], tuple[int, int]] = {}  # (app, fn) -> (node, vgpus)
        self._stage_index = {a.id: {f: i for i, f in enumerate(a.topological_order())} for a in apps}
        self.now = 0.0
        if s.initial_warm:
            partitions = sorted({c.vgpus for c in profiles.grid if c.vgpus <= s.vgpus_per_node})
            fns = sorted({f for a in apps for f in a.node_ids})
            for node in self.cluster.nodes:
                for f in fns:
                    for vg in partitions:
                        node.mark_warm(f, vg, 0.0, s.keep_alive_ms)

    # -- event plumbing
    def _push(self, t: float, kind: int, payload=None):
        heapq.heappush(self.events, (t, kind, next(self._seq), payload))

    def request_tick(self, t: float, recheck: bool = False):
        if recheck:
            if self._recheck_at is None:
                self._recheck_at = t
                self._push(t, DISPATCH, True)
        elif t not in self._ticks:
            self._ticks.add(t)
            self._push(t, DISPATCH, False)

    # -- handlers
    def run(self, arrivals: Iterable[Arrival]) -> SimTrace:
        for a in arrivals:
            if a.app_id not in self.apps:
                raise ValueError(f"arrival {a.job_id} names unknown application {a.app_id!r}")
            self._push(float(a.time_ms), ARRIVAL, a)
        limit = self.settings.max_time_ms
        while self.events:
            t, kind, _, payload = heapq.heappop(self.events)
            if limit is not None and t > limit:
                break
            self.now = t
            if kind == ARRIVAL:
                self._on_arrival(payload, t)
            elif kind == DISPATCH:
                self._on_tick(t, payload)
            elif kind == COMPLETE:
                self._on_complete(payload, t)
            elif kind == PREWARM:
                self._on_prewarm(payload, t)
        jobs = [self.jobs[k] for k in sorted(self.jobs)]
        return SimTrace(jobs, self.tasks, self.settings, self.seed, type(self.scheduler).__name__)

    def _on_arrival(self, a: Arrival, t: float):
        app = self.apps[a.app_id]
        job = JobRecord(a.job_id, app.id, t, float(app.slo_ms))
        if a.job_id in self.jobs:
            raise ValueError(f"duplicate job id {a.job_id}")
        self.jobs[a.job_id] = job
        entry = app.entry
        job.stages[entry] = StageRecord(entry, t)
        self.controller.enqueue(StageJob(a.job_id, app.id, entry, t, t, ()), True)
        for fn in app.node_ids:
            est = self.ewma.observe((app.id, fn), t)
            if self.settings.prewarm and est is not None:
                at = t + est - app.function(fn).cold_start_ms
                if at > t:
                    self._push(at, PREWARM, (app.id, fn))
        self.request_tick(t)

    def _on_prewarm(self, key: tuple[str, str], t: float):
        app_id, fn = key
        node, vg = self.last_used.get(key, (home_invoker(app_id, fn, len(self.cluster)), 1))
        cold = self.apps[app_id].function(fn).cold_start_ms
        n = self.cluster.nodes[node]
        w = n.warm.get((fn, vg))
        if w is not None and w[0] <= t < w[1]:
            ready = w[0]
        else:
            ready = t + cold
        n.mark_warm(fn, vg, ready, ready + self.settings.keep_alive_ms)

    def _on_tick(self, t: float, recheck: bool):
        # event-driven ticks serve fresh queues; recheck rounds run on one periodic clock
        if recheck:
            self._recheck_at = None
        else:
            self._ticks.discard(t)
        tasks = self.controller.tick(t, include_recheck=recheck)
        if tasks and any(q and k not in self.controller.recheck for k, q in self.controller.queues.items()):
            self.request_tick(t)
        if self.controller.recheck:
            self.request_tick(t + self.settings.tick_ms, recheck=True)

    def launch_task(self, task: Task, now: float):
        """Reserve resources and schedule the completion of ``task``."""
        s = self.settings
        cfg = task.config
        node = self.cluster.nodes[task.node]
        node.allocate(cfg, task.task_id)
        app = self.apps[task.app_id]
        spec = app.function(task.fn_id)
        transfer = 0.0
        for j in task.jobs:
            for p in j.pred_nodes:
                transfer = max(transfer, transfer_delay(spec.input_size_mb, p == task.node, s.transfer))
        need_at = now + task.search_ms + transfer
        cold = node.cold_delay(task.fn_id, cfg, need_at, spec.cold_start_ms)
        stage = self._stage_index[app.id][task.fn_id]
        rng = np.random.default_rng([self.seed, NOISE_STREAM, task.jobs[0].job_id, stage])
        exec_ms = sample_exec_time(self.profiles.exec_ms(task.fn_id, cfg), s.noise_sigma, rng)
        task.transfer_ms = transfer
        task.cold_ms = cold
        task.cold = cold > 0
        task.exec_ms = exec_ms
        task.start_ms = need_at + cold
        task.end_ms = task.start_ms + exec_ms
        for j in task.jobs:
            rec = self.jobs[j.job_id].stages[task.fn_id]
            rec.task_id = task.task_id
            rec.node = task.node
            rec.config = cfg
            rec.batch = task.batch
            rec.dispatch_ms = now
            rec.search_ms = task.search_ms
            rec.transfer_ms = transfer
            rec.cold_ms = cold
            rec.start_ms = task.start_ms
            rec.end_ms = task.end_ms
        self.last_used[(task.app_id, task.fn_id)] = (task.node, cfg.vgpus)
        self.tasks.append(task)
        self._push(task.end_ms, COMPLETE, task)

    def _on_complete(self, task: Task, t: float):
        node = self.cluster.nodes[task.node]
        node.release(task.config, task.task_id)
        node.mark_warm(task.fn_id, task.config.vgpus, t, t + self.settings.keep_alive_ms)
        app = self.apps[task.app_id]
        for j in task.jobs:
            job = self.jobs[j.job_id]
            job.done.add(task.fn_id)
            if task.fn_id == app.exit:
                job.end_ms = t
            for nxt in app.successors(task.fn_id):
                preds = app.predecessors(nxt)
                if nxt not in job.stages and all(p in job.done for p in preds):
                    job.stages[nxt] = StageRecord(nxt, t)
                    pred_nodes = tuple(job.stages[p].node for p in preds)
                    self.controller.enqueue(StageJob(job.job_id, app.id, nxt, job.arrival_ms, t, pred_nodes), False)
        self.request_tick(t)


def run(apps, profiles, scheduler, arrivals, settings: SimSettings | None = None, seed: int = 0) -> SimTrace:
    return Simulator(apps, profiles, scheduler, settings, seed).run(arrivals)
