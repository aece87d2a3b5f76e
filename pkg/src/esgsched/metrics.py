"""Hit rates, cost objectives, latency percentiles and schedule validation."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import asdict, dataclass, fields

import numpy as np

from .cluster_sim import SimTrace
from .model import Pricing

MS_PER_HOUR = 3_600_000.0


@dataclass
class RunSummary:
    scope: str  # "all" or an application id
    jobs: int = 0
    tasks: int = 0
    slo_hit_count: int = 0
    slo_hit_rate: float = 0.0
    gamma: float = 0.0
    gamma_met: bool = True
    total_cost: float = 0.0
    weighted_cost: float = 0.0
    latency_p50_ms: float = 0.0
    latency_p95_ms: float = 0.0
    latency_p99_ms: float = 0.0
    mean_queue_wait_ms: float = 0.0
    cold_start_count: int = 0
    config_miss_rate: float = 0.0
    forced_count: int = 0
    search_mean_ms: float = 0.0
    search_p50_ms: float = 0.0
    search_p95_ms: float = 0.0
    search_p99_ms: float = 0.0

    COLUMNS = ()  # filled below

    def row(self) -> list:
        return [getattr(self, c) for c in self.COLUMNS]


RunSummary.COLUMNS = tuple(f.name for f in fields(RunSummary))


def task_cost(task, pricing: Pricing, until: float | None = None) -> tuple[float, float]:
    """(money, weighted) billed for ``task``.

    Billing runs from invocation (dispatch plus the scheduling overhead) to
    completion, so it covers input transfer, cold start and execution.
    """
    end = task.end_ms if until is None else min(task.end_ms, until)
    held = max(0.0, end - (task.dispatch_ms + task.search_ms))
    cfg = task.config
    money = (cfg.vcpus * pricing.vcpu_per_hour + cfg.vgpus * pricing.vgpu_per_hour) * held / MS_PER_HOUR
    weighted = (pricing.alpha * cfg.vcpus + pricing.beta * cfg.vgpus) * held
    return money, weighted


def _pct(values, q) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


def _summarize(scope, jobs, tasks, pricing, gamma, until) -> RunSummary:
    s = RunSummary(scope, jobs=len(jobs), tasks=len(tasks), gamma=gamma)
    s.slo_hit_count = sum(j.hit for j in jobs)
    s.slo_hit_rate = s.slo_hit_count / len(jobs) if jobs else 0.0
    s.gamma_met = s.slo_hit_rate >= gamma
    for t in tasks:
        money, weighted = task_cost(t, pricing, until)
        s.total_cost += money
        s.weighted_cost += weighted
    lat = [j.latency_ms for j in jobs if j.latency_ms is not None]
    s.latency_p50_ms, s.latency_p95_ms, s.latency_p99_ms = (_pct(lat, q) for q in (50, 95, 99))
    waits = [st.queue_wait_ms for j in jobs for st in j.stages.values() if st.task_id >= 0]
    s.mean_queue_wait_ms = float(np.mean(waits)) if waits else 0.0
    s.cold_start_count = sum(t.cold for t in tasks)
    s.config_miss_rate = sum(t.config_miss for t in tasks) / len(tasks) if tasks else 0.0
    s.forced_count = sum(t.forced for t in tasks)
    search = [t.search_ms for t in tasks]
    s.search_mean_ms = float(np.mean(search)) if search else 0.0
    s.search_p50_ms, s.search_p95_ms, s.search_p99_ms = (_pct(search, q) for q in (50, 95, 99))
    return s


def summarize(trace: SimTrace, pricing: Pricing | None = None, gamma: float = 0.0) -> tuple[RunSummary, dict[str, RunSummary]]:
    """Overall summary and one per application.

    Unfinished jobs count as misses; cost covers resources held up to the
    simulation stop time, if any.
    """
    pricing = pricing or Pricing()
    problems = [v for v in validate_schedule(trace) if v.startswith("job in two tasks")]
    if problems:
        raise ValueError("inconsistent trace: " + "; ".join(problems))
    until = trace.settings.max_time_ms
    jobs_by_app, tasks_by_app = defaultdict(list), defaultdict(list)
    for j in trace.jobs:
        jobs_by_app[j.app_id].append(j)
    for t in trace.tasks:
        tasks_by_app[t.app_id].append(t)
    overall = _summarize("all", trace.jobs, trace.tasks, pricing, gamma, until)
    per_app = {
        a: _summarize(a, jobs_by_app[a], tasks_by_app[a], pricing, gamma, until)
        for a in sorted(set(jobs_by_app) | set(tasks_by_app))
    }
    return overall, per_app


def validate_schedule(trace: SimTrace) -> list[str]:
    """Violations of job partition, node capacity and batch <= queue length; empty when valid."""
    out = []
    owner: dict[tuple[int, str], int] = {}
    for t in trace.tasks:
        if t.batch != t.config.batch:
            out.append(f"task {t.task_id}: runs {t.batch} jobs under batch size {t.config.batch}")
        if t.batch > t.queue_len:
            out.append(f"task {t.task_id}: batch {t.batch} exceeds queue length {t.queue_len}")
        for j in t.jobs:
            key = (j.job_id, t.fn_id)
            if key in owner:
                out.append(f"job in two tasks: job {j.job_id} stage {t.fn_id} in tasks {owner[key]} and {t.task_id}")
            else:
                owner[key] = t.task_id
    truncated = trace.settings.max_time_ms is not None
    for job in trace.jobs:
        for fn, st in job.stages.items():
            if (job.job_id, fn) not in owner and not truncated:
                out.append(f"job never scheduled: job {job.job_id} stage {fn}")
    s = trace.settings
    events = defaultdict(list)
    for t in trace.tasks:
        # releases sort before allocations at the same instant
        events[t.node].append((t.dispatch_ms, 1, t.config.vcpus, t.config.vgpus, t.task_id))
        events[t.node].append((t.end_ms, 0, -t.config.vcpus, -t.config.vgpus, t.task_id))
    for node in sorted(events):
        cpu = gpu = 0
        for when, _, dc, dg, tid in sorted(events[node]):
            cpu += dc
            gpu += dg
            if cpu > s.vcpus_per_node or gpu > s.vgpus_per_node:
                out.append(
                    f"capacity violation: node {node} at {when} ms holds {cpu} vCPU / {gpu} vGPU "
                    f"(capacity {s.vcpus_per_node} / {s.vgpus_per_node}) after task {tid}"
                )
    return out


def write_summary_csv(path, rows: list[RunSummary], extra: dict | None = None):
    """One line per summary; ``extra`` columns (e.g. a sweep value) come first."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*extra, *RunSummary.COLUMNS])
        for r in rows:
            w.writerow([*extra.values(), *_fmt_row(r)])


def _fmt_row(r: RunSummary) -> list:
    return [repr(v) if isinstance(v, float) else v for v in r.row()]


def as_dict(r: RunSummary) -> dict:
    return asdict(r)


def normalized_costs(costs: dict, baseline: str) -> dict:
    """Every scheduler's cost divided by the baseline's."""
    base = costs[baseline]
    if not base > 0:
        raise ValueError(f"baseline {baseline!r} has no cost to normalize by")
    return {k: v / base for k, v in costs.items()}
