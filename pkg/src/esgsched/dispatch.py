"""Controller loop and invoker selection.

The controller walks the application-function-wise (AFW) queues round robin,
asks the scheduler for a ranked list of configurations, and places the first
one some invoker can host. Queues that cannot be placed go to a recheck list;
after ``max_rounds`` failed rounds they are forced out at the minimum
configuration.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, NamedTuple

from .model import MIN_CONFIG, Configuration

if TYPE_CHECKING:
    from .cluster_sim import ClusterState

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def home_invoker(app_id: str, fn_id: str, n_nodes: int) -> int:
    """64-bit FNV-1a of ``"app_id/fn_id"`` (UTF-8) modulo the node count."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    return fnv1a_64(f"{app_id}/{fn_id}".encode("utf-8")) % n_nodes


@dataclass
class StageJob:
    """One job waiting at one stage of its application."""

    job_id: int
    app_id: str
    fn_id: str
    app_arrival_ms: float
    enqueued_ms: float
    pred_nodes: tuple[int, ...] = ()


class AfwQueue:
    def __init__(self, app_id: str, fn_id: str, is_entry: bool):
        self.key = (app_id, fn_id)
        self.is_entry = is_entry
        self.jobs: deque[StageJob] = deque()

    def push(self, job: StageJob):
        if self.jobs and job.enqueued_ms < self.jobs[-1].enqueued_ms:
            raise ValueError("jobs must enter an AFW queue in arrival order")
        self.jobs.append(job)

    def pop(self, n: int) -> tuple[StageJob, ...]:
        if not 1 <= n <= len(self.jobs):
            raise ValueError(f"cannot take {n} jobs from a queue of {len(self.jobs)}")
        return tuple(self.jobs.popleft() for _ in range(n))

    def head(self, n: int) -> list[StageJob]:
        return [self.jobs[i] for i in range(min(n, len(self.jobs)))]

    def __len__(self):
        return len(self.jobs)

    def __bool__(self):
        return bool(self.jobs)


class Decision(NamedTuple):
    candidates: tuple[Configuration, ...]  # best first
    search_ms: float = 0.0  # modeled scheduling overhead charged to the task
    planned_batch: int | None = None  # batch of a preplanned configuration, if any
    infeasible: bool = False  # no path met the budget; candidates are a fallback


@dataclass
class Task:
    task_id: int
    app_id: str
    fn_id: str
    jobs: tuple[StageJob, ...]
    config: Configuration
    node: int
    dispatch_ms: float
    search_ms: float
    queue_len: int
    planned_batch: int
    forced: bool = False
    cold: bool = False
    cold_ms: float = 0.0
    transfer_ms: float = 0.0
    exec_ms: float = 0.0
    start_ms: float = 0.0  # execution start
    end_ms: float = 0.0

    @property
    def batch(self) -> int:
        return len(self.jobs)

    @property
    def config_miss(self) -> bool:
        return self.planned_batch > self.queue_len


@dataclass
class RecheckEntry:
    key: tuple[str, str]
    rounds_waited: int = 0
    candidates: tuple[Configuration, ...] = ()
    planned_batch: int | None = None


def select_invoker(
    fn_id: str,
    cfg: Configuration,
    cluster: "ClusterState",
    preferred: int | None,
    now: float,
) -> int | None:
    """Preferred node, else a warm node, else the fitting node with most free vCPU+vGPU."""
    if cfg.vcpus > cluster.vcpu_capacity or cfg.vgpus > cluster.vgpu_capacity:
        raise ValueError(f"unschedulable configuration {cfg} (node capacity {cluster.vcpu_capacity} vCPU, {cluster.vgpu_capacity} vGPU)")
    nodes = cluster.nodes
    if preferred is not None and nodes[preferred].fits(cfg):
        return preferred
    fitting = [n for n in nodes if n.fits(cfg)]
    for n in fitting:
        if n.is_warm(fn_id, cfg, now):
            return n.index
    if not fitting:
        return None
    best = max(fitting, key=lambda n: (n.free_vcpus + n.free_vgpus, -n.index))
    return best.index


class Controller:
    """Round-robin scheduler loop over AFW queues; single-threaded and deterministic."""

    def __init__(
        self,
        scheduler,
        cluster: "ClusterState",
        launch: Callable[[Task, float], None],
        max_rounds: int = 3,
    ):
        self.scheduler = scheduler
        self.cluster = cluster
        self.launch = launch
        self.max_rounds = max_rounds
        self.queues: dict[tuple[str, str], AfwQueue] = {}
        self.recheck: dict[tuple[str, str], RecheckEntry] = {}
        self._order: list[tuple[str, str]] = []
        self._rr = 0
        self._next_task = 0

    def queue(self, app_id: str, fn_id: str, is_entry: bool) -> AfwQueue:
        key = (app_id, fn_id)
        q = self.queues.get(key)
        if q is None:
            q = self.queues[key] = AfwQueue(app_id, fn_id, is_entry)
            self._order = sorted(self.queues)
        return q

    def enqueue(self, job: StageJob, is_entry: bool):
        self.queue(job.app_id, job.fn_id, is_entry).push(job)

    @property
    def pending(self) -> int:
        return sum(len(q) for q in self.queues.values())

    def tick(self, now: float, include_recheck: bool = True) -> list[Task]:
        """One round: recheck entries first, then every other nonempty queue once."""
        tasks = []
        for key in list(self.recheck) if include_recheck else ():
            task = self._recheck(self.recheck[key], now)
            if task is not None:
                tasks.append(task)
        n = len(self._order)
        for i in range(n):
            key = self._order[(self._rr + i) % n]
            q = self.queues[key]
            if not q or key in self.recheck:
                continue
            d = self.scheduler.decide(q, now)
            task = self._place(q, d.candidates, d.search_ms, d.planned_batch, now)
            if task is not None:
                tasks.append(task)
            else:
                self.recheck[key] = RecheckEntry(key, 0, d.candidates, d.planned_batch)
        if n:
            self._rr = (self._rr + 1) % n
        return tasks

    def _recheck(self, entry: RecheckEntry, now: float) -> Task | None:
        q = self.queues[entry.key]
        if not q:
            del self.recheck[entry.key]
            return None
        task = self._place(q, entry.candidates, 0.0, entry.planned_batch, now)
        if task is None:
            # stored candidates are exhausted; search again with the current wait
            d = self.scheduler.decide(q, now)
            entry.candidates, entry.planned_batch = d.candidates, d.planned_batch
            task = self._place(q, d.candidates, d.search_ms, d.planned_batch, now)
        if task is None:
            entry.rounds_waited += 1
            if entry.rounds_waited >= self.max_rounds:
                task = self._place(q, (MIN_CONFIG,), 0.0, None, now, forced=True)
        if task is not None:
            del self.recheck[entry.key]
        return task

    def _preferred(self, q: AfwQueue) -> int:
        head = q.jobs[0]
        if q.is_entry or not head.pred_nodes:
            return home_invoker(head.app_id, head.fn_id, len(self.cluster.nodes))
        return head.pred_nodes[0]

    def _place(self, q, candidates: Iterable[Configuration], search_ms, planned_batch, now, forced=False):
        preferred = self._preferred(q)
        for cfg in candidates:
            if cfg.batch > len(q):
                raise AssertionError(f"batch {cfg.batch} exceeds queue length {len(q)} for {q.key}")
            node = select_invoker(q.key[1], cfg, self.cluster, preferred, now)
            if node is None:
                continue
            qlen = len(q)
            task = Task(
                self._next_task,
                q.key[0],
                q.key[1],
                q.pop(cfg.batch),
                cfg,
                node,
                now,
                float(search_ms),
                qlen,
                planned_batch if planned_batch is not None else cfg.batch,
                forced,
            )
            self._next_task += 1
            self.launch(task, now)
            return task
        return None
