"""Local schedulers (sealed-bid dispatch auctions and failure re-iteration)
and the meta-scheduler that routes job groups to them."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from . import gnm
from .domain import Job, JobGroupSpec, NodeAnnouncement, Prediction, Task, TaskState
from .engine import RngStream, execution_time

log = logging.getLogger(__name__)

GNM = "gnm"
BASELINE = "baseline"
POLICIES = (GNM, BASELINE)


@dataclass(frozen=True)
class Bid:
    node_id: str
    announcement: Optional[NodeAnnouncement]
    prediction: Optional[Prediction]
    admitted: bool
    reason: Optional[str] = None

    def __post_init__(self):
        if self.admitted and self.prediction is None:
            raise ValueError("an admitted bid needs a prediction")


@dataclass
class AllocationRecord:
    task_id: str
    job_id: str
    node_id: str
    attempt_number: int
    dispatched_at_s: float
    prediction: Optional[Prediction] = None
    outcome: Optional[TaskState] = None
    finished_at_s: Optional[float] = None
    resolution: Optional[str] = None  # ReIterated / GivenUp after a failure
    transfer_s: Optional[float] = None
    started_at_s: Optional[float] = None

    def __post_init__(self):
        if self.attempt_number < 1:
            raise ValueError("attempt_number starts at 1")

    @property
    def pending(self) -> bool:
        return self.outcome is None


@dataclass(frozen=True)
class ReIterated:
    allocation: AllocationRecord


@dataclass(frozen=True)
class GivenUp:
    task_id: str
    reason: str


@dataclass
class TaskTicket:
    """Scheduler-side life of one task across attempts."""

    task: Task
    job: Job
    submitted_at_s: float
    abs_deadline_s: float
    attempts: list = field(default_factory=list)
    excluded: set = field(default_factory=set)
    status: str = "pending"      # pending, dispatched, success, failed
    finished_at_s: Optional[float] = None
    fail_reason: Optional[str] = None

    @property
    def current(self) -> Optional[AllocationRecord]:
        return self.attempts[-1] if self.attempts and self.attempts[-1].pending else None


def score(bid: Bid, reliability_weight: float, completion_weight: float,
          deadline_s: float) -> float:
    ratio = bid.announcement.success_ratio if bid.announcement is not None else 1.0
    return (reliability_weight * ratio
            + completion_weight * (1.0 - bid.prediction.predicted_completion_s / deadline_s))


def rank_candidates(bids: Sequence[Bid], job: Job, deadline_s: Optional[float] = None) -> list:
    """Admitted node ids, best first.

    Score blends the node's announced success ratio with predicted completion
    relative to the deadline, using the job's weights. Ties go to the lower
    offered price, then the lower node id.
    """
    if deadline_s is None:
        deadline_s = job.tasks[0].deadline_s
    keyed = []
    for b in bids:
        if not b.admitted:
            continue
        price = b.announcement.offered_price if b.announcement is not None else 0.0
        s = score(b, job.reliability_weight, job.completion_weight, deadline_s)
        keyed.append((-s, price, b.node_id))
    keyed.sort()
    return [node_id for _, _, node_id in keyed]


class LocalScheduler:
    """Manages a pool of nodes and dispatches tasks to them.

    ``policy`` is ``"gnm"`` (node-side admission and CBR predictions drive a
    sealed-bid auction) or ``"baseline"`` (a random node is picked and always
    takes the task).
    """

    def __init__(self, ls_id: str, nodes: Mapping[str, gnm.NodeState], policy: str = GNM,
                 rng: Optional[RngStream] = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.ls_id = ls_id
        self.nodes = dict(sorted(nodes.items()))
        self.policy = policy
        self.rng = rng or RngStream(0, f"ls:{ls_id}")
        self.announcements: dict = {}
        self.tickets: dict = {}
        self.pending: list = []
        self.allocations: list = []
        self.log: list = []
        self.max_mips = max(n.spec.grid_mips for n in self.nodes.values())
        for node in self.nodes.values():
            node.on_announce = self._receive
            if node.last_announcement is not None:
                self.announcements[node.node_id] = node.last_announcement

    def _receive(self, ann: NodeAnnouncement) -> None:
        self.announcements[ann.node_id] = ann

    # -- submission -----------------------------------------------------------

    def submit(self, job: Job, now_s: float) -> list:
        out = []
        for task in job.tasks:
            t = TaskTicket(task, job, now_s, now_s + task.deadline_s)
            self.tickets[task.task_id] = t
            self.pending.append(t)
            out.append(t)
        return out

    def dispatch_job(self, job: Job, now_s: float) -> list:
        """Submit ``job`` and run one dispatch round for it."""
        if job.tasks[0].task_id not in self.tickets:
            self.submit(job, now_s)
        return self.run_round(now_s, only_job=job.job_id)

    # -- auction --------------------------------------------------------------

    def collect_bids(self, ticket: TaskTicket, now_s: float, exclude=()) -> list:
        bids = []
        t = ticket.task
        job = ticket.job
        for node_id, node in self.nodes.items():
            if node_id in exclude or node_id in ticket.excluded:
                continue
            res = gnm.evaluate_task(node, t, now_s, ticket.abs_deadline_s, None,
                                    job.reliability_weight, job.completion_weight)
            admitted = isinstance(res, gnm.Accept)
            bids.append(Bid(node_id, self.announcements.get(node_id), res.prediction, admitted,
                            None if admitted else res.reason.value))
        return bids

    def _dispatch(self, ticket: TaskTicket, node_id: str, now_s: float, attempt: int,
                  prediction: Optional[Prediction]) -> AllocationRecord:
        alloc = AllocationRecord(ticket.task.task_id, ticket.job.job_id, node_id, attempt,
                                 now_s, prediction)
        ticket.attempts.append(alloc)
        ticket.status = "dispatched"
        self.allocations.append(alloc)
        return alloc

    def _auction(self, ticket: TaskTicket, now_s: float, busy: set, attempt: int,
                 bids: Optional[list] = None) -> Optional[AllocationRecord]:
        if self.policy == BASELINE:
            free = [n for n in self.nodes if n not in busy and n not in ticket.excluded]
            if not free:
                return None
            node_id = free[int(self.rng.gen.integers(len(free)))]
            gnm.force_enqueue(self.nodes[node_id], ticket.task, now_s,
                              ticket.abs_deadline_s, attempt)
            return self._dispatch(ticket, node_id, now_s, attempt, None)

        if bids is None:
            bids = self.collect_bids(ticket, now_s, busy)
        remaining = ticket.abs_deadline_s - now_s
        for node_id in rank_candidates(bids, ticket.job, remaining):
            res = gnm.admit_task(self.nodes[node_id], ticket.task, now_s, ticket.abs_deadline_s,
                                 ticket.job.reliability_weight, ticket.job.completion_weight,
                                 attempt)
            if isinstance(res, gnm.Accept):
                return self._dispatch(ticket, node_id, now_s, attempt, res.prediction)
        return None

    def _expired(self, ticket: TaskTicket, now_s: float) -> bool:
        return now_s + ticket.task.length_mi / self.max_mips > ticket.abs_deadline_s

    def run_round(self, now_s: float, only_job: Optional[str] = None) -> list:
        """One dispatch round: each pending task goes to its best admitting
        node, at most one task per node."""
        busy: set = set()
        dispatched = []
        still = []
        bid_cache: dict = {}
        for ticket in self.pending:
            if only_job is not None and ticket.job.job_id != only_job:
                still.append(ticket)
                continue
            if self._expired(ticket, now_s):
                self._give_up(ticket, now_s, "Unallocatable")
                continue
            bids = None
            if self.policy == GNM:
                key = (ticket.task.length_mi, ticket.task.memory_mb, ticket.task.priority,
                       ticket.task.deadline_s, ticket.abs_deadline_s,
                       ticket.job.reliability_weight, frozenset(ticket.excluded))
                if key not in bid_cache:
                    bid_cache[key] = self.collect_bids(ticket, now_s)
                bids = [b for b in bid_cache[key] if b.node_id not in busy]
            alloc = self._auction(ticket, now_s, busy, len(ticket.attempts) + 1, bids)
            if alloc is None:
                still.append(ticket)
                self.log.append({"t": now_s, "event": "Pending", "task_id": ticket.task.task_id})
                continue
            busy.add(alloc.node_id)
            dispatched.append(alloc)
        self.pending = still
        return dispatched

    # -- outcomes -------------------------------------------------------------

    def _give_up(self, ticket: TaskTicket, now_s: float, reason: str, **extra) -> GivenUp:
        ticket.status = "failed"
        ticket.finished_at_s = now_s
        ticket.fail_reason = reason
        self.log.append({"t": now_s, "event": "GivenUp", "task_id": ticket.task.task_id,
                         "reason": reason, **extra})
        return GivenUp(ticket.task.task_id, reason)

    def task_finished(self, task_id: str, node_id: str, outcome: TaskState, now_s: float):
        """Record a node's result; failures go through :meth:`handle_failure`."""
        ticket = self.tickets[task_id]
        alloc = ticket.current
        if alloc is None or alloc.node_id != node_id:
            raise ValueError(f"task {task_id} is not running on {node_id}")
        alloc.outcome = outcome
        alloc.finished_at_s = now_s
        if outcome is TaskState.SUCCESS:
            ticket.status = "success"
            ticket.finished_at_s = now_s
            return None
        if outcome is TaskState.ABORTED:
            ticket.status = "failed"
            ticket.finished_at_s = now_s
            ticket.fail_reason = "Aborted"
            self.log.append({"t": now_s, "event": "Aborted", "task_id": task_id})
            return None
        return self.handle_failure(alloc, now_s)

    def handle_failure(self, alloc: AllocationRecord, now_s: float):
        """Re-run the auction without the faulted node if the remaining
        deadline budget covers the best predicted completion."""
        if alloc.outcome is not TaskState.FAIL:
            raise ValueError("re-iteration only follows a failure")
        ticket = self.tickets[alloc.task_id]
        ticket.excluded.add(alloc.node_id)
        budget = ticket.abs_deadline_s - now_s
        attempt = alloc.attempt_number + 1
        new = None
        need = None  # the completion time the budget was checked against
        if budget > 0:
            if self.policy == BASELINE:
                free = [n for n in self.nodes if n not in ticket.excluded]
                if free:
                    pick = free[int(self.rng.gen.integers(len(free)))]
                    need = (ticket.task.size_units / self.nodes[pick].dtr_current
                            + execution_time(ticket.task, self.nodes[pick].spec))
                    if budget >= need:
                        gnm.force_enqueue(self.nodes[pick], ticket.task, now_s,
                                          ticket.abs_deadline_s, attempt)
                        new = self._dispatch(ticket, pick, now_s, attempt, None)
            else:
                bids = self.collect_bids(ticket, now_s)
                admitted = [b for b in bids if b.admitted]
                if admitted:
                    need = min(b.prediction.predicted_completion_s for b in admitted)
                    if budget >= need:
                        new = self._auction(ticket, now_s, set(), attempt, bids)
        if new is None:
            alloc.resolution = "GivenUp"
            return self._give_up(ticket, now_s, "NoDeadlineBudget", budget_s=budget,
                                 needed_s=need)
        alloc.resolution = "ReIterated"
        self.log.append({"t": now_s, "event": "ReIterated", "task_id": alloc.task_id,
                         "from": alloc.node_id, "to": new.node_id, "attempt": attempt,
                         "budget_s": budget, "needed_s": need})
        return ReIterated(new)

    def job_failed(self, job_id: str) -> bool:
        return any(t.status == "failed" for t in self.tickets.values() if t.job.job_id == job_id)


@dataclass
class RunHandle:
    group: str
    ls_id: str
    submitted_at_s: float
    jobs: list


class MetaScheduler:
    """Routes job groups to the local scheduler a scenario binds them to."""

    def __init__(self, local_schedulers: Mapping[str, LocalScheduler]):
        self.local_schedulers = dict(local_schedulers)
        self.handles: list = []

    def submit_job_group(self, group: JobGroupSpec, target_ls: str, now_s: float,
                         jobs: Optional[list] = None) -> RunHandle:
        from .workload import build_jobs
        if target_ls not in self.local_schedulers:
            raise KeyError(f"unknown local scheduler {target_ls!r}")
        jobs = jobs if jobs is not None else build_jobs(group)
        ls = self.local_schedulers[target_ls]
        for job in jobs:
            ls.submit(job, now_s)
        handle = RunHandle(group.name, target_ls, now_s, jobs)
        self.handles.append(handle)
        return handle
