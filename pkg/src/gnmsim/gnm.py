"""Grid Node's Module: the per-node admission control, task queue, history
table, status announcer, urgent-change monitor and price adjuster."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

from . import cbr
from .domain import (ModelParams, NodeAnnouncement, NodeSpec, Prediction, Task,
                     TaskRecord, TaskState, transition)
from .engine import Outcome, RngStream, execution_time, sample_task_outcome
from .roughset import DecisionAttr, RsaState, analyze, mark_rsa_run, should_run_rsa

log = logging.getLogger(__name__)

EPS = 1e-9
RUNNING_CPU_SHARE = 0.5
BURST_RAM_SHARE = 0.25


class RejectReason(str, Enum):
    DEADLINE_INFEASIBLE = "DeadlineInfeasible"
    INSUFFICIENT_MEMORY = "InsufficientMemory"
    NOT_ACCEPTING = "NotAccepting"
    PREDICTED_FAIL = "PredictedFail"


@dataclass(frozen=True)
class Accept:
    prediction: Prediction
    offered_price: float
    static_finish_s: float


@dataclass(frozen=True)
class Reject:
    reason: RejectReason
    prediction: Optional[Prediction] = None


Decision = Union[Accept, Reject]


@dataclass
class QueuedTask:
    task: Task
    abs_deadline_s: float
    admitted_at_s: float
    ready_at_s: float
    transfer_s: float
    price: float
    prediction: Prediction
    snapshot: dict
    attempt: int = 1
    state: TaskState = TaskState.WAIT
    started_at_s: Optional[float] = None
    work_done_mi: float = 0.0
    rate_mips: float = 0.0
    last_update_s: float = 0.0
    fail_at_mi: Optional[float] = None
    version: int = 0

    def advance(self, now_s: float) -> None:
        if self.state is TaskState.RUNNING:
            self.work_done_mi += self.rate_mips * (now_s - self.last_update_s)
        self.last_update_s = now_s

    def remaining_mi(self) -> float:
        return max(0.0, self.task.length_mi - self.work_done_mi)


@dataclass
class NodeState:
    spec: NodeSpec
    params: ModelParams = field(default_factory=ModelParams)
    base_load: float = 0.0
    dtr_current: float = 0.0
    backlog_until_s: float = 0.0
    local_load_until_s: float = -math.inf
    accepting: bool = True
    grid_queue: list = field(default_factory=list)
    records: cbr.CaseBase = None
    matrices: Optional[dict] = None
    rsa: RsaState = field(default_factory=RsaState)
    rng: Optional[RngStream] = None
    n_success: int = 0
    n_fail: int = 0
    announcements: list = field(default_factory=list)
    on_announce: Optional[Callable[[NodeAnnouncement], None]] = None

    def __post_init__(self):
        if self.records is None:
            self.records = cbr.CaseBase(self.spec.node_id)
        if self.dtr_current <= 0:
            self.dtr_current = self.spec.dtr_base
        if self.rng is None:
            self.rng = RngStream(0, f"node:{self.spec.node_id}")

    @property
    def node_id(self) -> str:
        return self.spec.node_id

    # -- snapshot ----------------------------------------------------------

    def in_burst(self, now_s: float) -> bool:
        return now_s < self.local_load_until_s

    def effective_mips(self, now_s: float) -> float:
        factor = self.params.burst_mips_factor if self.in_burst(now_s) else 1.0
        return self.spec.grid_mips * factor

    def running(self) -> Optional[QueuedTask]:
        for qt in self.grid_queue:
            if qt.state is TaskState.RUNNING:
                return qt
        return None

    def waiting(self) -> list:
        return [qt for qt in self.grid_queue if qt.state is TaskState.WAIT]

    def cpu_load(self, now_s: float) -> float:
        load = self.base_load
        if self.running() is not None:
            load += RUNNING_CPU_SHARE
        if self.in_burst(now_s):
            load += 1.0 - self.params.burst_mips_factor
        return min(1.0, max(0.0, load))

    def free_ram_mb(self, now_s: float) -> float:
        used = sum(qt.task.memory_mb for qt in self.grid_queue)
        if self.in_burst(now_s):
            used += BURST_RAM_SHARE * self.spec.total_ram_mb
        return max(0.0, self.spec.total_ram_mb - used)

    def remaining_work_s(self, now_s: float) -> float:
        """Committed work ahead of a new arrival, at the nominal grid rate."""
        total = max(0.0, self.backlog_until_s - now_s)
        mips = self.spec.grid_mips
        for qt in self.grid_queue:
            if qt.state is TaskState.RUNNING:
                done = qt.work_done_mi + qt.rate_mips * (now_s - qt.last_update_s)
                total += max(0.0, qt.task.length_mi - done) / mips
            else:
                total += qt.task.length_mi / mips
        return total

    def find(self, task_id: str) -> QueuedTask:
        for qt in self.grid_queue:
            if qt.task.task_id == task_id:
                return qt
        raise KeyError(f"node {self.node_id} has no task {task_id!r}")

    def query_for(self, task: Task, now_s: float) -> cbr.QueryCase:
        return cbr.QueryCase(task.length_mi, task.memory_mb, task.priority, task.deadline_s,
                             self.cpu_load(now_s), self.free_ram_mb(now_s),
                             len(self.waiting()), self.dtr_current)

    def emit(self, ann: NodeAnnouncement) -> NodeAnnouncement:
        self.announcements.append(ann)
        if self.on_announce is not None:
            self.on_announce(ann)
        return ann

    @property
    def last_announcement(self) -> Optional[NodeAnnouncement]:
        return self.announcements[-1] if self.announcements else None


# -- statistics ---------------------------------------------------------------

def compute_success_ratio(records: Sequence[TaskRecord], prior: float = 1.0) -> float:
    """Successful over successful-plus-failed; aborted tasks do not count."""
    ns = nf = 0
    for r in records:
        if r.final_state is TaskState.SUCCESS:
            ns += 1
        elif r.final_state is TaskState.FAIL:
            nf += 1
    if ns + nf == 0:
        return prior
    return ns / (ns + nf)


def compute_act(records: Sequence[TaskRecord]) -> float:
    """Mean completion time of successful tasks; 0.0 when there are none."""
    total = 0.0
    n = 0
    for r in records:
        if r.final_state is TaskState.SUCCESS:
            total += r.completion_time_s
            n += 1
    return total / n if n else 0.0


def act_has_data(records: Sequence[TaskRecord]) -> bool:
    return any(r.final_state is TaskState.SUCCESS for r in records)


def _prior(node: NodeState) -> float:
    return 0.0 if node.params.pessimistic_prior else 1.0


def adjust_price(node: NodeState, now_s: float) -> float:
    """Offered price per minute, kept strictly inside (a(1-p), a(1+p)).

    Pressure averages queue fill (0 empty .. 1 full) with the recent success
    signal (-1 all failed .. 1 all succeeded).
    """
    alpha = node.spec.standard_price_alpha
    p = node.spec.price_tolerance_p
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"price tolerance {p} not in [0, 0.5]")
    if p == 0.0:
        return alpha
    fill = min(len(node.waiting()) / node.params.price_queue_capacity, 1.0)
    window = node.params.price_window
    recent = node.records.cases[-window:] if window > 0 else node.records.cases
    ratio = compute_success_ratio(recent, _prior(node))
    pressure = 0.5 * fill + 0.5 * (2.0 * ratio - 1.0)
    price = alpha * (1.0 + p * pressure)
    eps = EPS * alpha
    lo, hi = alpha * (1.0 - p) + eps, alpha * (1.0 + p) - eps
    if lo > hi:
        return alpha
    return min(max(price, lo), hi)


def price_bounds(spec: NodeSpec) -> tuple:
    a, p = spec.standard_price_alpha, spec.price_tolerance_p
    return (a * (1.0 - p), a * (1.0 + p))


def availability_horizon(node: NodeState, now_s: float) -> float:
    """Earliest time a nominal task (median historical size and deadline)
    would be deadline-feasible, given committed work and any local burst."""
    work = node.remaining_work_s(now_s)
    slack = 0.0
    hist = node.records.cases
    if hist:
        size = statistics.median(r.task_size_mi for r in hist)
        deadline = statistics.median(r.deadline_s for r in hist)
        slack = max(0.0, deadline - size / node.spec.grid_mips)
    horizon = max(now_s, now_s + work - slack)
    if node.in_burst(now_s):
        horizon = max(horizon, node.local_load_until_s)
    return horizon


def announce(node: NodeState, now_s: float, force_non_accepting: bool = False) -> NodeAnnouncement:
    hist = node.records.cases
    horizon = availability_horizon(node, now_s)
    accepting = horizon <= now_s and not node.in_burst(now_s) and not force_non_accepting
    if not accepting and horizon <= now_s:
        horizon = now_s + node.params.round_period_s
    node.accepting = accepting
    if hist:
        idle = sum(1.0 - r.cpu_load_at_submit for r in hist) / len(hist)
        ram = sum(r.free_ram_at_submit_mb for r in hist) / len(hist)
    else:
        idle, ram = 1.0 - node.cpu_load(now_s), node.free_ram_mb(now_s)
    ann = NodeAnnouncement(
        node_id=node.node_id,
        accepting=accepting,
        non_accept_until_s=horizon,
        success_ratio=compute_success_ratio(hist, _prior(node)),
        act_s=compute_act(hist),
        avg_cpu_idle=idle,
        avg_free_ram_mb=ram,
        offered_price=adjust_price(node, now_s),
        issued_at_s=now_s,
        price_bounds=price_bounds(node.spec),
    )
    return node.emit(ann)


# -- admission ----------------------------------------------------------------

def _decision_attr(reliability_weight: float, completion_weight: float) -> DecisionAttr:
    return (DecisionAttr.FINAL_STATUS if reliability_weight >= completion_weight
            else DecisionAttr.COMPLETION_TIME)


def evaluate_task(node: NodeState, task: Task, now_s: float, abs_deadline_s: Optional[float] = None,
                  transfer_s: Optional[float] = None, reliability_weight: float = 0.5,
                  completion_weight: float = 0.5) -> Decision:
    """Admission decision without side effects.

    Cheap capacity checks decide first; the CBR prediction is attached to the
    reply either way.
    """
    if abs_deadline_s is None:
        abs_deadline_s = now_s + task.deadline_s
    if transfer_s is None:
        transfer_s = task.size_units / node.dtr_current
    exec_s = execution_time(task, node.spec)
    earliest_start = now_s + transfer_s + node.remaining_work_s(now_s)
    static_finish = earliest_start + exec_s
    price = adjust_price(node, now_s)

    query = node.query_for(task, now_s)
    decision = _decision_attr(reliability_weight, completion_weight)
    training = cbr.retrieve(node.records, node.matrices, query, decision)
    prediction = cbr.predict(training.records, query, node.params.cbr_k,
                             fallback_completion_s=static_finish - now_s,
                             fallback_cost=price * exec_s / 60.0)

    if not node.accepting or node.in_burst(now_s):
        return Reject(RejectReason.NOT_ACCEPTING, prediction)
    if task.memory_mb > node.free_ram_mb(now_s):
        return Reject(RejectReason.INSUFFICIENT_MEMORY, prediction)
    if static_finish > abs_deadline_s + EPS:
        return Reject(RejectReason.DEADLINE_INFEASIBLE, prediction)
    if (prediction.predicted_state is TaskState.FAIL
            and prediction.confidence >= node.params.predicted_fail_threshold):
        return Reject(RejectReason.PREDICTED_FAIL, prediction)
    return Accept(prediction, price, static_finish)


def admit_task(node: NodeState, task: Task, now_s: float, abs_deadline_s: Optional[float] = None,
               reliability_weight: float = 0.5, completion_weight: float = 0.5,
               attempt: int = 1, announce_after: bool = True) -> Decision:
    """Admit ``task`` into the node's queue or reject it.

    The dispatch transfer is drawn here from the node's perturbed rate, so
    the admission check uses the delay the task will actually see.
    """
    if abs_deadline_s is None:
        abs_deadline_s = now_s + task.deadline_s
    jitter = node.params.dtr_jitter
    dtr = node.spec.dtr_base * (node.rng.uniform(1.0 - jitter, 1.0 + jitter) if jitter else 1.0)
    transfer_s = task.size_units / dtr
    snapshot = {
        "cpu_load_at_submit": node.cpu_load(now_s),
        "free_ram_at_submit_mb": node.free_ram_mb(now_s),
        "waiting_grid_tasks": len(node.waiting()),
        "dtr_at_submit": dtr,
    }
    result = evaluate_task(node, task, now_s, abs_deadline_s, transfer_s,
                           reliability_weight, completion_weight)
    if isinstance(result, Accept):
        node.dtr_current = dtr
        assert result.static_finish_s <= abs_deadline_s + EPS
        node.grid_queue.append(QueuedTask(
            task=task, abs_deadline_s=abs_deadline_s, admitted_at_s=now_s,
            ready_at_s=now_s + transfer_s, transfer_s=transfer_s, price=result.offered_price,
            prediction=result.prediction, snapshot=snapshot, attempt=attempt,
            last_update_s=now_s))
        if announce_after:
            announce(node, now_s)
    return result


def force_enqueue(node: NodeState, task: Task, now_s: float, abs_deadline_s: float,
                  attempt: int = 1) -> QueuedTask:
    """Queue a task with no admission control (used by the naive baseline)."""
    jitter = node.params.dtr_jitter
    dtr = node.spec.dtr_base * (node.rng.uniform(1.0 - jitter, 1.0 + jitter) if jitter else 1.0)
    transfer_s = task.size_units / dtr
    exec_s = execution_time(task, node.spec)
    snapshot = {
        "cpu_load_at_submit": node.cpu_load(now_s),
        "free_ram_at_submit_mb": node.free_ram_mb(now_s),
        "waiting_grid_tasks": len(node.waiting()),
        "dtr_at_submit": dtr,
    }
    node.dtr_current = dtr
    price = adjust_price(node, now_s)
    qt = QueuedTask(task=task, abs_deadline_s=abs_deadline_s, admitted_at_s=now_s,
                    ready_at_s=now_s + transfer_s, transfer_s=transfer_s, price=price,
                    prediction=Prediction(TaskState.SUCCESS, transfer_s + exec_s,
                                          price * exec_s / 60.0, 0.0),
                    snapshot=snapshot, attempt=attempt, last_update_s=now_s)
    node.grid_queue.append(qt)
    return qt


# -- execution ----------------------------------------------------------------

def next_start_time(node: NodeState, now_s: float) -> Optional[float]:
    """When the head of the queue can start, or None if nothing can."""
    if node.running() is not None:
        return None
    waiting = node.waiting()
    if not waiting:
        return None
    return max(now_s, waiting[0].ready_at_s, node.backlog_until_s)


def start_task(node: NodeState, now_s: float) -> QueuedTask:
    """Move the head Wait task to Running and draw its fate.

    A task that can no longer meet its deadline at the nominal rate is
    started and failed at once rather than burning CPU.
    """
    qt = node.waiting()[0]
    qt.state = transition(qt.state, TaskState.RUNNING)
    qt.started_at_s = now_s
    qt.last_update_s = now_s
    qt.rate_mips = node.effective_mips(now_s)
    outcome = sample_task_outcome(node.spec, node.rng)
    if outcome is Outcome.WILL_FAIL:
        qt.fail_at_mi = node.rng.random() * qt.task.length_mi
    return qt


def doomed(node: NodeState, qt: QueuedTask, now_s: float) -> bool:
    return now_s + qt.remaining_mi() / node.spec.grid_mips > qt.abs_deadline_s + EPS


def next_progress(qt: QueuedTask, now_s: float) -> tuple:
    """(time, kind) of the running task's next milestone: finish, fail or deadline."""
    target = qt.fail_at_mi if qt.fail_at_mi is not None else qt.task.length_mi
    t = now_s + max(0.0, target - qt.work_done_mi) / qt.rate_mips
    if qt.abs_deadline_s < t - EPS:
        return qt.abs_deadline_s, "deadline"
    return t, ("fail" if qt.fail_at_mi is not None else "finish")


def set_rate(node: NodeState, now_s: float) -> Optional[QueuedTask]:
    """Re-integrate the running task's progress and apply the current rate."""
    qt = node.running()
    if qt is None:
        return None
    qt.advance(now_s)
    qt.rate_mips = node.effective_mips(now_s)
    qt.version += 1
    return qt


def complete_task(node: NodeState, task_id: str, outcome: TaskState, now_s: float,
                  announce_after: bool = True) -> TaskRecord:
    """Finalize a task: write its record, retain it, maybe rerun the RSA."""
    qt = node.find(task_id)
    outcome = TaskState(outcome)
    if outcome is TaskState.SUCCESS and now_s > qt.abs_deadline_s + EPS:
        raise ValueError(f"task {task_id} cannot succeed after its deadline")
    qt.advance(now_s)
    qt.state = transition(qt.state, outcome)
    node.grid_queue.remove(qt)
    spent = None if qt.started_at_s is None else now_s - qt.started_at_s
    rec = TaskRecord(
        task_id=task_id,
        task_size_mi=qt.task.length_mi,
        priority=qt.task.priority,
        final_state=outcome,
        start_time_s=qt.started_at_s,
        spent_time_s=spent,
        completion_time_s=(now_s - qt.admitted_at_s) if outcome is TaskState.SUCCESS else None,
        cost_price=None if spent is None else qt.price * spent / 60.0,
        memory_mb=qt.task.memory_mb,
        deadline_s=qt.task.deadline_s,
        **qt.snapshot,
    )
    retain(node, rec, now_s)
    if announce_after:
        announce(node, now_s)
    return rec


def retain(node: NodeState, rec: TaskRecord, now_s: float) -> None:
    cbr.retain(node.records, rec, node.rsa)
    if rec.final_state is TaskState.SUCCESS:
        node.n_success += 1
    elif rec.final_state is TaskState.FAIL:
        node.n_fail += 1
    maybe_run_rsa(node, now_s)


def maybe_run_rsa(node: NodeState, now_s: float) -> bool:
    p = node.params
    if not node.records.cases or not should_run_rsa(node.rsa, now_s, p.rsa_new_fraction,
                                                    p.rsa_min_interval_s):
        return False
    node.matrices = analyze(node.records.cases, now_s, p.rsa_bins, p.rsa_discretization)
    mark_rsa_run(node.rsa, now_s)
    node.records.masks(node.matrices[DecisionAttr.FINAL_STATUS].discretizer)
    log.debug("node %s rebuilt rule matrices from %d records", node.node_id, len(node.records))
    return True


def urgent_change(node: NodeState, now_s: float, until_s: float) -> NodeAnnouncement:
    """Local processes took over the node: stop accepting and say so at once."""
    if node.in_burst(now_s):
        node.local_load_until_s = max(node.local_load_until_s, until_s)
    else:
        node.local_load_until_s = until_s
    set_rate(node, now_s)
    return announce(node, now_s, force_non_accepting=True)


def release_local_load(node: NodeState, now_s: float) -> Optional[NodeAnnouncement]:
    """Back to normal after a burst; re-announce with a fresh computation."""
    if node.in_burst(now_s):
        return None
    set_rate(node, now_s)
    return announce(node, now_s)


def success_ratio_incremental(node: NodeState) -> float:
    total = node.n_success + node.n_fail
    return node.n_success / total if total else _prior(node)
