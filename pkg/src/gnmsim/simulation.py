"""One replication: a job group submitted to one local scheduler's nodes,
driven through the event loop until every task is settled."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import gnm
from .domain import Scenario, TaskState
from .engine import EventKind, RngStream, Simulator
from .scheduling import BASELINE, GNM, LocalScheduler, MetaScheduler, ReIterated
from .workload import Population, build_jobs, build_population, local_load_trace

log = logging.getLogger(__name__)

_PROGRESS_KIND = {"finish": EventKind.TASK_FINISH, "fail": EventKind.TASK_FAIL,
                  "deadline": EventKind.DEADLINE_CHECK}


@dataclass
class RunLog:
    """Everything a replication produced; metrics are computed from this alone."""

    policy: str
    ls_id: str
    group: str
    rep: int
    seed: int
    round_period_s: float
    tickets: list = field(default_factory=list)
    allocations: list = field(default_factory=list)
    ls_log: list = field(default_factory=list)
    announcements: list = field(default_factory=list)
    events_processed: int = 0
    node_records: dict = field(default_factory=dict)


def replication_seed(base_seed: int, rep: int) -> int:
    return (int(base_seed) * 1_000_003 + rep) & 0xFFFFFFFFFFFFFFFF


class GridRun:
    def __init__(self, scenario: Scenario, ls_id: str, group: str, seed: int,
                 policy: str = GNM, population: Optional[Population] = None,
                 trace: Optional[Callable[[dict], None]] = None, rep: int = 0,
                 keep_records: bool = False):
        self.scenario = scenario
        self.params = scenario.params
        self.ls_spec = scenario.ls(ls_id)
        self.group = scenario.group(group)
        self.seed = seed
        self.rep = rep
        self.policy = policy
        self.keep_records = keep_records
        pop = population.clone() if population is not None else \
            build_population(self.ls_spec, seed, self.params)
        self.nodes = {n.node_id: n for n in pop.nodes}
        self._initial_ann = {n.node_id: len(n.announcements) for n in pop.nodes}
        self.sim = Simulator(trace)
        self.ls = LocalScheduler(ls_id, self.nodes, policy, RngStream(seed, f"ls:{ls_id}"))
        self.meta = MetaScheduler({ls_id: self.ls})
        self._start_at: dict = {}
        self._tick_at: dict = {}
        self._round_scheduled = False

        s = self.sim
        s.on(EventKind.JOB_SUBMITTED, self._on_submit)
        s.on(EventKind.SCHEDULING_ROUND, self._on_round)
        s.on(EventKind.TASK_START, self._on_start)
        s.on(EventKind.TASK_FINISH, self._on_progress)
        s.on(EventKind.TASK_FAIL, self._on_progress)
        s.on(EventKind.DEADLINE_CHECK, self._on_progress)
        s.on(EventKind.URGENT_CHANGE, self._on_urgent)
        s.on(EventKind.LOCAL_LOAD_CHANGE, self._on_release)
        s.on(EventKind.ANNOUNCE_TICK, self._on_tick)

    @property
    def horizon_s(self) -> float:
        return self.group.deadline_s + 2 * self.params.round_period_s

    def run(self) -> RunLog:
        p = self.params
        self.sim.schedule(0.0, EventKind.JOB_SUBMITTED, {"group": self.group.name,
                                                         "ls": self.ls_spec.ls_id})
        for node_id in self.nodes:
            rng = RngStream(self.seed, f"load:{node_id}")
            for start, end in local_load_trace(node_id, rng, self.horizon_s,
                                               p.burst_mean_interval_s, p.burst_min_s,
                                               p.burst_max_s):
                self.sim.schedule(start, EventKind.URGENT_CHANGE,
                                  {"node": node_id, "until": end})
                self.sim.schedule(end, EventKind.LOCAL_LOAD_CHANGE, {"node": node_id})
        for node in self.nodes.values():
            self._watch(node)
        self.sim.run_until(self.horizon_s)
        for t in self.ls.tickets.values():
            if t.status in ("pending", "dispatched"):
                raise RuntimeError(f"task {t.task.task_id} unsettled at end of run")
        return self._log()

    # -- handlers -------------------------------------------------------------

    def _on_submit(self, ev):
        self.meta.submit_job_group(self.group, self.ls_spec.ls_id, self.sim.now,
                                   build_jobs(self.group))
        self._schedule_round(self.sim.now)

    def _schedule_round(self, t):
        if not self._round_scheduled:
            self._round_scheduled = True
            self.sim.schedule(t, EventKind.SCHEDULING_ROUND)

    def _on_round(self, ev):
        self._round_scheduled = False
        now = self.sim.now
        for alloc in self.ls.run_round(now):
            self._dispatched(alloc)
        self._abort_failed_jobs()
        if self.ls.pending:
            self._schedule_round(now + self.params.round_period_s)

    def _dispatched(self, alloc):
        node = self.nodes[alloc.node_id]
        qt = node.find(alloc.task_id)
        alloc.transfer_s = qt.transfer_s
        self.sim.schedule(max(self.sim.now, qt.abs_deadline_s), EventKind.DEADLINE_CHECK,
                          {"ticket": alloc.task_id, "attempt": alloc.attempt_number})
        self._watch(node)
        self._kick(node)

    def _kick(self, node):
        now = self.sim.now
        t = gnm.next_start_time(node, now)
        if t is None:
            return
        if self._start_at.get(node.node_id) == t:
            return
        self._start_at[node.node_id] = t
        self.sim.schedule(t, EventKind.TASK_START, {"node": node.node_id, "at": t})

    def _on_start(self, ev):
        node = self.nodes[ev.payload["node"]]
        if self._start_at.get(node.node_id) != ev.payload["at"]:
            return
        del self._start_at[node.node_id]
        now = self.sim.now
        t = gnm.next_start_time(node, now)
        if t is None:
            return
        if t > now:
            self._kick(node)
            return
        qt = gnm.start_task(node, now)
        alloc = self.ls.tickets[qt.task.task_id].current
        alloc.started_at_s = now
        if gnm.doomed(node, qt, now):
            self._settle(node, qt.task.task_id, TaskState.FAIL)
            return
        self._schedule_progress(node, qt)

    def _schedule_progress(self, node, qt):
        t, kind = gnm.next_progress(qt, self.sim.now)
        self.sim.schedule(t, _PROGRESS_KIND[kind],
                          {"node": node.node_id, "task": qt.task.task_id, "v": qt.version})

    def _on_progress(self, ev):
        if "ticket" in ev.payload:
            self._on_ticket_deadline(ev)
            return
        node = self.nodes[ev.payload["node"]]
        qt = node.running()
        if qt is None or qt.task.task_id != ev.payload["task"] or qt.version != ev.payload["v"]:
            return
        now = self.sim.now
        if ev.kind is EventKind.TASK_FINISH:
            outcome = TaskState.SUCCESS
        elif ev.kind is EventKind.TASK_FAIL:
            outcome = TaskState.FAIL
        else:
            qt.advance(now)
            if qt.remaining_mi() <= 1e-9 * qt.task.length_mi and qt.fail_at_mi is None:
                outcome = TaskState.SUCCESS
            else:
                outcome = TaskState.FAIL
        self._settle(node, qt.task.task_id, outcome)

    def _on_ticket_deadline(self, ev):
        """A task still queued at its deadline is cancelled by the scheduler."""
        ticket = self.ls.tickets[ev.payload["ticket"]]
        alloc = ticket.current
        if alloc is None or alloc.attempt_number != ev.payload["attempt"]:
            return
        node = self.nodes[alloc.node_id]
        qt = node.find(alloc.task_id)
        if qt.state is not TaskState.WAIT:
            return
        self._settle(node, alloc.task_id, TaskState.ABORTED)

    def _settle(self, node, task_id, outcome):
        now = self.sim.now
        gnm.complete_task(node, task_id, outcome, now)
        result = self.ls.task_finished(task_id, node.node_id, outcome, now)
        if isinstance(result, ReIterated):
            self._dispatched(result.allocation)
        self._abort_failed_jobs()
        self._watch(node)
        self._kick(node)

    def _abort_failed_jobs(self):
        if not self.params.abort_on_job_failure:
            return
        now = self.sim.now
        for ticket in list(self.ls.tickets.values()):
            if ticket.status not in ("pending", "dispatched"):
                continue
            if not self.ls.job_failed(ticket.job.job_id):
                continue
            alloc = ticket.current
            if alloc is None:
                self.ls.pending.remove(ticket)
                self.ls._give_up(ticket, now, "Aborted")
                continue
            node = self.nodes[alloc.node_id]
            was_running = node.running() is not None and \
                node.running().task.task_id == ticket.task.task_id
            gnm.complete_task(node, ticket.task.task_id, TaskState.ABORTED, now)
            self.ls.task_finished(ticket.task.task_id, node.node_id, TaskState.ABORTED, now)
            if was_running:
                self._kick(node)

    def _watch(self, node):
        """Re-announce a non-accepting node when its horizon arrives."""
        ann = node.last_announcement
        if ann is None or ann.accepting:
            return
        t = max(self.sim.now, ann.non_accept_until_s)
        if self._tick_at.get(node.node_id) == t:
            return
        self._tick_at[node.node_id] = t
        self.sim.schedule(t, EventKind.ANNOUNCE_TICK, {"node": node.node_id, "at": t})

    def _on_tick(self, ev):
        node = self.nodes[ev.payload["node"]]
        if self._tick_at.get(node.node_id) != ev.payload["at"]:
            return
        del self._tick_at[node.node_id]
        gnm.announce(node, self.sim.now)
        self._watch(node)

    def _on_urgent(self, ev):
        node = self.nodes[ev.payload["node"]]
        gnm.urgent_change(node, self.sim.now, ev.payload["until"])
        self._reschedule_running(node)
        self._watch(node)

    def _on_release(self, ev):
        node = self.nodes[ev.payload["node"]]
        if gnm.release_local_load(node, self.sim.now) is not None:
            self._reschedule_running(node)
            self._watch(node)

    def _reschedule_running(self, node):
        qt = node.running()
        if qt is not None:
            self._schedule_progress(node, qt)

    # -- results --------------------------------------------------------------

    def _log(self) -> RunLog:
        out = RunLog(self.policy, self.ls_spec.ls_id, self.group.name, self.rep, self.seed,
                     self.params.round_period_s)
        for t in self.ls.tickets.values():
            out.tickets.append({
                "task_id": t.task.task_id,
                "job_id": t.job.job_id,
                "submitted_at_s": t.submitted_at_s,
                "deadline_s": t.task.deadline_s,
                "abs_deadline_s": t.abs_deadline_s,
                "status": t.status,
                "finished_at_s": t.finished_at_s,
                "attempts": len(t.attempts),
                "fail_reason": t.fail_reason,
            })
        out.allocations = list(self.ls.allocations)
        out.ls_log = list(self.ls.log)
        for node_id, node in self.nodes.items():
            for ann in node.announcements[self._initial_ann[node_id]:]:
                out.announcements.append(ann.to_json())
            if self.keep_records:
                out.node_records[node_id] = list(node.records.cases)
        out.announcements.sort(key=lambda a: (a["issued_at_s"], a["node_id"]))
        out.events_processed = self.sim.processed
        return out


def run_replication(scenario: Scenario, ls_id: str, group: str, seed: int,
                    policy: str = GNM, population: Optional[Population] = None,
                    trace=None, rep: int = 0, keep_records: bool = False) -> RunLog:
    return GridRun(scenario, ls_id, group, seed, policy, population, trace, rep,
                   keep_records).run()


def run_experiment(scenario: Scenario, base_seed: int, reps: Optional[int] = None,
                   policies=(GNM, BASELINE), trace_factory=None,
                   keep_records: bool = False) -> list:
    """Every (policy, LS, group, replication) run, in a fixed order.

    Populations are built once per (LS, replication) and cloned per run.
    """
    reps = scenario.params.replications if reps is None else reps
    logs = []
    for ls in scenario.local_schedulers:
        for rep in range(reps):
            seed = replication_seed(base_seed, rep)
            pop = build_population(ls, seed, scenario.params)
            for group in scenario.job_groups:
                for policy in policies:
                    trace = trace_factory(policy, ls.ls_id, group.name, rep) \
                        if trace_factory else None
                    logs.append(run_replication(scenario, ls.ls_id, group.name, seed, policy,
                                                pop, trace, rep, keep_records))
    order = {p: i for i, p in enumerate(policies)}
    ls_order = {s.ls_id: i for i, s in enumerate(scenario.local_schedulers)}
    g_order = {g.name: i for i, g in enumerate(scenario.job_groups)}
    logs.sort(key=lambda l: (order[l.policy], g_order[l.group], ls_order[l.ls_id], l.rep))
    return logs
