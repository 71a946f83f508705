"""Scenario construction: node populations, job groups, local-load traces and
synthetic warm-up history."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import cbr, gnm
from .domain import (Job, JobGroupSpec, LocalSchedulerSpec, ModelParams, NodeSpec, Priority,
                     Task, TaskRecord, TaskState)
from .engine import Outcome, RngStream, sample_task_outcome

WARMUP_MIN_MI = 20000.0
WARMUP_MAX_MI = 80000.0
WARMUP_SPACING_S = 3600.0
BASE_LOAD_MAX = 0.3
PRIORITIES = (Priority.LOW, Priority.NORMAL, Priority.HIGH)


def draw_dependability(medium: float, spread: float, rng: RngStream) -> float:
    """Symmetric triangular draw centred on ``medium``, clamped to [0, 1]."""
    if spread <= 0:
        return medium
    value = rng.gen.triangular(medium - spread, medium, medium + spread)
    return float(min(1.0, max(0.0, value)))


def build_nodes(spec: LocalSchedulerSpec, rng: RngStream,
                params: ModelParams = ModelParams()) -> list:
    nodes = []
    for i in range(spec.node_count):
        nodes.append(NodeSpec(
            node_id=f"{spec.ls_id}-N{i:04d}",
            grid_mips=spec.gmips,
            total_ram_mb=params.total_ram_mb,
            dtr_base=params.dtr_base,
            dependability=draw_dependability(spec.medium_dependability,
                                             params.dependability_spread, rng),
            standard_price_alpha=rng.uniform(params.alpha_min, params.alpha_max)
            if params.alpha_max > params.alpha_min else params.alpha_min,
            price_tolerance_p=params.price_tolerance_p,
            local_scheduler_id=spec.ls_id,
        ))
    return nodes


def build_jobs(spec: JobGroupSpec, consumer_id: Optional[str] = None) -> list:
    """Split the group's tasks evenly over its jobs; the first
    ``total % jobs`` jobs take one extra task."""
    base, extra = divmod(spec.total_tasks, spec.job_count)
    jobs = []
    for j in range(spec.job_count):
        job_id = f"{spec.name}-J{j + 1}"
        n = base + (1 if j < extra else 0)
        tasks = tuple(Task(task_id=f"{job_id}-T{t + 1:03d}", job_id=job_id,
                           length_mi=spec.length_mi, memory_mb=spec.memory_mb,
                           deadline_s=spec.deadline_s)
                      for t in range(n))
        jobs.append(Job(job_id, consumer_id or f"C{j + 1}", tasks,
                        spec.reliability_weight, spec.completion_weight))
    return jobs


def synth_record(node: NodeSpec, rng: RngStream, index: int, depth: int,
                 jitter: float = 0.2) -> TaskRecord:
    """One past task pushed through the execution and failure model."""
    g = rng.gen
    length = float(math.exp(g.uniform(math.log(WARMUP_MIN_MI), math.log(WARMUP_MAX_MI))))
    memory = float(g.uniform(1.0, 8.0))
    exec_s = length / node.grid_mips
    waiting = int(g.integers(0, 4))
    wait_s = waiting * float(g.uniform(0.0, 1.0)) * exec_s
    dtr = node.dtr_base * float(g.uniform(1.0 - jitter, 1.0 + jitter))
    transfer = memory / dtr
    deadline = (transfer + wait_s + exec_s) * float(g.uniform(1.1, 2.5))
    priority = PRIORITIES[int(g.integers(0, 3))]
    cpu = float(g.uniform(0.0, 1.0))
    ram = node.total_ram_mb * float(g.uniform(0.5, 1.0))
    outcome = sample_task_outcome(node, rng)
    if outcome is Outcome.WILL_SUCCEED:
        spent, completion, state = exec_s, transfer + wait_s + exec_s, TaskState.SUCCESS
    else:
        spent, completion, state = rng.random() * exec_s, None, TaskState.FAIL
    return TaskRecord(
        task_id=f"{node.node_id}-H{index:05d}",
        cpu_load_at_submit=cpu,
        free_ram_at_submit_mb=ram,
        task_size_mi=length,
        priority=priority,
        waiting_grid_tasks=waiting,
        dtr_at_submit=dtr,
        final_state=state,
        start_time_s=-(depth - index) * WARMUP_SPACING_S,
        spent_time_s=spent,
        completion_time_s=completion,
        cost_price=node.standard_price_alpha * spent / 60.0,
        memory_mb=memory,
        deadline_s=deadline,
    )


def warmup_history(nodes: Sequence[gnm.NodeState], rng: Optional[RngStream] = None,
                   depth: int = 120, now_s: float = 0.0) -> None:
    """Give each node ``depth`` synthetic past records, then run its first RSA.

    Each node draws from its own stream (or ``rng`` when given), so a node's
    history does not depend on its neighbours.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    for node in nodes:
        stream = rng or RngStream(node.rng.seed, f"warmup:{node.node_id}")
        for i in range(depth):
            rec = synth_record(node.spec, stream, i, depth, node.params.dtr_jitter)
            cbr.retain(node.records, rec, node.rsa)
            if rec.final_state is TaskState.SUCCESS:
                node.n_success += 1
            else:
                node.n_fail += 1
        gnm.maybe_run_rsa(node, now_s)


def local_load_trace(node_id: str, rng: RngStream, horizon_s: float,
                     mean_interval_s: float = 14400.0, min_s: float = 300.0,
                     max_s: float = 1800.0, start_s: float = 0.0) -> list:
    """Poisson-arriving local bursts as merged, non-overlapping (start, end) spans."""
    if horizon_s <= 0:
        raise ValueError("horizon must be > 0")
    if not mean_interval_s or math.isinf(mean_interval_s):
        return []
    spans = []
    t = start_s
    while True:
        t += rng.exponential(mean_interval_s)
        if t >= start_s + horizon_s:
            break
        end = t + rng.uniform(min_s, max_s)
        if spans and t <= spans[-1][1]:
            spans[-1] = (spans[-1][0], max(spans[-1][1], end))
        else:
            spans.append((t, end))
    return spans


@dataclass
class Population:
    """The node set of one local scheduler, ready to simulate."""

    ls_spec: LocalSchedulerSpec
    seed: int
    nodes: list = field(default_factory=list)

    def clone(self) -> "Population":
        out = []
        for n in self.nodes:
            c = replace(n, grid_queue=[], records=n.records.copy(),
                        rsa=replace(n.rsa), announcements=list(n.announcements),
                        rng=_clone_rng(n.rng), on_announce=None)
            out.append(c)
        return Population(self.ls_spec, self.seed, out)


def _clone_rng(rng: RngStream) -> RngStream:
    c = RngStream.__new__(RngStream)
    c.seed, c.stream_id = rng.seed, rng.stream_id
    bg = np.random.PCG64()
    bg.state = rng.gen.bit_generator.state
    c.gen = np.random.Generator(bg)
    return c


def build_population(ls_spec: LocalSchedulerSpec, seed: int,
                     params: ModelParams = ModelParams()) -> Population:
    """Nodes with dependability, price, initial backlog, base load and warm-up
    history; a pure function of (spec, params, seed)."""
    build_rng = RngStream(seed, f"build:{ls_spec.ls_id}")
    specs = build_nodes(ls_spec, build_rng, params)
    nodes = []
    for spec in specs:
        rng = RngStream(seed, f"node:{spec.node_id}")
        backlog = (rng.exponential(ls_spec.queue_deadline_status_s)
                   if ls_spec.queue_deadline_status_s > 0 else 0.0)
        node = gnm.NodeState(spec=spec, params=params, base_load=rng.uniform(0.0, BASE_LOAD_MAX),
                             backlog_until_s=backlog, rng=rng)
        nodes.append(node)
    warmup_history(nodes, depth=params.warmup_depth)
    for node in nodes:
        gnm.announce(node, 0.0)
    return Population(ls_spec, seed, nodes)
