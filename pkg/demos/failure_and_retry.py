"""A task fails mid-run and the local scheduler decides whether to retry it.

Two tasks fail on their first node: one early, with plenty of deadline left,
and one late, when no node could finish it in time. Run with
``python demos/failure_and_retry.py``.
"""

from gnmsim import gnm
from gnmsim.domain import Job, ModelParams, NodeSpec, Task, TaskState
from gnmsim.engine import RngStream
from gnmsim.scheduling import GNM, LocalScheduler


def make_pool(n):
    nodes = {}
    for i in range(n):
        spec = NodeSpec(node_id=f"N{i}", grid_mips=65.0, total_ram_mb=2048.0, dtr_base=1.0,
                        dependability=1.0, standard_price_alpha=10.0 + i,
                        price_tolerance_p=0.2, local_scheduler_id="LS1")
        node = gnm.NodeState(spec=spec, params=ModelParams(dtr_jitter=0.0),
                             rng=RngStream(i, f"node:N{i}"))
        gnm.announce(node, 0.0)
        nodes[spec.node_id] = node
    return LocalScheduler("LS1", nodes, GNM, RngStream(1, "ls:LS1"))


def fail_at(ls, job, now):
    task = job.tasks[0]
    first = ls.dispatch_job(job, 0.0)[0]
    print(f"{task.task_id} dispatched to {first.node_id}, deadline at {task.deadline_s:.0f} s")
    node = ls.nodes[first.node_id]
    gnm.start_task(node, 0.0)
    gnm.complete_task(node, task.task_id, TaskState.FAIL, now)
    result = ls.task_finished(task.task_id, first.node_id, TaskState.FAIL, now)
    print(f"  failed at {now:.0f} s, {task.deadline_s - now:.0f} s of budget left "
          f"against roughly 700 s of work")
    print(f"  -> {type(result).__name__}", end="")
    if hasattr(result, "allocation"):
        a = result.allocation
        print(f" on {a.node_id}, attempt {a.attempt_number}, predicted "
              f"{a.prediction.predicted_completion_s:.0f} s")
    else:
        print(f" ({result.reason})")


def job(job_id):
    task = Task(task_id=f"{job_id}-T001", job_id=job_id, length_mi=45500.0, memory_mb=1.93,
                deadline_s=1200.0)
    return Job(job_id, "C1", (task,), 0.5, 0.5)


fail_at(make_pool(3), job("early"), 200.0)
fail_at(make_pool(3), job("late"), 800.0)
