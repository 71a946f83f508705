import pytest

from gnmsim.domain import ModelParams, NodeSpec, Priority, Task, TaskRecord, TaskState
from gnmsim.engine import RngStream
from gnmsim.gnm import NodeState


def make_record(i=0, state=TaskState.SUCCESS, completion=700.0, cpu=0.2, ram=1500.0,
                size=45500.0, priority=Priority.NORMAL, waiting=0, dtr=1.0, cost=10.0,
                memory=2.0, deadline=1200.0, spent=None):
    if state is not TaskState.SUCCESS:
        completion = None
    if spent is None:
        spent = completion if completion is not None else 100.0
    return TaskRecord(
        task_id=f"R{i:04d}", cpu_load_at_submit=cpu, free_ram_at_submit_mb=ram,
        task_size_mi=size, priority=priority, waiting_grid_tasks=waiting, dtr_at_submit=dtr,
        final_state=state, start_time_s=0.0, spent_time_s=spent, completion_time_s=completion,
        cost_price=cost, memory_mb=memory, deadline_s=deadline)


def make_spec(node_id="N1", mips=65.0, dependability=0.9, alpha=10.0, p=0.2, ram=2048.0):
    return NodeSpec(node_id=node_id, grid_mips=mips, total_ram_mb=ram, dtr_base=1.0,
                    dependability=dependability, standard_price_alpha=alpha,
                    price_tolerance_p=p, local_scheduler_id="LS1")


def make_node(node_id="N1", mips=65.0, dependability=0.9, alpha=10.0, p=0.2, seed=1,
              params=None, **kw):
    params = params or ModelParams(dtr_jitter=0.0)
    return NodeState(spec=make_spec(node_id, mips, dependability, alpha, p), params=params,
                     rng=RngStream(seed, f"node:{node_id}"), **kw)


def make_task(task_id="T1", length=45500.0, memory=1.93, deadline=1200.0, job_id="J1"):
    return Task(task_id=task_id, job_id=job_id, length_mi=length, memory_mb=memory,
                deadline_s=deadline)


@pytest.fixture
def node():
    return make_node()


@pytest.fixture
def task():
    return make_task()


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
