import dataclasses
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from gnmsim.domain import (IllegalTransition, Job, JobGroupSpec, LocalSchedulerSpec,
                           ModelParams, NodeAnnouncement, Scenario, ScenarioError,
                           TaskState, dumps_scenario, load_scenario, loads_scenario,
                           save_scenario, transition, validate_scenario)

from conftest import make_record, make_spec, make_task

LEGAL = {
    (TaskState.WAIT, TaskState.RUNNING),
    (TaskState.RUNNING, TaskState.SUCCESS),
    (TaskState.RUNNING, TaskState.FAIL),
    (TaskState.WAIT, TaskState.ABORTED),
    (TaskState.RUNNING, TaskState.ABORTED),
}

TABLE_LS = [
    LocalSchedulerSpec("LS1", 400, 65.0, 460.0, 0.72),
    LocalSchedulerSpec("LS2", 320, 140.0, 350.0, 0.93),
    LocalSchedulerSpec("LS3", 750, 80.0, 400.0, 0.85),
]
TABLE_GROUPS = [
    JobGroupSpec("Job_Group1", 5, 250, 1200.0, 1.93, 45500.0, 0.8, 0.2),
    JobGroupSpec("Job_Group2", 3, 210, 2100.0, 3.4, 72000.0, 0.3, 0.7),
    JobGroupSpec("Job_Group3", 5, 100, 900.0, 6.25, 30000.0, 0.5, 0.5),
]


@pytest.mark.parametrize("cur,new", list(itertools.product(TaskState, TaskState)))
def test_transition_table_is_exhaustive(cur, new):
    if (cur, new) in LEGAL:
        assert transition(cur, new) is new
    else:
        with pytest.raises(IllegalTransition):
            transition(cur, new)


def test_terminal_states():
    assert {s for s in TaskState if s.terminal} == {
        TaskState.SUCCESS, TaskState.FAIL, TaskState.ABORTED}


def test_bundled_tables_are_valid():
    sc = load_scenario("paper-tables.cfg")
    assert list(sc.local_schedulers) == TABLE_LS
    assert list(sc.job_groups) == TABLE_GROUPS
    assert validate_scenario(sc.local_schedulers, sc.job_groups, sc.params) == []


def test_group_weights_sum_to_one():
    for g in TABLE_GROUPS:
        assert g.reliability_weight + g.completion_weight == pytest.approx(1.0)


def test_dependability_out_of_range_is_reported():
    bad = dataclasses.replace(TABLE_LS[0], medium_dependability=1.2)
    problems = validate_scenario([bad], TABLE_GROUPS)
    assert len(problems) == 1
    assert "local_scheduler[LS1].medium_dependability" in problems[0]
    assert "dependability ∉ [0,1]" in problems[0]


def test_malformed_identifiers_reported_individually():
    ls = [dataclasses.replace(TABLE_LS[0], ls_id="bad id"),
          dataclasses.replace(TABLE_LS[1], ls_id="")]
    problems = validate_scenario(ls, [])
    assert len(problems) == 2
    assert all("malformed identifier" in p for p in problems)


def test_validate_collects_every_violation():
    g = dataclasses.replace(TABLE_GROUPS[0], deadline_s=-1.0, reliability_weight=0.9)
    ls = dataclasses.replace(TABLE_LS[0], node_count=0)
    problems = validate_scenario([ls], [g])
    assert any(".node_count" in p for p in problems)
    assert any(".deadline_s" in p for p in problems)
    assert any("!= 1" in p for p in problems)


def test_params_validation():
    p = ModelParams(rsa_bins=1, cbr_k=0)
    problems = validate_scenario([], [], p)
    assert "params.rsa_bins: must be >= 2" in problems
    assert "params.cbr_k: must be >= 1" in problems


def test_task_defaults():
    t = make_task()
    assert t.size_units == t.memory_mb
    with pytest.raises(ValueError):
        make_task(length=0.0)
    with pytest.raises(ValueError):
        make_task(deadline=0.0)


def test_job_invariants():
    with pytest.raises(ValueError):
        Job("J1", "C1", (), 0.5, 0.5)
    with pytest.raises(ValueError):
        Job("J1", "C1", (make_task(),), 0.6, 0.6)
    assert Job("J1", "C1", [make_task()], 0.8, 0.2).tasks[0].task_id == "T1"


def test_node_spec_bounds():
    with pytest.raises(ValueError):
        make_spec(dependability=1.2)
    with pytest.raises(ValueError):
        make_spec(p=0.6)
    with pytest.raises(ValueError):
        make_spec(mips=0.0)


def test_record_completion_iff_success():
    make_record(state=TaskState.FAIL)
    with pytest.raises(ValueError):
        dataclasses.replace(make_record(state=TaskState.FAIL), completion_time_s=10.0)
    with pytest.raises(ValueError):
        dataclasses.replace(make_record(), completion_time_s=None)
    with pytest.raises(ValueError):
        make_record(completion=100.0, spent=200.0)


def test_announcement_invariants():
    ok = dict(node_id="N1", accepting=False, non_accept_until_s=10.0, success_ratio=1.0,
              act_s=0.0, avg_cpu_idle=1.0, avg_free_ram_mb=1.0, offered_price=10.0,
              issued_at_s=5.0, price_bounds=(8.0, 12.0))
    NodeAnnouncement(**ok)
    with pytest.raises(ValueError):
        NodeAnnouncement(**{**ok, "non_accept_until_s": 5.0})
    with pytest.raises(ValueError):
        NodeAnnouncement(**{**ok, "offered_price": 12.5})
    assert "price_bounds" not in NodeAnnouncement(**ok).to_json()


def test_scenario_round_trip_is_bit_exact(tmp_path):
    sc = load_scenario("paper-tables.cfg")
    text = dumps_scenario(sc)
    assert loads_scenario(text) == sc
    path = tmp_path / "s.cfg"
    save_scenario(sc, path)
    assert path.read_text() == text
    assert dumps_scenario(load_scenario(path)) == text


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e6, allow_nan=False),
       st.floats(min_value=0.0, max_value=1.0))
def test_float_fields_round_trip(gmips, dep):
    sc = Scenario("x", (LocalSchedulerSpec("A", 3, gmips, 0.0, dep),), tuple(TABLE_GROUPS))
    assert loads_scenario(dumps_scenario(sc)) == sc


def test_scenario_parse_errors():
    with pytest.raises(ScenarioError):
        loads_scenario("[params]\nreplications = 3\n")
    with pytest.raises(ScenarioError):
        loads_scenario("[scenario]\nname = x\n[local_scheduler:A]\nnode_count = 1\n")
    with pytest.raises(ScenarioError):
        loads_scenario("[scenario]\nname = x\n[params]\nbogus = 1\n")
    with pytest.raises(ScenarioError):
        loads_scenario("[scenario]\nname = x\n[params]\ncbr_k = five\n")


def test_scaled_counts():
    sc = load_scenario("paper-tables.cfg").scaled(0.1)
    assert [s.node_count for s in sc.local_schedulers] == [40, 32, 75]
    assert [g.total_tasks for g in sc.job_groups] == [25, 21, 10]
    assert [g.job_count for g in sc.job_groups] == [5, 3, 5]
    tiny = load_scenario("paper-tables.cfg").scaled(0.001)
    assert all(s.node_count >= 1 for s in tiny.local_schedulers)
    assert all(g.job_count <= g.total_tasks for g in tiny.job_groups)
