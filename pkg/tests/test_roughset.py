import io
import json
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from gnmsim.domain import TaskState
from gnmsim.roughset import (ABSENT, DecisionAttr, DecisionTable, Discretizer, RsaState,
                             analyze, condition_attrs_for, discretize, equal_frequency_cuts,
                             indiscernibility, induce_rules, lower_approximation, mark_rsa_run,
                             read_table_csv, should_run_rsa, upper_approximation,
                             write_matrices_json, write_table_csv)

from conftest import make_record
from oracles import brute_lower, brute_partition, brute_upper, random_table, rows_matching

HOUR = 3600.0


def _table(rows, attrs=("A", "B")):
    return DecisionTable(tuple(tuple(r) for r in rows), tuple(attrs), "FinalStatus")


# -- discretization --------------------------------------------------------------

def test_completion_time_classes():
    recs = [make_record(i, completion=c) for i, c in enumerate([100, 200, 300, 400, 500, 600])]
    table = discretize(recs)[DecisionAttr.FINAL_STATUS]
    classes = table.column("CompletionTimeClass")
    labels = [table.discretizer.label("CompletionTimeClass", c) for c in classes]
    assert labels == ["low", "low", "mid", "mid", "high", "high"]


def test_single_record_is_one_bin_everywhere():
    tables = discretize([make_record()])
    row = tables[DecisionAttr.FINAL_STATUS].rows[0]
    assert all(v == 0 for v in row if isinstance(v, int))


def test_identical_column_collapses():
    assert equal_frequency_cuts([5.0] * 9, 3) == ()


def test_missing_values_get_absent_category():
    recs = [make_record(0), make_record(1, state=TaskState.FAIL)]
    table = discretize(recs)[DecisionAttr.FINAL_STATUS]
    assert table.column("CompletionTimeClass")[1] == ABSENT


def test_other_decisions_join_conditions():
    conds = condition_attrs_for(DecisionAttr.FINAL_STATUS)
    assert "CompletionTimeClass" in conds and "CostPriceClass" in conds
    assert "FinalStatus" not in conds
    tables = discretize([make_record(i) for i in range(3)])
    assert set(tables) == set(DecisionAttr)
    for d, t in tables.items():
        assert t.decision_attr == d.value
        assert d.value not in t.condition_attrs


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1,
                max_size=60, unique=True),
       st.integers(min_value=2, max_value=6))
def test_equal_frequency_bins_are_balanced(values, bins):
    disc = Discretizer({"task_size": equal_frequency_cuts(values, bins)}, bins)
    codes = [disc.code("task_size", v) for v in values]
    # monotone in value
    pairs = sorted(zip(values, codes))
    assert all(a[1] <= b[1] for a, b in zip(pairs, pairs[1:]))
    # sizes differ by at most one from n / bins when every bin is populated
    n = len(values)
    sizes = [codes.count(b) for b in range(bins)]
    if n >= bins:
        assert all(math.floor(n / bins) <= s <= math.ceil(n / bins) for s in sizes)


def test_equal_width_alternative():
    recs = [make_record(i, completion=c) for i, c in enumerate([0.0 + 1, 2, 3, 10])]
    disc = Discretizer.fit(recs, 3, "width")
    assert disc.cuts["CompletionTimeClass"] == pytest.approx((4.0, 7.0))
    with pytest.raises(ValueError):
        Discretizer.fit(recs, 3, "kmeans")
    with pytest.raises(ValueError):
        discretize([])


# -- indiscernibility and approximations --------------------------------------------

def test_indiscernibility_small():
    t = _table([(1, 0, "S"), (1, 1, "F"), (2, 0, "S"), (2, 1, "S")])
    assert indiscernibility(t, ["A"]) == [(0, 1), (2, 3)]
    assert indiscernibility(t, []) == [(0, 1, 2, 3)]
    with pytest.raises(ValueError):
        indiscernibility(t, ["Z"])


def test_approximation_edge_cases():
    t = _table([(1, 0, "S"), (1, 1, "F"), (2, 0, "S")])
    everything = set(range(3))
    assert lower_approximation(t, everything) == everything
    assert lower_approximation(t, set()) == frozenset()
    assert upper_approximation(t, set()) == frozenset()
    with pytest.raises(ValueError):
        lower_approximation(t, {5})


@pytest.mark.parametrize("seed", range(100))
def test_approximations_match_brute_force(seed):
    rng = random.Random(seed)
    t = random_table(rng)
    attrs = [a for a in t.condition_attrs if rng.random() < 0.7]
    got = {frozenset(b) for b in indiscernibility(t, attrs)}
    assert got == brute_partition(t, attrs)
    concept = {i for i, r in enumerate(t.rows) if r[-1] == "S"}
    assert lower_approximation(t, concept) == brute_lower(t, concept)
    assert upper_approximation(t, concept) == brute_upper(t, concept)
    assert lower_approximation(t, concept, attrs) == brute_lower(t, concept, attrs)
    assert upper_approximation(t, concept, attrs) == brute_upper(t, concept, attrs)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.sets(st.integers(0, 7)))
def test_sandwich_partition_and_refinement(seed, concept):
    t = random_table(random.Random(seed))
    concept = {i for i in concept if i < len(t.rows)}
    lo, up = lower_approximation(t, concept), upper_approximation(t, concept)
    assert lo <= concept <= up
    blocks = indiscernibility(t, t.condition_attrs)
    flat = [i for b in blocks for i in b]
    assert sorted(flat) == list(range(len(t.rows)))
    coarse = [set(b) for b in indiscernibility(t, t.condition_attrs[:1])]
    for b in blocks:
        assert any(set(b) <= c for c in coarse)


# -- rules -------------------------------------------------------------------------

def _check_rules(t, matrix):
    for rule in matrix.rules:
        matched = rows_matching(t, rule.conditions)
        assert matched, "a rule must match its source block"
        hits = [i for i in matched if t.rows[i][-1] == rule.decision_value]
        assert rule.support == len(hits)
        if rule.certain:
            assert len(hits) == len(matched)
        else:
            assert rule.certainty == pytest.approx(len(hits) / len(matched))
            assert rule.certainty < 1.0


@pytest.mark.parametrize("seed", range(100))
def test_rules_are_sound_on_random_tables(seed):
    t = random_table(random.Random(1000 + seed))
    _check_rules(t, induce_rules(t))


def test_every_row_is_covered_by_a_rule_of_its_decision():
    for seed in range(50):
        t = random_table(random.Random(seed))
        m = induce_rules(t)
        for i, row in enumerate(t.rows):
            assert any(r.decision_value == row[-1] and i in rows_matching(t, r.conditions)
                       for r in m.rules)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("SF"), st.integers(0, 2)), min_size=2, max_size=12))
def test_single_determining_attribute(rows):
    # A copies the decision, B is noise that is mixed across decisions
    rows = [(d, b, d) for d, b in rows] + [("S", 9, "S"), ("F", 9, "F")]
    t = _table(rows)
    m = induce_rules(t)
    for r in m.rules:
        assert r.certain
        assert [a for a, _ in r.conditions] == ["A"]
    _check_rules(t, m)


def test_one_row_table():
    m = induce_rules(_table([(1, 2, "S")]))
    assert len(m.rules) == 1
    assert m.rules[0].certain and m.rules[0].support == 1


def test_all_boundary_table_gives_only_possible_rules():
    t = _table([(1, 1, "S"), (1, 1, "F"), (2, 2, "S"), (2, 2, "F")])
    m = induce_rules(t)
    assert m.rules and all(not r.certain for r in m.rules)
    with pytest.raises(ValueError):
        induce_rules(_table([]))


def test_analyze_builds_three_matrices():
    recs = [make_record(i, completion=100.0 + i, cpu=(i % 5) / 5,
                        state=TaskState.SUCCESS if i % 3 else TaskState.FAIL)
            for i in range(40)]
    ms = analyze(recs, now_s=12.0)
    assert set(ms) == set(DecisionAttr)
    for d, m in ms.items():
        assert m.built_at_s == 12.0 and m.source_row_count == 40
        tables = discretize(recs)
        _check_rules(tables[d], m)
        grid = m.as_matrix()
        assert len(grid) == len(m.rules)
        assert all(len(row) == len(m.condition_attrs) + 3 for row in grid)


# -- trigger -------------------------------------------------------------------------

@pytest.mark.parametrize("new,ago_h,expected", [
    (15, 25, True),
    (5, 25, False),
    (15, 1, False),
])
def test_trigger_examples(new, ago_h, expected):
    now = 100 * 86400.0
    state = RsaState(records_at_last_rsa=1000, new_records=new, last_rsa_s=now - ago_h * HOUR)
    assert should_run_rsa(state, now) is expected


def test_trigger_boundaries():
    now = 10 * 86400.0
    at = RsaState(1000, 10, now - 86400.0)
    assert not should_run_rsa(at, now)             # 10 is not more than 1% of 1000
    at.new_records = 11
    assert should_run_rsa(at, now)                  # exactly 24 h counts
    at.last_rsa_s = now - 86400.0 + 1e-6
    assert not should_run_rsa(at, now)


def test_never_run_state_triggers_on_first_record():
    s = RsaState()
    assert not should_run_rsa(s, 0.0)
    s.new_records = 1
    assert should_run_rsa(s, 0.0)
    mark_rsa_run(s, 0.0)
    assert (s.records_at_last_rsa, s.new_records, s.last_rsa_s) == (1, 0, 0.0)


# -- I/O -------------------------------------------------------------------------------

def test_table_csv_round_trip():
    recs = [make_record(i, completion=100.0 * (i + 1), cpu=i / 10) for i in range(9)]
    recs.append(make_record(9, state=TaskState.FAIL))
    t = discretize(recs)[DecisionAttr.COST_PRICE]
    buf = io.StringIO()
    write_table_csv(t, buf)
    assert buf.getvalue().splitlines()[0].endswith(",CostPriceClass")
    back = read_table_csv(io.StringIO(buf.getvalue()), "CostPriceClass", t.discretizer)
    assert back == t


def test_matrices_json():
    recs = [make_record(i, completion=100.0 + i) for i in range(6)]
    buf = io.StringIO()
    write_matrices_json(analyze(recs), buf)
    data = json.loads(buf.getvalue())
    assert set(data) == {"FinalStatus", "CompletionTimeClass", "CostPriceClass"}
    assert data["FinalStatus"]["columns"][-3:] == ["decision", "support", "certainty"]


def test_tied_runs_keep_their_own_bin():
    assert equal_frequency_cuts([1.0] * 7 + [2.0] * 3, 3) == (2.0,)
    assert equal_frequency_cuts([0, 0, 0, 0, 1, 2, 3, 3, 3], 3) == (1, 3)
    assert equal_frequency_cuts([100, 200, 300, 400, 500, 600], 3) == (300, 500)
