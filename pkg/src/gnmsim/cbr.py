"""Rule-filtered case-based reasoning over a node's task history.

Retrieval keeps only the cases covered by rough-set rules that fire for the
query; prediction is k-nearest-neighbour voting inside that training set.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .domain import Prediction, Priority, TaskRecord, TaskState
from .roughset import (BASE_CONDITIONS, DecisionAttr, Discretizer, Rule, RsaState,
                       record_values)

SIMILARITY_ATTRS = ("cpu_load", "free_ram", "task_size", "memory_mb", "priority",
                    "deadline_s", "waiting_count", "dtr")
CATEGORICAL = frozenset({"priority"})


def record_features(rec: TaskRecord) -> dict:
    return {
        "cpu_load": rec.cpu_load_at_submit,
        "free_ram": rec.free_ram_at_submit_mb,
        "task_size": rec.task_size_mi,
        "memory_mb": rec.memory_mb,
        "priority": rec.priority.value,
        "deadline_s": rec.deadline_s,
        "waiting_count": rec.waiting_grid_tasks,
        "dtr": rec.dtr_at_submit,
    }


@dataclass(frozen=True)
class QueryCase:
    """An incoming task seen against the node's current snapshot."""

    size_mi: float
    memory_mb: float
    priority: Priority
    deadline_s: float
    cpu_load: float
    free_ram: float
    waiting_count: int
    dtr: float

    def condition_values(self) -> dict:
        return {
            "cpu_load": self.cpu_load,
            "free_ram": self.free_ram,
            "task_size": self.size_mi,
            "priority": Priority(self.priority).value,
            "waiting_count": self.waiting_count,
            "dtr": self.dtr,
        }

    def features(self) -> dict:
        return {
            "cpu_load": self.cpu_load,
            "free_ram": self.free_ram,
            "task_size": self.size_mi,
            "memory_mb": self.memory_mb,
            "priority": Priority(self.priority).value,
            "deadline_s": self.deadline_s,
            "waiting_count": self.waiting_count,
            "dtr": self.dtr,
        }

    def discretized(self, disc: Discretizer) -> dict:
        return disc.encode(self.condition_values())


class CaseBase:
    """Append-only case store owned by one node.

    Keeps per-(attribute, value) bitsets of the discretized cases so rule
    matching is a handful of integer ANDs.
    """

    def __init__(self, owner_node: str, cases: Sequence[TaskRecord] = ()):
        self.owner_node = owner_node
        self.cases: list[TaskRecord] = []
        self._disc: Optional[Discretizer] = None
        self._masks: dict = {}
        self._indexed = 0
        for c in cases:
            self._append(c)

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def _append(self, rec: TaskRecord) -> None:
        self.cases.append(rec)

    def copy(self) -> "CaseBase":
        cb = CaseBase(self.owner_node)
        cb.cases = list(self.cases)
        cb._disc = self._disc
        cb._masks = dict(self._masks)
        cb._indexed = self._indexed
        return cb

    def masks(self, disc: Discretizer) -> dict:
        if disc is not self._disc:
            self._disc, self._masks, self._indexed = disc, {}, 0
        for i in range(self._indexed, len(self.cases)):
            bit = 1 << i
            for attr, code in disc.encode(record_values(self.cases[i])).items():
                key = (attr, code)
                self._masks[key] = self._masks.get(key, 0) | bit
        self._indexed = len(self.cases)
        return self._masks

    def rule_mask(self, rule: Rule, disc: Discretizer) -> int:
        masks = self.masks(disc)
        m = (1 << len(self.cases)) - 1
        for key in rule.conditions:
            m &= masks.get(key, 0)
        return m


@dataclass
class TrainingSet:
    records: list
    indices: list
    low_confidence: bool = False
    fired: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def rule_fires(rule: Rule, coded_query: Mapping[str, object]) -> bool:
    """A rule fires when it constrains at least one attribute the query knows
    and the query agrees on all of them. Conditions on decision attributes are
    unknowable for a new task and are ignored for firing."""
    known = [(a, v) for a, v in rule.conditions if a in coded_query]
    return bool(known) and all(coded_query[a] == v for a, v in known)


def select_matrix(matrices: Mapping, reliability_weight: float = 0.5,
                  completion_weight: float = 0.5, decision: Optional[DecisionAttr] = None):
    if decision is None:
        decision = (DecisionAttr.FINAL_STATUS if reliability_weight >= completion_weight
                    else DecisionAttr.COMPLETION_TIME)
    return matrices[DecisionAttr(decision)]


def retrieve(case_base: CaseBase, matrices: Optional[Mapping], query: QueryCase,
             decision: DecisionAttr = DecisionAttr.FINAL_STATUS) -> TrainingSet:
    """Training set for ``query``: the union of cases covered by fired rules of
    the active decision attribute's matrix, or the whole case base (flagged
    low-confidence) when nothing fires."""
    n = len(case_base)
    if n == 0:
        return TrainingSet([], [], low_confidence=True)
    everything = TrainingSet(list(case_base.cases), list(range(n)), low_confidence=True)
    if not matrices:
        return everything
    matrix = matrices[DecisionAttr(decision)]
    disc = matrix.discretizer
    if disc is None:
        return everything
    coded = query.discretized(disc)
    fired = [r for r in matrix.rules if rule_fires(r, coded)]
    selected = 0
    for r in fired:
        selected |= case_base.rule_mask(r, disc)
    if not selected:
        return TrainingSet(everything.records, everything.indices, True, fired)
    idx = [i for i in range(n) if selected >> i & 1]
    return TrainingSet([case_base.cases[i] for i in idx], idx, False, fired)


def attribute_ranges(feature_rows: Sequence[Mapping]) -> dict:
    out = {}
    for a in SIMILARITY_ATTRS:
        if a in CATEGORICAL:
            continue
        vals = [row[a] for row in feature_rows]
        out[a] = max(vals) - min(vals) if vals else 0.0
    return out


def similarity(a: Mapping, b: Mapping, ranges: Optional[Mapping] = None) -> float:
    """1 minus the mean per-attribute distance.

    Continuous attributes use |a-b| / range (zero range contributes 0);
    categorical ones a 0/1 mismatch. Without ``ranges`` the pair itself sets
    the range, so any difference counts as maximal.
    """
    total = 0.0
    for attr in SIMILARITY_ATTRS:
        x, y = a[attr], b[attr]
        if attr in CATEGORICAL:
            total += 0.0 if x == y else 1.0
            continue
        span = ranges[attr] if ranges is not None else abs(x - y)
        if span > 0:
            total += min(abs(x - y) / span, 1.0)
    return 1.0 - total / len(SIMILARITY_ATTRS)


def nearest(training: Sequence[TaskRecord], query: QueryCase, k: int) -> list[tuple]:
    """(similarity, position) of the k most similar usable cases, best first.

    Aborted cases carry no outcome and are skipped. Equal similarity goes to
    the more recent case (higher position).
    """
    pool = [(i, r) for i, r in enumerate(training)
            if r.final_state in (TaskState.SUCCESS, TaskState.FAIL)]
    if not pool:
        return []
    q = query.features()
    feats = [record_features(r) for _, r in pool]
    ranges = attribute_ranges(feats + [q])
    scored = [(similarity(f, q, ranges), i) for (i, _), f in zip(pool, feats)]
    return heapq.nlargest(k, scored)


def predict(training: Sequence[TaskRecord], query: QueryCase, k: int = 5,
            fallback_completion_s: float = 1.0, fallback_cost: float = 0.0) -> Prediction:
    if k < 1:
        raise ValueError("k must be >= 1")
    neighbours = nearest(training, query, k)
    if not neighbours:
        return Prediction(TaskState.SUCCESS, fallback_completion_s, fallback_cost, 0.0)
    recs = [(s, training[i]) for s, i in neighbours]
    n_ok = sum(1 for _, r in recs if r.final_state is TaskState.SUCCESS)
    state = TaskState.SUCCESS if 2 * n_ok >= len(recs) else TaskState.FAIL
    share = (n_ok if state is TaskState.SUCCESS else len(recs) - n_ok) / len(recs)
    mean_sim = sum(s for s, _ in recs) / len(recs)

    ok = [(s, r) for s, r in recs if r.final_state is TaskState.SUCCESS]
    completion = _weighted_mean([(s, r.completion_time_s) for s, r in ok])
    cost = _weighted_mean([(s, r.cost_price) for s, r in ok if r.cost_price is not None])
    return Prediction(
        state,
        completion if completion is not None and completion > 0 else fallback_completion_s,
        cost if cost is not None else fallback_cost,
        min(1.0, max(0.0, share * mean_sim)),
    )


def _weighted_mean(pairs) -> Optional[float]:
    if not pairs:
        return None
    wsum = sum(w for w, _ in pairs)
    if wsum <= 0:
        return sum(v for _, v in pairs) / len(pairs)
    return sum(w * v for w, v in pairs) / wsum


def retain(case_base: CaseBase, finished: TaskRecord, rsa: Optional[RsaState] = None) -> None:
    if not finished.final_state.terminal:
        raise ValueError(f"cannot retain non-terminal record {finished.task_id} "
                         f"({finished.final_state.value})")
    case_base._append(finished)
    if rsa is not None:
        rsa.new_records += 1


def write_casebase_csv(case_base: CaseBase, fh) -> None:
    """Same columns as a decision-table CSV, raw (undiscretized) values."""
    w = csv.writer(fh, lineterminator="\n")
    cols = list(BASE_CONDITIONS) + [d.value for d in DecisionAttr]
    w.writerow(cols)
    for rec in case_base:
        vals = record_values(rec)
        w.writerow(["absent" if vals[c] is None else vals[c] for c in cols])
