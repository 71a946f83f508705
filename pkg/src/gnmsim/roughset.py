"""Rough Set Analyzer.

Discretizes a node's history table, builds indiscernibility partitions and
lower/upper approximations, and induces certain and possible rules for each of
the three decision attributes (final status, completion time class, cost
class). Row sets are handled as Python int bitsets, which keeps rule induction
cheap enough to run on every node of a simulated population.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .domain import TaskRecord

ABSENT = "absent"


class DecisionAttr(str, Enum):
    FINAL_STATUS = "FinalStatus"
    COMPLETION_TIME = "CompletionTimeClass"
    COST_PRICE = "CostPriceClass"


BASE_CONDITIONS = ("cpu_load", "free_ram", "task_size", "priority", "waiting_count", "dtr")
DECISIONS = tuple(d.value for d in DecisionAttr)
ALL_ATTRIBUTES = BASE_CONDITIONS + DECISIONS
CONTINUOUS = frozenset({"cpu_load", "free_ram", "task_size", "waiting_count", "dtr",
                        DecisionAttr.COMPLETION_TIME.value, DecisionAttr.COST_PRICE.value})


def record_values(rec: TaskRecord) -> dict:
    """Raw attribute values of a history record, keyed by attribute name."""
    return {
        "cpu_load": rec.cpu_load_at_submit,
        "free_ram": rec.free_ram_at_submit_mb,
        "task_size": rec.task_size_mi,
        "priority": rec.priority.value,
        "waiting_count": rec.waiting_grid_tasks,
        "dtr": rec.dtr_at_submit,
        DecisionAttr.FINAL_STATUS.value: rec.final_state.value,
        DecisionAttr.COMPLETION_TIME.value: rec.completion_time_s,
        DecisionAttr.COST_PRICE.value: rec.cost_price,
    }


# -- discretization -----------------------------------------------------------

def equal_frequency_cuts(values: Sequence[float], bins: int) -> tuple:
    """Cut values splitting the sorted sample into ``bins`` equally sized runs.

    A value v falls in bin ``bisect_right(cuts, v)``. A cut that would land
    on a run of ties already below the previous cut moves up to the next
    distinct value, so tied values share a bin and an all-identical column
    yields a single bin.
    """
    xs = sorted(values)
    n = len(xs)
    cuts: list = []
    for i in range(1, bins):
        idx = (n * i) // bins
        if not 0 < idx < n:
            continue
        floor = cuts[-1] if cuts else xs[0]
        c = xs[idx]
        if c <= floor:
            j = bisect.bisect_right(xs, floor)
            if j >= n:
                break
            c = xs[j]
        cuts.append(c)
    return tuple(cuts)


def equal_width_cuts(values: Sequence[float], bins: int) -> tuple:
    lo, hi = min(values), max(values)
    if hi <= lo:
        return ()
    step = (hi - lo) / bins
    return tuple(lo + step * i for i in range(1, bins))


@dataclass(frozen=True)
class Discretizer:
    cuts: Mapping[str, tuple]
    bins: int = 3
    method: str = "frequency"

    @classmethod
    def fit(cls, records: Sequence[TaskRecord], bins: int = 3,
            method: str = "frequency") -> "Discretizer":
        if bins < 2:
            raise ValueError("bins must be >= 2")
        fn = equal_frequency_cuts if method == "frequency" else equal_width_cuts
        if method not in ("frequency", "width"):
            raise ValueError(f"unknown discretization method {method!r}")
        raw = [record_values(r) for r in records]
        cuts = {}
        for attr in CONTINUOUS:
            present = [row[attr] for row in raw if row[attr] is not None]
            cuts[attr] = fn(present, bins) if present else ()
        return cls(cuts=cuts, bins=bins, method=method)

    def code(self, attr: str, value):
        if value is None:
            return ABSENT
        if attr in CONTINUOUS:
            if isinstance(value, float) and math.isnan(value):
                return ABSENT
            return bisect.bisect_right(self.cuts[attr], value)
        return value

    def encode(self, values: Mapping[str, object]) -> dict:
        return {a: self.code(a, v) for a, v in values.items()}

    def label(self, attr: str, code) -> str:
        if code == ABSENT or attr not in CONTINUOUS:
            return str(code)
        if self.bins == 3:
            return ("low", "mid", "high")[code]
        return f"b{code}"


_LABEL_CODES = {"low": 0, "mid": 1, "high": 2}


def _unlabel(attr: str, text: str):
    if text == ABSENT or attr not in CONTINUOUS:
        return text
    if text in _LABEL_CODES:
        return _LABEL_CODES[text]
    return int(text[1:]) if text.startswith("b") else int(text)


@dataclass(frozen=True)
class DecisionTable:
    """Discretized rows; each row holds the condition values then the decision."""

    rows: tuple
    condition_attrs: tuple
    decision_attr: str
    discretizer: Optional[Discretizer] = None

    def __post_init__(self):
        width = len(self.condition_attrs) + 1
        for i, r in enumerate(self.rows):
            if len(r) != width:
                raise ValueError(f"row {i} has {len(r)} values, expected {width}")

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, attr: str) -> list:
        if attr == self.decision_attr:
            j = len(self.condition_attrs)
        else:
            j = self.condition_attrs.index(attr)
        return [r[j] for r in self.rows]

    def decisions(self) -> list:
        return [r[-1] for r in self.rows]


def condition_attrs_for(decision: DecisionAttr | str) -> tuple:
    decision = DecisionAttr(decision).value
    return BASE_CONDITIONS + tuple(d for d in DECISIONS if d != decision)


def discretize(records: Sequence[TaskRecord], bins: int = 3, method: str = "frequency",
               discretizer: Optional[Discretizer] = None) -> dict:
    """One decision table per decision attribute over the same discretized rows.

    The other two decision attributes join each table's condition set.
    """
    if not records:
        raise ValueError("cannot discretize an empty record set")
    disc = discretizer or Discretizer.fit(records, bins, method)
    coded = [disc.encode(record_values(r)) for r in records]
    tables = {}
    for d in DecisionAttr:
        conds = condition_attrs_for(d)
        rows = tuple(tuple(c[a] for a in conds) + (c[d.value],) for c in coded)
        tables[d] = DecisionTable(rows, conds, d.value, disc)
    return tables


# -- approximations -----------------------------------------------------------

def _attr_indices(table: DecisionTable, attrs: Iterable[str]) -> list[int]:
    idx = []
    for a in attrs:
        if a not in table.condition_attrs:
            raise ValueError(f"{a!r} is not a condition attribute")
        idx.append(table.condition_attrs.index(a))
    return idx


def indiscernibility(table: DecisionTable, attrs: Iterable[str]) -> list[tuple]:
    """Blocks of row indices that agree on every attribute in ``attrs``.

    Blocks are ordered by their smallest row index.
    """
    idx = _attr_indices(table, attrs)
    blocks: dict[tuple, list] = {}
    for i, row in enumerate(table.rows):
        blocks.setdefault(tuple(row[j] for j in idx), []).append(i)
    return [tuple(b) for b in blocks.values()]


def lower_approximation(table: DecisionTable, concept_rows: Iterable[int],
                        attrs: Optional[Iterable[str]] = None) -> frozenset:
    concept = frozenset(concept_rows)
    _check_rows(table, concept)
    blocks = indiscernibility(table, table.condition_attrs if attrs is None else attrs)
    return frozenset(i for b in blocks if concept.issuperset(b) for i in b)


def upper_approximation(table: DecisionTable, concept_rows: Iterable[int],
                        attrs: Optional[Iterable[str]] = None) -> frozenset:
    concept = frozenset(concept_rows)
    _check_rows(table, concept)
    blocks = indiscernibility(table, table.condition_attrs if attrs is None else attrs)
    return frozenset(i for b in blocks if not concept.isdisjoint(b) for i in b)


def _check_rows(table, rows):
    n = len(table.rows)
    bad = [i for i in rows if not 0 <= i < n]
    if bad:
        raise ValueError(f"concept rows {bad} outside table of {n} rows")


# -- rules --------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    conditions: tuple            # ((attr, value), ...) in condition-attribute order
    decision_value: object
    support: int
    certainty: float

    @property
    def certain(self) -> bool:
        return self.certainty == 1.0

    def condition_map(self) -> dict:
        return dict(self.conditions)

    def matches(self, coded: Mapping[str, object]) -> bool:
        return all(coded.get(a) == v for a, v in self.conditions)


@dataclass(frozen=True)
class RuleMatrix:
    decision_attr: DecisionAttr
    rules: tuple
    built_at_s: float
    source_row_count: int
    condition_attrs: tuple = ()
    discretizer: Optional[Discretizer] = field(default=None, compare=False)

    def as_matrix(self) -> list[list]:
        """Rows are rules, columns are condition attributes then decision,
        support and certainty; unconstrained cells are None."""
        out = []
        for r in self.rules:
            cmap = r.condition_map()
            out.append([cmap.get(a) for a in self.condition_attrs]
                       + [r.decision_value, r.support, r.certainty])
        return out

    def to_json(self) -> dict:
        return {
            "decision_attr": DecisionAttr(self.decision_attr).value,
            "built_at_s": self.built_at_s,
            "source_row_count": self.source_row_count,
            "columns": list(self.condition_attrs) + ["decision", "support", "certainty"],
            "rules": self.as_matrix(),
        }


def _popcount(x: int) -> int:
    return x.bit_count()


class _Bits:
    """Per-(attribute, value) row bitsets of a decision table."""

    def __init__(self, table: DecisionTable):
        self.n = len(table.rows)
        self.full = (1 << self.n) - 1
        self.masks: dict[tuple, int] = {}
        for i, row in enumerate(table.rows):
            bit = 1 << i
            for j, v in enumerate(row[:-1]):
                key = (j, v)
                self.masks[key] = self.masks.get(key, 0) | bit

    def match(self, conds) -> int:
        m = self.full
        for key in conds:
            m &= self.masks[key]
        return m


def _dependency_degree(table: DecisionTable, j: int) -> float:
    """Fraction of rows whose block on attribute j alone is decision-consistent."""
    groups: dict = {}
    for r in table.rows:
        groups.setdefault(r[j], set()).add(r[-1])
    consistent = {v for v, ds in groups.items() if len(ds) == 1}
    return sum(1 for r in table.rows if r[j] in consistent) / len(table.rows)


def induce_rules(table: DecisionTable, built_at_s: float = 0.0) -> RuleMatrix:
    """Certain rules from lower-approximation blocks, possible rules from
    boundary blocks, each shortened by greedy condition dropping.

    Conditions on the other decision attributes are tried for removal first,
    since a new task cannot know them; the rest go from the least to the most
    informative attribute (single-attribute dependency degree). A certain rule may drop a
    condition while everything it matches stays inside the lower
    approximation; a possible rule while it stays inside the upper one. Blocks
    already covered by an earlier rule of the same kind are skipped.
    """
    if not table.rows:
        raise ValueError("cannot induce rules from an empty table")
    m = len(table.condition_attrs)
    bits = _Bits(table)
    known = [table.condition_attrs[j] not in DECISIONS for j in range(m)]
    order = sorted(range(m), key=lambda j: (known[j], _dependency_degree(table, j), -j))
    blocks = indiscernibility(table, table.condition_attrs)

    decision_masks: dict = {}
    for i, row in enumerate(table.rows):
        decision_masks[row[-1]] = decision_masks.get(row[-1], 0) | (1 << i)

    block_masks = [sum(1 << i for i in b) for b in blocks]
    rules = []
    seen = set()
    for d in sorted(decision_masks, key=str):
        concept = decision_masks[d]
        lower = upper = 0
        for bm in block_masks:
            if bm & concept == bm:
                lower |= bm
            if bm & concept:
                upper |= bm
        for kind, region in (("certain", lower), ("possible", upper)):
            covered = 0
            for b, bm in zip(blocks, block_masks):
                inside_lower = bm & lower == bm
                if kind == "certain" and not inside_lower:
                    continue
                if kind == "possible" and (inside_lower or not bm & concept):
                    continue
                if bm & covered == bm:
                    continue
                row = table.rows[b[0]]
                conds = {j: (j, row[j]) for j in range(m)}
                for j in order:
                    trial = [c for k, c in conds.items() if k != j]
                    if bits.match(trial) & ~region == 0:
                        del conds[j]
                keys = [conds[j] for j in sorted(conds)]
                match = bits.match(keys)
                covered |= match
                rule_key = (tuple(keys), d)
                if rule_key in seen:
                    continue
                seen.add(rule_key)
                support = _popcount(match & concept)
                certainty = support / _popcount(match)
                rules.append(Rule(tuple((table.condition_attrs[j], v) for j, v in keys),
                                  d, support, 1.0 if kind == "certain" else certainty))
    return RuleMatrix(DecisionAttr(table.decision_attr), tuple(rules), built_at_s,
                      len(table.rows), tuple(table.condition_attrs), table.discretizer)


def analyze(records: Sequence[TaskRecord], now_s: float = 0.0, bins: int = 3,
            method: str = "frequency") -> dict:
    """A full RSA run: the three rule matrices of a history table."""
    tables = discretize(records, bins, method)
    return {d: induce_rules(t, now_s) for d, t in tables.items()}


# -- trigger ------------------------------------------------------------------

@dataclass
class RsaState:
    records_at_last_rsa: int = 0
    new_records: int = 0
    last_rsa_s: float = -math.inf


def should_run_rsa(state: RsaState, now_s: float, new_fraction: float = 0.01,
                   min_interval_s: float = 86400.0) -> bool:
    """Both trigger conditions must hold: enough new records and a stale analysis."""
    enough_new = state.new_records > new_fraction * state.records_at_last_rsa
    stale = now_s - state.last_rsa_s >= min_interval_s
    return enough_new and stale


def mark_rsa_run(state: RsaState, now_s: float) -> None:
    state.records_at_last_rsa += state.new_records
    state.new_records = 0
    state.last_rsa_s = now_s


# -- CSV / JSON ---------------------------------------------------------------

def write_table_csv(table: DecisionTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    header = list(table.condition_attrs) + [table.decision_attr]
    w.writerow(header)
    disc = table.discretizer
    for row in table.rows:
        if disc is None:
            w.writerow([str(v) for v in row])
        else:
            w.writerow([disc.label(a, v) for a, v in zip(header, row)])


def read_table_csv(fh, decision_attr: str, discretizer: Optional[Discretizer] = None
                   ) -> DecisionTable:
    r = csv.reader(fh)
    header = next(r)
    if decision_attr not in header:
        raise ValueError(f"decision attribute {decision_attr!r} not in header")
    d = header.index(decision_attr)
    conds = tuple(a for i, a in enumerate(header) if i != d)
    rows = []
    for line in r:
        vals = [_unlabel(a, v) for a, v in zip(header, line)]
        rows.append(tuple(v for i, v in enumerate(vals) if i != d) + (vals[d],))
    return DecisionTable(tuple(rows), conds, decision_attr, discretizer)


def write_matrices_json(matrices: Mapping, fh) -> None:
    json.dump({DecisionAttr(k).value: m.to_json() for k, m in matrices.items()},
              fh, indent=2, sort_keys=True, default=str)
