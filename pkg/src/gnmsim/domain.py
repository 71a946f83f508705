"""Shared domain types: nodes, jobs, tasks, history records, announcements.

Everything here is a plain value type. Behaviour lives in the other modules;
this one only constructs, validates and serializes.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed."""


class IllegalTransition(ValueError):
    pass


class Priority(str, Enum):
    LOW = "Low"
    NORMAL = "Normal"
    HIGH = "High"


class TaskState(str, Enum):
    WAIT = "Wait"
    RUNNING = "Running"
    SUCCESS = "Success"
    FAIL = "Fail"
    ABORTED = "Aborted"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STATES


TERMINAL_STATES = frozenset({TaskState.SUCCESS, TaskState.FAIL, TaskState.ABORTED})

LEGAL_TRANSITIONS = frozenset({
    (TaskState.WAIT, TaskState.RUNNING),
    (TaskState.RUNNING, TaskState.SUCCESS),
    (TaskState.RUNNING, TaskState.FAIL),
    (TaskState.WAIT, TaskState.ABORTED),
    (TaskState.RUNNING, TaskState.ABORTED),
})


def transition(current: TaskState, new: TaskState) -> TaskState:
    if (current, new) not in LEGAL_TRANSITIONS:
        raise IllegalTransition(f"{current.value} -> {new.value}")
    return new


_ID_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def valid_identifier(value) -> bool:
    return isinstance(value, str) and bool(_ID_RE.match(value))


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    grid_mips: float
    total_ram_mb: float
    dtr_base: float
    dependability: float
    standard_price_alpha: float
    price_tolerance_p: float
    local_scheduler_id: str

    def __post_init__(self):
        if not self.grid_mips > 0:
            raise ValueError(f"grid_mips must be > 0, got {self.grid_mips}")
        if not self.total_ram_mb > 0:
            raise ValueError(f"total_ram_mb must be > 0, got {self.total_ram_mb}")
        if not self.dtr_base > 0:
            raise ValueError(f"dtr_base must be > 0, got {self.dtr_base}")
        if not 0.0 <= self.dependability <= 1.0:
            raise ValueError(f"dependability {self.dependability} not in [0,1]")
        if not self.standard_price_alpha > 0:
            raise ValueError("standard_price_alpha must be > 0")
        if not 0.0 <= self.price_tolerance_p <= 0.5:
            raise ValueError(f"price_tolerance_p {self.price_tolerance_p} not in [0,0.5]")


@dataclass(frozen=True)
class Task:
    task_id: str
    job_id: str
    length_mi: float
    memory_mb: float
    deadline_s: float
    priority: Priority = Priority.NORMAL
    size_units: Optional[float] = None

    def __post_init__(self):
        if not self.length_mi > 0:
            raise ValueError(f"task {self.task_id}: length_mi must be > 0")
        if not self.memory_mb > 0:
            raise ValueError(f"task {self.task_id}: memory_mb must be > 0")
        if not self.deadline_s > 0:
            raise ValueError(f"task {self.task_id}: deadline_s must be > 0")
        if self.size_units is None:
            object.__setattr__(self, "size_units", self.memory_mb)
        elif not self.size_units > 0:
            raise ValueError(f"task {self.task_id}: size_units must be > 0")
        object.__setattr__(self, "priority", Priority(self.priority))


@dataclass(frozen=True)
class Job:
    job_id: str
    consumer_id: str
    tasks: tuple
    reliability_weight: float
    completion_weight: float

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ValueError(f"job {self.job_id} has no tasks")
        for w in (self.reliability_weight, self.completion_weight):
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"job {self.job_id}: weight {w} not in [0,1]")
        if abs(self.reliability_weight + self.completion_weight - 1.0) > 1e-9:
            raise ValueError(f"job {self.job_id}: weights must sum to 1")


@dataclass(frozen=True)
class TaskRecord:
    """One row of a node's local history table.

    ``completion_time_s`` is measured from admission on the node to the end of
    execution, so it includes waiting and transfer; ``spent_time_s`` is the
    execution part only.
    """

    task_id: str
    cpu_load_at_submit: float
    free_ram_at_submit_mb: float
    task_size_mi: float
    priority: Priority
    waiting_grid_tasks: int
    dtr_at_submit: float
    final_state: TaskState
    start_time_s: Optional[float] = None
    spent_time_s: Optional[float] = None
    completion_time_s: Optional[float] = None
    cost_price: Optional[float] = None
    memory_mb: float = 1.0
    deadline_s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "priority", Priority(self.priority))
        object.__setattr__(self, "final_state", TaskState(self.final_state))
        if not 0.0 <= self.cpu_load_at_submit <= 1.0:
            raise ValueError(f"record {self.task_id}: cpu load not in [0,1]")
        succeeded = self.final_state is TaskState.SUCCESS
        if succeeded != (self.completion_time_s is not None):
            raise ValueError(
                f"record {self.task_id}: completion_time_s must be present iff Success")
        if (self.spent_time_s is not None and self.completion_time_s is not None
                and self.spent_time_s > self.completion_time_s + 1e-9):
            raise ValueError(f"record {self.task_id}: spent time exceeds completion time")


@dataclass(frozen=True)
class NodeAnnouncement:
    node_id: str
    accepting: bool
    non_accept_until_s: float
    success_ratio: float
    act_s: float
    avg_cpu_idle: float
    avg_free_ram_mb: float
    offered_price: float
    issued_at_s: float
    price_bounds: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.success_ratio <= 1.0:
            raise ValueError("success_ratio not in [0,1]")
        if not self.accepting and not self.non_accept_until_s > self.issued_at_s:
            raise ValueError("a non-accepting announcement needs a future horizon")
        if self.price_bounds is not None:
            lo, hi = self.price_bounds
            if not lo <= self.offered_price <= hi:
                raise ValueError(f"offered price {self.offered_price} outside [{lo}, {hi}]")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("price_bounds")
        return d


@dataclass(frozen=True)
class Prediction:
    predicted_state: TaskState
    predicted_completion_s: float
    predicted_cost: float
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "predicted_state", TaskState(self.predicted_state))
        if self.predicted_state not in (TaskState.SUCCESS, TaskState.FAIL):
            raise ValueError("prediction must be Success or Fail")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} not in [0,1]")
        if not self.predicted_completion_s > 0:
            raise ValueError("predicted_completion_s must be > 0")


@dataclass(frozen=True)
class LocalSchedulerSpec:
    ls_id: str
    node_count: int
    gmips: float
    queue_deadline_status_s: float
    medium_dependability: float


@dataclass(frozen=True)
class JobGroupSpec:
    name: str
    job_count: int
    total_tasks: int
    deadline_s: float
    memory_mb: float
    length_mi: float
    reliability_weight: float
    completion_weight: float


@dataclass(frozen=True)
class ModelParams:
    """Every model knob the scenario file can set."""

    replications: int = 15
    warmup_depth: int = 120
    rsa_bins: int = 3
    rsa_discretization: str = "frequency"
    rsa_new_fraction: float = 0.01
    rsa_min_interval_s: float = 86400.0
    cbr_k: int = 5
    predicted_fail_threshold: float = 0.7
    pessimistic_prior: bool = False
    dependability_spread: float = 0.1
    alpha_min: float = 8.0
    alpha_max: float = 12.0
    price_tolerance_p: float = 0.2
    price_queue_capacity: int = 10
    price_window: int = 100
    total_ram_mb: float = 2048.0
    dtr_base: float = 1.0
    dtr_jitter: float = 0.2
    burst_mean_interval_s: float = 14400.0
    burst_min_s: float = 300.0
    burst_max_s: float = 1800.0
    burst_mips_factor: float = 0.5
    round_period_s: float = 30.0
    abort_on_job_failure: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    local_schedulers: tuple
    job_groups: tuple
    params: ModelParams = field(default_factory=ModelParams)

    def ls(self, ls_id: str) -> LocalSchedulerSpec:
        for spec in self.local_schedulers:
            if spec.ls_id == ls_id:
                return spec
        raise KeyError(ls_id)

    def group(self, name: str) -> JobGroupSpec:
        for spec in self.job_groups:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def scaled(self, factor: float) -> "Scenario":
        """Shrink node and task counts proportionally (at least one of each)."""
        if not factor > 0:
            raise ValueError("scale factor must be > 0")
        ls = tuple(dataclasses.replace(s, node_count=max(1, round(s.node_count * factor)))
                   for s in self.local_schedulers)
        groups = []
        for g in self.job_groups:
            tasks = max(1, round(g.total_tasks * factor))
            groups.append(dataclasses.replace(g, total_tasks=tasks,
                                              job_count=min(g.job_count, tasks)))
        return dataclasses.replace(self, local_schedulers=ls, job_groups=tuple(groups))


def _check_unit(value, path, label, out):
    if not isinstance(value, (int, float)) or math.isnan(value) or not 0.0 <= value <= 1.0:
        out.append(f"{path}: {label} ∉ [0,1] (got {value!r})")


def _check_positive(value, path, out):
    if not isinstance(value, (int, float)) or math.isnan(value) or not value > 0:
        out.append(f"{path}: must be > 0 (got {value!r})")


def validate_scenario(ls_specs: Iterable[LocalSchedulerSpec],
                      jg_specs: Iterable[JobGroupSpec],
                      params: Optional[ModelParams] = None) -> list[str]:
    """Return every invariant violation with its field path; empty means valid."""
    out: list[str] = []
    seen = set()
    for i, s in enumerate(ls_specs):
        base = f"local_scheduler[{i}]"
        if not valid_identifier(s.ls_id):
            out.append(f"{base}.ls_id: malformed identifier {s.ls_id!r}")
        else:
            base = f"local_scheduler[{s.ls_id}]"
            if s.ls_id in seen:
                out.append(f"{base}.ls_id: duplicate identifier")
            seen.add(s.ls_id)
        if not isinstance(s.node_count, int) or s.node_count <= 0:
            out.append(f"{base}.node_count: must be a positive integer (got {s.node_count!r})")
        _check_positive(s.gmips, f"{base}.gmips", out)
        if not isinstance(s.queue_deadline_status_s, (int, float)) or s.queue_deadline_status_s < 0:
            out.append(f"{base}.queue_deadline_status_s: must be >= 0")
        _check_unit(s.medium_dependability, f"{base}.medium_dependability", "dependability", out)

    seen = set()
    for i, g in enumerate(jg_specs):
        base = f"job_group[{i}]"
        if not valid_identifier(g.name):
            out.append(f"{base}.name: malformed identifier {g.name!r}")
        else:
            base = f"job_group[{g.name}]"
            if g.name in seen:
                out.append(f"{base}.name: duplicate identifier")
            seen.add(g.name)
        if not isinstance(g.job_count, int) or g.job_count <= 0:
            out.append(f"{base}.job_count: must be a positive integer")
        if not isinstance(g.total_tasks, int) or g.total_tasks <= 0:
            out.append(f"{base}.total_tasks: must be a positive integer")
        elif isinstance(g.job_count, int) and g.job_count > g.total_tasks:
            out.append(f"{base}.total_tasks: fewer tasks than jobs")
        for name in ("deadline_s", "memory_mb", "length_mi"):
            _check_positive(getattr(g, name), f"{base}.{name}", out)
        _check_unit(g.reliability_weight, f"{base}.reliability_weight", "weight", out)
        _check_unit(g.completion_weight, f"{base}.completion_weight", "weight", out)
        try:
            if abs(g.reliability_weight + g.completion_weight - 1.0) > 1e-9:
                out.append(f"{base}: reliability_weight + completion_weight != 1")
        except TypeError:
            pass

    if params is not None:
        out.extend(validate_params(params))
    return out


def validate_params(p: ModelParams) -> list[str]:
    out = []
    if p.replications < 1:
        out.append("params.replications: must be >= 1")
    if p.warmup_depth < 0:
        out.append("params.warmup_depth: must be >= 0")
    if p.rsa_bins < 2:
        out.append("params.rsa_bins: must be >= 2")
    if p.rsa_discretization not in ("frequency", "width"):
        out.append("params.rsa_discretization: must be 'frequency' or 'width'")
    if p.cbr_k < 1:
        out.append("params.cbr_k: must be >= 1")
    _check_unit(p.predicted_fail_threshold, "params.predicted_fail_threshold", "threshold", out)
    if not 0.0 <= p.dependability_spread <= 1.0:
        out.append("params.dependability_spread: must be in [0,1]")
    if not 0 < p.alpha_min <= p.alpha_max:
        out.append("params.alpha_min/alpha_max: need 0 < alpha_min <= alpha_max")
    if not 0.0 <= p.price_tolerance_p <= 0.5:
        out.append("params.price_tolerance_p: must be in [0,0.5]")
    if p.price_queue_capacity < 1:
        out.append("params.price_queue_capacity: must be >= 1")
    for name in ("total_ram_mb", "dtr_base", "round_period_s", "burst_mean_interval_s"):
        _check_positive(getattr(p, name), f"params.{name}", out)
    if not 0.0 <= p.dtr_jitter < 1.0:
        out.append("params.dtr_jitter: must be in [0,1)")
    if not 0 < p.burst_min_s <= p.burst_max_s:
        out.append("params.burst_min_s/burst_max_s: need 0 < min <= max")
    if not 0.0 < p.burst_mips_factor <= 1.0:
        out.append("params.burst_mips_factor: must be in (0,1]")
    return out


# -- scenario files -----------------------------------------------------------
#
# INI layout. Floats are written with repr() so load/save round-trips exactly.

_LS_PREFIX = "local_scheduler:"
_JG_PREFIX = "job_group:"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, kind, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ScenarioError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _field_types(cls) -> dict:
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints.get(f.type, str) for f in dataclasses.fields(cls)}


def _read_section(section, cls, skip, where):
    types = _field_types(cls)
    values = {}
    for key, raw in section.items():
        if key not in types or key in skip:
            raise ScenarioError(f"{where}: unknown key {key!r}")
        values[key] = _parse(raw, types[key], f"{where}.{key}")
    missing = [f.name for f in dataclasses.fields(cls)
               if f.name not in values and f.name not in skip
               and f.default is dataclasses.MISSING]
    if missing:
        raise ScenarioError(f"{where}: missing keys {missing}")
    return values


def loads_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from None
    if not cp.has_section("scenario"):
        raise ScenarioError("missing [scenario] section")
    name = cp["scenario"].get("name", "scenario")
    params = ModelParams(**_read_section(cp["params"], ModelParams, (), "params")) \
        if cp.has_section("params") else ModelParams()
    ls, groups = [], []
    for sec in cp.sections():
        if sec.startswith(_LS_PREFIX):
            vals = _read_section(cp[sec], LocalSchedulerSpec, ("ls_id",), sec)
            ls.append(LocalSchedulerSpec(ls_id=sec[len(_LS_PREFIX):], **vals))
        elif sec.startswith(_JG_PREFIX):
            vals = _read_section(cp[sec], JobGroupSpec, ("name",), sec)
            groups.append(JobGroupSpec(name=sec[len(_JG_PREFIX):], **vals))
        elif sec not in ("scenario", "params"):
            raise ScenarioError(f"unknown section [{sec}]")
    return Scenario(name=name, local_schedulers=tuple(ls), job_groups=tuple(groups),
                    params=params)


def dumps_scenario(sc: Scenario) -> str:
    buf = io.StringIO()
    buf.write("[scenario]\n")
    buf.write(f"name = {sc.name}\n\n[params]\n")
    for f in dataclasses.fields(ModelParams):
        buf.write(f"{f.name} = {_fmt(getattr(sc.params, f.name))}\n")
    for s in sc.local_schedulers:
        buf.write(f"\n[{_LS_PREFIX}{s.ls_id}]\n")
        for f in dataclasses.fields(LocalSchedulerSpec)[1:]:
            buf.write(f"{f.name} = {_fmt(getattr(s, f.name))}\n")
    for g in sc.job_groups:
        buf.write(f"\n[{_JG_PREFIX}{g.name}]\n")
        for f in dataclasses.fields(JobGroupSpec)[1:]:
            buf.write(f"{f.name} = {_fmt(getattr(g, f.name))}\n")
    return buf.getvalue()


BUNDLED = Path(__file__).parent / "data"


def resolve_scenario_path(path) -> Path:
    """Return ``path`` if it exists, else the bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED / p.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(path)


def load_scenario(path) -> Scenario:
    return loads_scenario(resolve_scenario_path(path).read_text(encoding="utf-8"))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc), encoding="utf-8")
