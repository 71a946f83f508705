"""Evaluation measures computed from finished run logs: completion ratio,
prediction accuracy, iteration counts and per-task overhead accounting.

Everything here reads a :class:`~gnmsim.simulation.RunLog` and nothing else,
so any number can be recomputed from the written logs.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .domain import TaskState

NO_DATA = None

RESULT_COLUMNS = (
    "policy", "group", "ls", "rep", "seed", "tasks", "success_in_deadline",
    "completion_ratio", "predictions", "correct_predictions", "prediction_accuracy",
    "reiterations", "given_up", "unallocatable", "aborted", "max_attempts",
    "mean_selection_s", "mean_retry_s", "mean_transfer_s", "mean_queue_s",
    "mean_execution_s", "mean_slack_s",
)

ALLOCATION_COLUMNS = (
    "policy", "ls", "group", "rep", "task_id", "job_id", "attempt", "node_id",
    "dispatched_at", "started_at", "transfer_s", "predicted_state", "predicted_completion_s",
    "confidence", "outcome", "finished_at", "resolution",
)


# -- completion ratio -----------------------------------------------------------

def in_deadline(ticket: dict) -> bool:
    return (ticket["status"] == "success"
            and ticket["finished_at_s"] <= ticket["abs_deadline_s"])


def run_completion_ratio(log) -> float:
    """Tasks that succeeded within their deadline over all tasks of the run."""
    if not log.tickets:
        return 0.0
    return sum(1 for t in log.tickets if in_deadline(t)) / len(log.tickets)


@dataclass(frozen=True)
class RatioSummary:
    mean: float
    std: float
    values: tuple

    @property
    def n(self) -> int:
        return len(self.values)


def _select(logs, group=None, ls=None, policy=None) -> list:
    return [l for l in logs
            if (group is None or l.group == group)
            and (ls is None or l.ls_id == ls)
            and (policy is None or l.policy == policy)]


def completion_ratio(logs, group: Optional[str] = None, ls: Optional[str] = None,
                     policy: Optional[str] = None) -> RatioSummary:
    """Mean and sample standard deviation of the per-replication ratio.

    ``logs`` may be a single run log or a sequence of them; runs are filtered
    by group, LS and policy when those are given.
    """
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    values = tuple(run_completion_ratio(l) for l in _select(logs, group, ls, policy))
    if not values:
        raise ValueError("no runs match the selection")
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return RatioSummary(statistics.fmean(values), std, values)


# -- prediction accuracy ----------------------------------------------------------

def scored_predictions(log) -> list:
    """(predicted, actual) state pairs for attempts that carried a prediction
    and ended in Success or Fail."""
    out = []
    for a in log.allocations:
        if a.prediction is None or a.outcome not in (TaskState.SUCCESS, TaskState.FAIL):
            continue
        out.append((a.prediction.predicted_state, a.outcome))
    return out


@dataclass(frozen=True)
class Accuracy:
    overall: Optional[float]
    correct: int
    total: int
    per_ls: dict = field(default_factory=dict)


def _ratio(correct: int, total: int) -> Optional[float]:
    return correct / total if total else NO_DATA


def prediction_accuracy(logs) -> Accuracy:
    """Share of predictions whose state matched the task's actual end state.

    Aborted attempts are excluded; with nothing left the value is ``None``.
    """
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    by_ls: dict = {}
    for l in logs:
        c, n = by_ls.get(l.ls_id, (0, 0))
        pairs = scored_predictions(l)
        by_ls[l.ls_id] = (c + sum(1 for p, a in pairs if p is a), n + len(pairs))
    correct = sum(c for c, _ in by_ls.values())
    total = sum(n for _, n in by_ls.values())
    per_ls = {k: _ratio(c, n) for k, (c, n) in sorted(by_ls.items())}
    return Accuracy(_ratio(correct, total), correct, total, per_ls)


# -- iterations -------------------------------------------------------------------

@dataclass(frozen=True)
class IterationStats:
    reiterations: int
    given_up: int
    unallocatable: int
    aborted: int
    max_attempts: dict

    @property
    def total(self) -> int:
        return self.reiterations

    @property
    def peak_attempts(self) -> int:
        return max(self.max_attempts.values(), default=0)


def iteration_stats(log) -> IterationStats:
    """Re-iterations and give-ups from the scheduler's event log.

    Give-ups for lack of deadline budget after a failure are counted apart
    from tasks that no node could take before their deadline ran out.
    """
    counts = {"ReIterated": 0, "GivenUp": 0, "Unallocatable": 0, "Aborted": 0}
    for ev in log.ls_log:
        kind = ev["event"]
        if kind == "GivenUp" and ev.get("reason") == "Unallocatable":
            counts["Unallocatable"] += 1
        elif kind in counts:
            counts[kind] += 1
    attempts: dict = {}
    for a in log.allocations:
        attempts[a.task_id] = max(attempts.get(a.task_id, 0), a.attempt_number)
    return IterationStats(counts["ReIterated"], counts["GivenUp"], counts["Unallocatable"],
                          counts["Aborted"], attempts)


# -- overhead -----------------------------------------------------------------------

@dataclass(frozen=True)
class Overhead:
    task_id: str
    selection_s: float
    retry_s: float
    transfer_s: float
    queue_s: float
    execution_s: float
    slack_s: float

    @property
    def total_s(self) -> float:
        return self.selection_s + self.retry_s + self.transfer_s + self.queue_s + self.execution_s


def overhead_accounting(log) -> list:
    """Timeline breakdown of every successful task.

    selection covers the rounds spent pending before the first dispatch,
    retry the time lost on failed attempts, then the final attempt's
    transfer, queueing and execution. Slack is what is left of the deadline.
    """
    attempts: dict = {}
    for a in log.allocations:
        attempts.setdefault(a.task_id, []).append(a)
    out = []
    for t in log.tickets:
        if t["status"] != "success":
            continue
        tries = attempts[t["task_id"]]
        first, last = tries[0], tries[-1]
        transfer = last.transfer_s or 0.0
        out.append(Overhead(
            task_id=t["task_id"],
            selection_s=first.dispatched_at_s - t["submitted_at_s"],
            retry_s=last.dispatched_at_s - first.dispatched_at_s,
            transfer_s=transfer,
            queue_s=last.started_at_s - last.dispatched_at_s - transfer,
            execution_s=last.finished_at_s - last.started_at_s,
            slack_s=t["abs_deadline_s"] - t["finished_at_s"],
        ))
    return out


# -- output -------------------------------------------------------------------------

def _mean(xs: Sequence[float]):
    return statistics.fmean(xs) if xs else ""


def result_row(log) -> dict:
    acc = prediction_accuracy(log)
    it = iteration_stats(log)
    ov = overhead_accounting(log)
    row = {
        "policy": log.policy, "group": log.group, "ls": log.ls_id, "rep": log.rep,
        "seed": log.seed, "tasks": len(log.tickets),
        "success_in_deadline": sum(1 for t in log.tickets if in_deadline(t)),
        "completion_ratio": run_completion_ratio(log),
        "predictions": acc.total, "correct_predictions": acc.correct,
        "prediction_accuracy": "" if acc.overall is None else acc.overall,
        "reiterations": it.reiterations, "given_up": it.given_up,
        "unallocatable": it.unallocatable, "aborted": it.aborted,
        "max_attempts": it.peak_attempts,
    }
    for part in ("selection_s", "retry_s", "transfer_s", "queue_s", "execution_s", "slack_s"):
        row[f"mean_{part}"] = _mean([getattr(o, part) for o in ov])
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results_csv(logs: Iterable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for l in logs:
        row = result_row(l)
        w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def write_long_csv(logs: Iterable, fh) -> None:
    """One (run key, metric, value) row per measure, for plotting scripts."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("policy", "group", "ls", "rep", "metric", "value"))
    for l in logs:
        row = result_row(l)
        for c in RESULT_COLUMNS[5:]:
            w.writerow([l.policy, l.group, l.ls_id, l.rep, c, _fmt(row[c])])


def write_allocations_csv(logs: Iterable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ALLOCATION_COLUMNS)
    for l in logs:
        for a in l.allocations:
            p = a.prediction
            w.writerow([_fmt(v) for v in (
                l.policy, l.ls_id, l.group, l.rep, a.task_id, a.job_id, a.attempt_number,
                a.node_id, a.dispatched_at_s,
                "" if a.started_at_s is None else a.started_at_s,
                "" if a.transfer_s is None else a.transfer_s,
                "" if p is None else p.predicted_state.value,
                "" if p is None else p.predicted_completion_s,
                "" if p is None else p.confidence,
                "" if a.outcome is None else a.outcome.value,
                "" if a.finished_at_s is None else a.finished_at_s,
                a.resolution or "")])


def summary(logs: Sequence) -> dict:
    """Per (policy, group, LS) aggregates over replications."""
    keys = []
    for l in logs:
        k = (l.policy, l.group, l.ls_id)
        if k not in keys:
            keys.append(k)
    cells = []
    for policy, group, ls in keys:
        runs = _select(logs, group, ls, policy)
        cr = completion_ratio(runs)
        acc = prediction_accuracy(runs)
        its = [iteration_stats(r) for r in runs]
        cells.append({
            "policy": policy, "group": group, "ls": ls, "replications": cr.n,
            "completion_ratio_mean": cr.mean, "completion_ratio_std": cr.std,
            "prediction_accuracy": acc.overall, "predictions": acc.total,
            "reiterations": sum(i.reiterations for i in its),
            "given_up": sum(i.given_up for i in its),
            "unallocatable": sum(i.unallocatable for i in its),
        })
    policies = []
    for l in logs:
        if l.policy not in policies:
            policies.append(l.policy)
    accuracy = {}
    for p in policies:
        acc = prediction_accuracy(_select(logs, policy=p))
        accuracy[p] = {"overall": acc.overall, "per_ls": acc.per_ls, "predictions": acc.total}
    return {"cells": cells, "prediction_accuracy": accuracy}


def write_summary_json(logs: Sequence, fh) -> None:
    json.dump(summary(logs), fh, indent=2, sort_keys=True)
    fh.write("\n")


def overhead_rows(log) -> list:
    return [asdict(o) for o in overhead_accounting(log)]
