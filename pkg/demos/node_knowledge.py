"""A single node learns from its own history.

The node gets a synthetic past, runs the rough-set analysis over it, and then
uses the induced rules plus nearest-neighbour reasoning to judge an incoming
task. Run with ``python demos/node_knowledge.py``.
"""

from gnmsim import gnm
from gnmsim.domain import ModelParams, NodeSpec, Task
from gnmsim.engine import RngStream
from gnmsim.roughset import DECISIONS, DecisionAttr
from gnmsim.workload import warmup_history

spec = NodeSpec(node_id="LS1-N0001", grid_mips=65.0, total_ram_mb=2048.0, dtr_base=1.0,
                dependability=0.72, standard_price_alpha=10.0, price_tolerance_p=0.2,
                local_scheduler_id="LS1")
node = gnm.NodeState(spec=spec, params=ModelParams(), rng=RngStream(7, "node:demo"))

# 120 past tasks, then the first analysis
warmup_history([node], depth=120)
print(f"history: {len(node.records)} tasks, {node.n_success} succeeded, {node.n_fail} failed")
print(f"success ratio {gnm.compute_success_ratio(node.records.cases):.3f}, "
      f"average completion {gnm.compute_act(node.records.cases):.0f} s")

matrix = node.matrices[DecisionAttr.FINAL_STATUS]
# rules on the other outcome columns restate the past (a missing completion
# time means the task failed); only submit-time conditions help a new task
usable = [r for r in matrix.rules if not any(a in DECISIONS for a, _ in r.conditions)]
print(f"\n{len(matrix.rules)} status rules, {len(usable)} on submit-time attributes; "
      f"strongest five of those:")
for r in sorted(usable, key=lambda r: (-r.support, -r.certainty))[:5]:
    conds = " and ".join(f"{a}={matrix.discretizer.label(a, v)}" for a, v in r.conditions)
    print(f"  if {conds or 'anything'} then {r.decision_value} "
          f"(support {r.support}, certainty {r.certainty:.2f})")

# an incoming task: 700 s of work against a 1200 s deadline
task = Task(task_id="J1-T001", job_id="J1", length_mi=45500.0, memory_mb=1.93,
            deadline_s=1200.0)
decision = gnm.evaluate_task(node, task, now_s=0.0)
print(f"\nincoming {task.task_id}: {type(decision).__name__}")
if isinstance(decision, gnm.Accept):
    p = decision.prediction
    print(f"  predicted {p.predicted_state.value} in {p.predicted_completion_s:.0f} s "
          f"(confidence {p.confidence:.2f}), offered price {decision.offered_price:.2f}/min")
else:
    print(f"  reason {decision.reason.value}")

ann = gnm.announce(node, 0.0)
lo, hi = gnm.price_bounds(spec)
print(f"\nannouncement: accepting={ann.accepting}, price {ann.offered_price:.2f} "
      f"within ({lo:.2f}, {hi:.2f})")
