"""Knowledge-driven scheduling against random assignment on the three
scenario pools, at a tenth of full size and three replications.

Run with ``python demos/compare_policies.py`` (about ten seconds).
"""

from gnmsim import metrics
from gnmsim.domain import load_scenario
from gnmsim.scheduling import BASELINE, GNM
from gnmsim.simulation import run_experiment

scenario = load_scenario("paper-tables.cfg").scaled(0.1)
logs = run_experiment(scenario, base_seed=42, reps=3)

print(f"{'pool':5} {'group':11} {'gnm':>7} {'random':>7} {'retries':>8} {'gave up':>8}")
for ls in scenario.local_schedulers:
    for group in scenario.job_groups:
        a = metrics.completion_ratio(logs, group.name, ls.ls_id, GNM)
        b = metrics.completion_ratio(logs, group.name, ls.ls_id, BASELINE)
        runs = [l for l in logs if l.policy == GNM and l.ls_id == ls.ls_id
                and l.group == group.name]
        retries = sum(metrics.iteration_stats(l).reiterations for l in runs)
        gave_up = sum(metrics.iteration_stats(l).given_up for l in runs)
        print(f"{ls.ls_id:5} {group.name:11} {a.mean:7.3f} {b.mean:7.3f} {retries:8d} "
              f"{gave_up:8d}")

acc = metrics.prediction_accuracy([l for l in logs if l.policy == GNM])
print(f"\nstatus predictions correct: {acc.correct}/{acc.total} ({acc.overall:.3f})")
