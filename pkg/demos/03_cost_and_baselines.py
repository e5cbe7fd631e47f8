# Per-step adapter cost, and how AROMA lines up against LoRA and ReLoRA.
#
# Cost is counted per sample for the factored product B (A x), with a
# length-k dot product costing k multiplies and k - 1 adds.
import numpy as np

from aroma.analysis import flops_step
from aroma.baselines import LoraConfig, ReloraConfig, train_lora, train_relora
from aroma.controller import ControllerConfig, run
from aroma.optim import WarmupSchedule
from aroma.tasks import TaskSpec, make_task

for m, n in [(4, 3), (768, 768)]:
    for w in (1, 2, 8):
        counts = {meth: flops_step(meth, m, n, w) for meth in ("aroma", "lora", "adalora")}
        print(f"{m}x{n} width {w}: " + ", ".join(f"{k} {c} {f}" for k, (c, f) in counts.items()))

task = make_task(TaskSpec(m=32, n=32, true_rank=3, base_scale=16.0, target_scale=4.0, seed=0))
schedule = WarmupSchedule(base_lr=1e-2)
runs = {
    "aroma": run(task.fresh_layers(), task, ControllerConfig(T=8000, T_in=500, dT_in=50), schedule=schedule),
    "lora r=3": train_lora(task.fresh_layers(), task, LoraConfig(rank=3, T=2000), schedule=schedule),
    "relora": train_relora(task.fresh_layers(), task, ReloraConfig(T_in=500, T=2000), schedule=schedule),
}

# AROMA's cost grows with the outer step and ends at zero once frozen; the
# fixed-rank methods pay their full width on every step.
for name, res in runs.items():
    recs = res.records[:-1]
    print(f"{name:9s} steps {len(recs):5d}  final rank {res.records[-1].ranks}  "
          f"mean flops/step {np.mean([r.flops_step for r in recs]):6.1f}  "
          f"total {sum(r.flops_step for r in recs):8d}  final loss {res.records[-1].train_loss:.3e}")
