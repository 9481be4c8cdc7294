#!/usr/bin/env python3
"""Small end-to-end comparison: online RL with and without augmentation.

Runs a shortened point-goal experiment twice (augmented vs plain replay
buffer, same seeds) through the experiment harness and overlays the two
success curves. Configs here are scaled down to finish in a few minutes;
see configs/ for full desk-scale runs.
"""

import json
from pathlib import Path

from trajsynth.harness import parse_config, run_experiment, plot_learning_curves

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

base = {
    "env": {"name": "pointgoal"},
    "seeds": [0, 1, 2],
    "mode": "offline_to_online",
    "rho": 0.3,
    "L": "auto",
    "offline_data": {"tier": "expert", "episodes": 40, "seed": 7},
    "presets": [5, 10, 15],
    "diffusion": {"train_steps": 4000, "hidden": [128, 128], "n_steps": 50, "estimator_steps": 1500},
    "agent": {"hidden": [64, 64], "gamma": 0.9, "lr": 5e-4, "target_sync": 500, "eps_decay_steps": 8000},
    "total_steps": 15000,
    "eval_every": 500,
    "eval_episodes": 10,
    "max_workers": 2,
    "output_dir": str(OUT / "run_augmented"),
}

control = dict(base)
control.update(rho=0.0, attach_diffuser=False, output_dir=str(OUT / "run_control"))

print("running augmented arm...")
res_aug = run_experiment(parse_config(base))
print("running control arm...")
res_ctrl = run_experiment(parse_config(control))

png = OUT / "06_acceleration.png"
plot_learning_curves([res_aug["aggregate_csv"], res_ctrl["aggregate_csv"]], png,
                     labels=["augmented (rho=0.3)", "plain buffer"])
print(f"figure: {png}")

for name, res in (("augmented", res_aug), ("control", res_ctrl)):
    rows = res["aggregate_rows"]
    final = rows[-1]
    print(f"{name}: final median success {final['median_success']:.2f}, "
          f"aggregate CSV {res['aggregate_csv']}")
