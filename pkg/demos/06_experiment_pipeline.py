# The experiment pipeline end to end
# ------------------------------------
# Folds x methods x evaluators x tolerances, with epsilon tuned on the
# validation split per cell, incremental JSONL output keyed by the config
# hash, and a flat CSV for plotting. The same thing is available from the
# shell:
#
#   robust-recourse run --config config.json --out results/
#   robust-recourse certify --ellipsoid ell.json --point '[1.0, -0.5]' --t 0
#   robust-recourse ensemble --spec ensemble.json --out manifest.json

import json
import tempfile
from pathlib import Path

from robust_recourse.pipeline import ExperimentConfig, run

cfg = ExperimentConfig(
    dataset={"synthetic": {"n": 400, "seed": 5}},
    model={"lam": 1e-3},
    epsilon_grid_relative=[0.05, 0.1, 0.2, 0.4],
    epsilon_targets_relative=[0.1],
    methods=["data-supported", "continuous"],
    evaluators=[{"kind": "retrain", "size": 3},
                {"kind": "dropout", "size": 15},
                {"kind": "ellipsoid-boundary", "size": 300}],
    folds={"fold_count": 2, "val_fraction": 0.2},
    seed=0,
    time_budget=120.0,
)
print(f"config hash: {cfg.content_hash()}")

out = Path(tempfile.mkdtemp(prefix="recourse-run-"))
summary, partial = run(cfg, out)
print(f"wrote {out}, partial={partial}\n")

header = f"{'cell':<42} {'eps*':>8} {'valid':>6} {'robust':>7} {'l2':>6} {'s/CE':>7}"
print(header)
print("-" * len(header))
for cell in summary["cells"]:
    print(f"{cell['key']:<42} {cell['epsilon']:>8.4f} {cell['validity']:>6.2f} "
          f"{cell['robustness']:>7.2f} {cell['mean_l2']:>6.2f} "
          f"{cell['per_instance_seconds']:>7.4f}")

# rerunning with resume skips everything already on disk
summary2, _ = run(cfg, out, resume=True)
print(f"\nresumed run recomputed {len(summary2['cells'])} cells (expected 0)")

csv_path = next(out.glob("results_*.csv"))
print(f"\nplot-ready CSV at {csv_path}:")
print(csv_path.read_text().splitlines()[0])
