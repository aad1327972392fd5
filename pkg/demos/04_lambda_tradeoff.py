"""Sweep the fairness weight to trace an accuracy/parity tradeoff curve.

Each divergence family has a useful lambda range (beyond it the model
collapses toward constant predictions); the sweep walks a log grid inside
that range, which is exactly what the `fferm sweep` CLI command emits as
tradeoff_<divergence>.csv.
"""

import numpy as np

from fferm import TrainerConfig, parse_divergence, split, synth_biased
from fferm.experiments import average_over_seeds, default_lambda_grid, run_sweep
from fferm.metrics import naive_baseline_curve
from fferm.models import forward_batch
from fferm.training import train

data = synth_biased(seed=11, n=2000, d=5, bias=0.4)
train_data, test_data = split(data, 0.25, seed=11)

spec = parse_divergence("chi2")
cfg = TrainerConfig(divergence=spec, epochs_total=150, warmup_epochs=25, batch_size=8)
grid = default_lambda_grid(spec, points=5)

rows = run_sweep(train_data, cfg, grid, seeds=[0, 1], eval_data=test_data)
print(f"{'lambda':>8} {'accuracy':>9} {'dpv':>7}   (averaged over 2 seeds)")
for row in average_over_seeds(rows):
    print(f"{row['lambda']:>8.2f} {row['accuracy']:>9.3f} {row['dpv']:>7.3f}")

print()
print("Reference curve: zero out predictions with probability p (fair but blunt):")
rep = train(train_data, TrainerConfig(divergence=spec, lam=0.0, epochs_total=150,
                                      warmup_epochs=0, batch_size=8, seed=0), test_data)
probs, _ = forward_batch(rep.final_params, test_data.features)
preds = np.argmax(probs, axis=1)
for p, (acc, dpv) in zip(
    [0.0, 0.5, 1.0],
    naive_baseline_curve(preds, test_data.groups, test_data.labels, [0.0, 0.5, 1.0]),
):
    print(f"  p={p:.1f}: accuracy={acc:.3f} dpv={dpv:.3f}")
