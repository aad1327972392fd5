"""Robust variants: keeping fairness when the group labels are corrupted.

20% of the training group bits are flipped (the test set stays clean),
mimicking noisy or drifting sensitive attributes.  The two robust modes
hedge the fairness term against that shift: a dual-norm gradient penalty
for small perturbations, and a sup-norm worst case in closed form.
"""

from fferm import (
    RobustConfig,
    TrainerConfig,
    flip_sensitive,
    parse_divergence,
    robust_train_linf,
    robust_train_smallshift,
    split,
    synth_biased,
    train,
)

data = synth_biased(seed=3, n=2000, d=5, bias=0.4)
train_clean, test_clean = split(data, 0.25, seed=3)
train_noisy = flip_sensitive(train_clean, 0.2, seed=4)

spec = parse_divergence("chi2")
base = dict(divergence=spec, lam=60.0, epochs_total=200, warmup_epochs=30,
            batch_size=8, seed=3)

rep = train(train_noisy, TrainerConfig(**base), test_clean)
print(f"plain fair training : acc={rep.final('acc_test'):.3f} dpv={rep.final('dpv_test'):.3f}")

cfg = RobustConfig(**base, mode="gradnorm", delta=0.1)
rep = robust_train_smallshift(train_noisy, cfg, test_clean)
print(f"gradient-norm robust: acc={rep.final('acc_test'):.3f} dpv={rep.final('dpv_test'):.3f} "
      f"(penalty {rep.extra['penalty'][-1]:.4f})")

cfg = RobustConfig(**base, mode="linf", delta=0.05)
rep = robust_train_linf(train_noisy, cfg, test_clean)
print(f"sup-norm robust     : acc={rep.final('acc_test'):.3f} dpv={rep.final('dpv_test'):.3f} "
      f"(worst-case term {rep.extra['penalty'][-1]:.4f})")
