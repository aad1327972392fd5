"""Tour of the divergence toolbox: generators, conjugates, dual equality.

Every supported divergence is defined by a convex generator f with f(1) = 0.
Its Legendre-Fenchel conjugate f* turns the divergence into a maximization
over per-cell dual variables, which is what makes minibatch training work.
This script shows the two evaluations agree and the conjugate plays nicely
with Fenchel-Young.
"""

import numpy as np

from fferm import (
    conjugate,
    conjugate_grad,
    divergence_direct,
    divergence_variational,
    f_value,
    parse_divergence,
)

rng = np.random.default_rng(0)

p = np.array([0.5, 0.3, 0.2])
q = np.array([0.25, 0.35, 0.4])

print("Two distributions:")
print("  p =", p)
print("  q =", q)
print()
print(f"{'divergence':<12} {'direct':>10} {'variational':>12} {'gap':>9}")
for token in ["chi2", "kl", "reverse-kl", "tv", "js", "hellinger", "alpha:0.5"]:
    spec = parse_divergence(token)
    d = divergence_direct(spec, p, q)
    v = divergence_variational(spec, p, q)
    print(f"{token:<12} {d:>10.6f} {v:>12.6f} {abs(d - v):>9.1e}")

print()
print("Fenchel-Young: a*t - f(t) <= f*(a), tight exactly at t = (f*)'(a)")
spec = parse_divergence("kl")
for a in (-1.0, 0.5, 2.0):
    t_star = conjugate_grad(spec, a)
    slack_at_random = a * 1.7 - f_value(spec, 1.7) - conjugate(spec, a)
    slack_at_tstar = a * t_star - f_value(spec, t_star) - conjugate(spec, a)
    print(f"  a={a:+.1f}: slack at t=1.7 -> {slack_at_random:+.4f}, "
          f"at the maximizer t={t_star:.3f} -> {slack_at_tstar:+.1e}")
