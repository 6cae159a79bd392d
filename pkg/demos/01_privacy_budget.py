"""How much privacy does one 1-bit encoding spend?

Prints the closed-form order-1.5 RDP budget under both log bases, compares
it to the exact divergence between the two most distant inputs, and shows
what composing over training rounds costs after conversion to (eps, gamma)-DP.

    python demos/01_privacy_budget.py
"""

import numpy as np

from dgrec.privacy import LdpConfig, compose_to_dp, exact_renyi_divergence, rdp_epsilon

delta, beta = 0.1, 1.0
print(f"clip bound delta={delta}, perturbation strength beta={beta}")
for base in ("e", "10"):
    print(f"  per-coordinate budget (log base {base}): {rdp_epsilon(1, delta, beta, base):.4f}")

# The closed form is an upper bound; the true worst case is the pair (+delta, -delta).
cfg = LdpConfig(delta, beta)
exact = exact_renyi_divergence(cfg, delta, -delta)
print(f"  exact worst-case divergence: {exact:.4f} (bound is {rdp_epsilon(1, delta, beta) / exact:.1f}x looser)")

print("\nbudget grows linearly with the number of encoded coordinates:")
for n_s in (1, 100, 10_000):
    print(f"  n_s={n_s:>6}: {rdp_epsilon(n_s, delta, beta):.1f}")

print("\n(eps, 1e-5)-DP after T rounds for a single coordinate:")
for T in (1, 10, 50):
    print(f"  T={T:>3}: {compose_to_dp(rdp_epsilon(1, delta, beta), T, 1e-5):.2f}")

print("\nstronger perturbation (smaller beta) buys privacy:")
for b in np.linspace(0.5, 4, 4):
    print(f"  beta={b:.2f}: eps={rdp_epsilon(1, delta, b):.4f}")
