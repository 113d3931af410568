#!/usr/bin/env python3
"""Watch the robust weighted-MMSE solver converge on one instance.

Shows the monotone objective trace in pure sum-power mode, the exact power
use at every iterate, and the effect of the CSI-error terms on the solution.
"""

import numpy as np

from hiermimo import (
    SolverOptions,
    build_config,
    draw_channel,
    evaluate_rates,
    robust_wmmse,
    surrogate_rate_bits,
)

cfg = build_config({"K": 4, "M": 1, "N": 1, "d": 1, "rho2": 1.0, "P": 10.0})
rng = np.random.default_rng(3)
H = draw_channel(cfg, rng).H

opts = SolverOptions(per_tx_normalize_each_round=False, tolerance=1e-8)

print("perfect-CSI solve (sum power constraint):")
state = robust_wmmse(cfg, H, None, opts)
tr = state.objective_trace
for i in [0, 1, 2, 4, 9, len(tr) - 1]:
    print(f"  round {i + 1:3d}: objective {tr[i]: .8f}")
print(f"  converged: {state.converged} after {state.iterations} rounds")
print(f"  sum power used: {np.linalg.norm(state.T) ** 2:.12f} of {cfg.P_tot}")
print(f"  lambda = {state.lam:.6f}, beta = {state.beta:.6f}")
print(f"  sum rate on H: {evaluate_rates(cfg, H, state.T, enforce_power=False).total:.4f} bits")

print("\nsame instance, robust solve for error std 0.5 on every entry:")
sigma = np.full((4, 4), 0.5)
rstate = robust_wmmse(cfg, H, sigma, opts)
print(f"  converged: {rstate.converged} after {rstate.iterations} rounds")
print(f"  surrogate (averaged-MSE) rate: {surrogate_rate_bits(cfg, H, rstate.T, sigma):.4f} bits")
print(f"  rate if H were the truth:      {evaluate_rates(cfg, H, rstate.T, enforce_power=False).total:.4f} bits")
print("  (the robust precoder backs off the aggressive zero-forcing directions)")

increases = sum(
    tr[i + 1] > tr[i] + 1e-9 for i in range(len(tr) - 1)
)
print(f"\nobjective increases beyond 1e-9 across both traces: {increases}")
