#!/usr/bin/env python3
"""Anatomy of one hierarchical stage: the fixed-block precoder update.

With the rows of the worse-informed TX pinned, the free block is found either
by root-searching the Lagrange multiplier until the leftover sum power is met
exactly, or by the cheap lambda = 0 solve followed by clipping. This script
compares both on a single stage.
"""

import numpy as np

from hiermimo import (
    build_config,
    clip_w_opt,
    objective,
    solve_lambda_bisection,
    update_w_opt,
)
from hiermimo.metrics import mmse_filter_bank, mse_matrix, phi_diag_full, psi_diag_full
from hiermimo.wmmse import update_weights

from numpy.random import default_rng

cfg = build_config({"K": 3, "M": 1, "N": 1, "d": 1, "P": 4.0})
rng = default_rng(5)
H = (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))) / np.sqrt(2)
sigma = np.full((3, 3), 0.5)

# a consistent iterate: T at full power, MMSE filters, inverse-MSE weights
T = (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))) / np.sqrt(2)
T *= np.sqrt(cfg.P_tot) / np.linalg.norm(T)
G = mmse_filter_bank(cfg, H, T, sigma)
phi = phi_diag_full(sigma, T)
Om = update_weights(
    [mse_matrix(cfg, H, T, G.blocks[k], k, phi[cfg.rx_slices[k]]) for k in range(3)]
)
psi = psi_diag_full(sigma, G.aggregate, Om.aggregate)

w_in = T[:1]  # TX 1 already decided its row
budget = cfg.P_tot - np.linalg.norm(w_in) ** 2
print(f"fixed block uses {np.linalg.norm(w_in) ** 2:.3f} of P_tot = {cfg.P_tot}; "
      f"budget left {budget:.3f}")

lam, w_bis = solve_lambda_bisection(cfg, H, G, Om, psi, w_in, budget)
print(f"\nbisection variant: lambda = {lam:.6f}, "
      f"||W_opt||^2 = {np.linalg.norm(w_bis) ** 2:.12f}")

w_raw = update_w_opt(cfg, H, G, Om, psi, w_in, lam=0.0)
print(f"clipping variant:  lambda = 0 solve has ||W_opt||^2 = "
      f"{np.linalg.norm(w_raw) ** 2:.3f} (over budget)")
w_clip = clip_w_opt(w_raw, w_in, cfg.P_tot)
print(f"                   after clipping    ||W_opt||^2 = "
      f"{np.linalg.norm(w_clip) ** 2:.12f}")

for name, w in (("bisection", w_bis), ("clipping", w_clip)):
    val = objective(cfg, H, np.vstack([w_in, w]), G, Om, sigma)
    print(f"surrogate objective with {name:9s} block: {val:.6f}")
print("(bisection solves the constrained subproblem exactly, so it is never worse)")
