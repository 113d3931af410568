#!/usr/bin/env python3
"""Walk through the channel and nested-CSI model on the four-TX network.

Draws one channel realization, builds the hierarchical estimates, and checks
the advertised statistics empirically.
"""

import numpy as np

from hiermimo import CsiQuality, build_config, draw_channel, draw_csi

cfg = build_config({"K": 4, "M": 1, "N": 1, "d": 1, "rho2": 1.0, "P": 10.0})
rng = np.random.default_rng(0)

ch = draw_channel(cfg, rng)
print("one channel draw, H (rows = TX antennas, cols = RX antennas):")
print(np.round(ch.H, 3))

# TXs ordered by increasing CSI quality: error variance 0.25 at TX 1/2, 0 at TX 3/4
quality = CsiQuality.from_block_variances(cfg, [0.25, 0.25, 0.0, 0.0])
csi = draw_csi(cfg, ch, quality, rng)

print("\nper-TX estimation error ||hatH - H||_F:")
for j in range(cfg.K):
    err = np.linalg.norm(csi.estimate(j) - ch.H)
    print(f"  TX {j + 1}: {err:.4f}" + ("   (perfect CSI)" if err == 0 else ""))

print("\nnested access: TX j can reproduce the estimates of TXs 1..j")
for j in range(cfg.K):
    print(f"  TX {j + 1} sees estimates of TXs {[k + 1 for k in range(j + 1)]}")

# empirical moment check on a wide single-link draw: with sigma^2 = 0.25 and
# unit-variance links, hatH = sqrt(0.75) H + 0.5 Delta keeps unit variance
wide = build_config({"K": 1, "M": 400, "N": 250})
wide_q = CsiQuality.from_block_variances(wide, [0.25])
wch = draw_channel(wide, rng)
west = draw_csi(wide, wch, wide_q, rng).estimate(0)
print("\nmoment check over 100000 entries (sigma^2 = 0.25, rho^2 = 1):")
print(f"  var(hatH)              = {(west.conj() * west).real.mean():.4f}   (expected 1.0)")
resid = west - np.sqrt(0.75) * wch.H
print(f"  var(hatH - sqrt(.75)H) = {(resid.conj() * resid).real.mean():.4f}   (expected 0.25)")
