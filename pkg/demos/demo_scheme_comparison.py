#!/usr/bin/env python3
"""Small-scale version of the headline experiment: sum rate vs SNR.

Runs 50 paired trials of the four schemes on the four-TX network where TXs 1
and 2 have noisy CSI (error variance 0.25) and TXs 3 and 4 know the channel.
The full 1000-trial sweep is the CLI's job:

    simulate --config configs/hier4.ini --out results.csv --plot plot.py
"""

from hiermimo import CsiQuality, ExperimentSpec, Scheme, build_config, run_sweep

cfg = build_config({"K": 4, "M": 1, "N": 1, "d": 1, "rho2": 1.0, "P": 1.0})
quality = CsiQuality.from_block_variances(cfg, [0.25, 0.25, 0.0, 0.0])
spec = ExperimentSpec(
    network=cfg,
    quality=quality,
    snr_grid_db=(0.0, 10.0, 20.0, 30.0),
    trials=50,
    schemes=tuple(Scheme),
    base_seed=42,
)

print(f"running {spec.trials} paired trials x {len(spec.snr_grid_db)} SNR points ...")
table, _ = run_sweep(spec)

schemes = [s for s in Scheme]
print(f"\n{'SNR [dB]':>9s} " + " ".join(f"{s.value:>12s}" for s in schemes))
for snr in spec.snr_grid_db:
    cells = []
    for s in schemes:
        row = next(r for r in table.rows if r.snr_db == snr and r.scheme == s)
        cells.append(f"{row.mean_sum_rate_bits:9.2f}+-{row.std_err:4.2f}")
    print(f"{snr:9.0f} " + " ".join(f"{c:>12s}" for c in cells))

print(
    "\nboth hierarchical variants keep a positive high-SNR slope thanks to the"
    "\nwell-informed TXs, while the naive distributed baseline saturates."
)
