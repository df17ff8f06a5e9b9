"""Eigenvalue counts of the 1D oscillator approaching the phase-space volume.

Run: python demos/weyl_sweep.py
"""
import math

from weyllab.harness import SweepConfig, run_weyl_sweep
from weyllab.model import catalog

model = catalog()["oscillator-1d"]
cfg = SweepConfig("oscillator", model, 1.0, (0.2, 0.1, 0.05, 0.02, 0.01))
out = run_weyl_sweep(cfg)

print(f"volume {out['volume']['value']:.10f} (pi = {math.pi:.10f})")
print(f"{'hbar':>6} {'N':>5} {'2 pi hbar N':>12} {'remainder':>11} {'order':>6}")
for r in out["rows"]:
    print(f"{r['hbar']:6.3f} {r['n_count']:5d} {r['scaled_count']:12.6f} "
          f"{r['remainder']:11.2e} {r['order']:6d}")
print("verdict:", out["verdict"]["status"])
