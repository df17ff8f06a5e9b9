"""Compare a confining model with its compact partner on a circle.

The partner agrees with V = x^2 near {V <= 1} and is raised to a constant
elsewhere.  Counts on the two sides bracket each other up to c hbar^2.

Run: python demos/relative_pair.py
"""
from weyllab.harness import GridPolicy, run_relative_check
from weyllab.model import catalog, compactify

lam = 1.0
pair = compactify(catalog()["oscillator-1d"], lam, margin=1.0)
out = run_relative_check(pair, lam, (0.2, 0.1, 0.05), GridPolicy(), ims_suite=True)

print(f"delta = {out['margin']['delta']:.4f}, epsilon = {out['margin']['epsilon']:.4f}")
for f, r, s in zip(out["forward"], out["reverse"], out["sandwich"]):
    print(f"hbar {f['hbar']:.2f}: N(M, lam) = {f['n_first']:3d} >= "
          f"N(Mbar, {f['lower_level']:.4f}) = {f['n_second']:3d} [{f['status']}]; "
          f"reverse [{r['status']}]; scaled gap {s['difference']:.3f}")
fit = out["commutator_refinement"]["fit"]
print(f"double commutator slope {fit['slope']:.2f} over spacings {fit['spacings']}")
