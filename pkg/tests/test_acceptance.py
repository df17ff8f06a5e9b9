"""Acceptance suite: eight end-to-end criteria at their fixed tolerances.

Each ``criterion_N`` returns ``(passed, detail)``.  The pytest wrappers record
the outcome in ``RESULTS`` and the terminal summary prints one line per
criterion.  Running this file as a script prints the same lines.
"""
import math
import time

import numpy as np
import pytest

from helpers import random_partition, random_sparse_symmetric
from weyllab import harness
from weyllab.assembly import assemble, model_grid, pair_grids
from weyllab.harness import GridPolicy, SweepConfig, random_rank_lemma_suite, run_relative_check
from weyllab.ims import build_partition, commutator_check, commutator_convergence, ims_residual
from weyllab.model import ModelSpec, catalog, compactify, harmonic, line, plane
from weyllab.phasespace import volume_monte_carlo, volume_reduced
from weyllab.spectra import count_below, dense_count_oracle

RESULTS = {}


def lattice_count(hbar, lam=1.0):
    """#{(j, k) in Z^2 : hbar^2 (j^2 + k^2) < lam}, by direct enumeration."""
    r = int(math.floor(math.sqrt(lam) / hbar)) + 1
    j = np.arange(-r, r + 1)
    s = j[:, None] ** 2 + j[None, :] ** 2
    return int(np.count_nonzero(hbar ** 2 * s < lam))


def criterion_1():
    start = time.perf_counter()
    model = ModelSpec(line(), harmonic(1.0))
    cfg = SweepConfig("oscillator", model, 1.0, (0.2, 0.1, 0.05, 0.02))
    out = harness.run_weyl_sweep(cfg)
    elapsed = time.perf_counter() - start
    vol = math.pi  # 2 * int_{-1}^{1} sqrt(1 - x^2) dx
    rows = out["rows"]
    rel = abs(rows[-1]["scaled_count"] - vol) / vol
    tail = [abs(r["scaled_count"] - vol) for r in rows[-3:]]
    monotone = all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
    ok = rel <= 0.05 and monotone and elapsed <= 60.0
    counts = [r["n_count"] for r in rows]
    return ok, f"counts {counts}, rel remainder {rel:.2e}, monotone {monotone}, {elapsed:.1f}s"


def _torus_count(hbar, refine):
    model = catalog()["torus"]
    grid = model_grid(model, hbar / refine)
    return count_below(assemble(model, grid, hbar), 1.0).count


def criterion_2():
    start = time.perf_counter()
    target = lattice_count(0.1)
    converged = [_torus_count(0.1, r) for r in (4, 8)]
    n_fine = _torus_count(0.05, 4)
    elapsed = time.perf_counter() - start
    settled = converged[0] == converged[1]
    count_ok = settled and abs(converged[-1] - target) <= 2
    scaled = (2 * math.pi * 0.05) ** 2 * n_fine
    vol = 4 * math.pi ** 3
    rel = abs(scaled - vol) / vol
    ok = count_ok and rel <= 0.05 and elapsed <= 300.0
    return ok, (f"N(0.1) = {converged} on h = hbar/4, hbar/8 vs lattice {target}; "
                f"scaled N(0.05) = {scaled:.3f} vs {vol:.3f} (rel {rel:.2e}); {elapsed:.1f}s")


def criterion_3():
    rng = np.random.default_rng(3)
    worst, count = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(5, 400))
        H = random_sparse_symmetric(rng, n) * float(rng.uniform(0.1, 100.0))
        phi, psi = random_partition(rng, n)
        worst = max(worst, ims_residual(H, phi, psi) / abs(H).max())
        count += 1
    for model in (ModelSpec(line(), harmonic(1.0)), ModelSpec(plane(), harmonic(1.0, 1.0))):
        for lam, spacing in ((0.5, 0.1), (1.0, 0.1), (2.0, 0.08)):
            pair = compactify(model, lam, 2.0)
            ga, gb = pair_grids(pair, spacing, lam)
            pa, pb = build_partition(pair, ga, gb, lam)
            for hbar in (0.2, 0.1):
                for m, g, pou in ((pair.model_a, ga, pa), (pair.model_b, gb, pb)):
                    op = assemble(m, g, hbar)
                    worst = max(worst, ims_residual(op, pou) / op.norm_max)
                    count += 1
    ok = count >= 100 and worst <= 1e-12
    return ok, f"{count} pairs, worst residual / ||H||_max = {worst:.2e}"


def _commutator_series(model, lam, spacing, hbar):
    pair = compactify(model, lam, 1.0)
    reports = []
    for k in range(3):
        ga, gb = pair_grids(pair, spacing / 2 ** k, lam)
        _, pb = build_partition(pair, ga, gb, lam)
        reports.append(commutator_check(assemble(pair.model_b, gb, hbar), pb))
    return commutator_convergence(reports), all(r.certified for r in reports)


def criterion_4():
    parts, ok = [], True
    cases = (("1D", ModelSpec(line(), harmonic(1.0)), 0.05),
             ("2D", ModelSpec(plane(), harmonic(1.0, 1.0)), 0.1))
    for name, model, spacing in cases:
        fit, certified = _commutator_series(model, 1.0, spacing, 0.1)
        ok &= fit.ok and certified
        parts.append(f"{name} slope {fit.slope:.3f} certified {certified}")
    return ok, "; ".join(parts)


HBARS_5 = {1: (0.2, 0.1, 0.05, 0.02), 2: (0.2, 0.15, 0.1, 0.075)}


def criterion_5():
    start = time.perf_counter()
    fails, rows, vacuous = [], 0, 0
    for model in (ModelSpec(line(), harmonic(1.0)), ModelSpec(plane(), harmonic(1.0, 1.0))):
        n = model.dimension
        for lam in (0.5, 1.0, 2.0):
            pair = compactify(model, lam, 1.0)
            out = run_relative_check(pair, lam, HBARS_5[n], GridPolicy())
            for side in ("forward", "reverse"):
                for r in out[side]:
                    rows += 1
                    vacuous += r["status"] == "VACUOUS"
                    if r["status"] == "FAIL":
                        fails.append((n, lam, side, r["hbar"]))
    elapsed = time.perf_counter() - start
    return not fails, (f"{rows} rows, {len(fails)} FAIL, {vacuous} VACUOUS {fails[:4]}; "
                       f"{elapsed:.1f}s")


def criterion_6():
    out = random_rank_lemma_suite(200, seed=6)
    ok = out["failures"] == 0 and out["precondition_failed"] == 0
    return ok, f"{out['instances']} instances, {out['failures']} failures"


def criterion_7():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(10, 501))
        A = random_sparse_symmetric(rng, n)
        w = np.linalg.eigvalsh(A.toarray())
        lam = float(rng.choice([rng.uniform(w[0] - 1, w[-1] + 1), w[rng.integers(n)]]))
        fast = count_below(A, lam)
        slow = dense_count_oracle(A, lam, shift=fast.shift)
        mismatches += fast.count != slow.count
    return mismatches == 0, f"500 matrices, {mismatches} mismatches"


def criterion_8():
    worst, bad = 0.0, []
    for name, model in catalog().items():
        for lam in (0.5, 1.0, 2.0):
            q = volume_reduced(model, lam)
            mc = volume_monte_carlo(model, lam, samples=10 ** 6, seed=8)
            diff = abs(q.value - mc.value)
            sigma = math.hypot(q.error, mc.error)
            if sigma > 0:
                z = diff / sigma
                good = z <= 3.0
            else:
                z = 0.0
                good = diff <= 1e-12 * max(1.0, abs(q.value))
            worst = max(worst, z)
            if not good:
                bad.append((name, lam))
    osc = volume_reduced(catalog()["oscillator-1d"], 1.0)
    exact = abs(osc.value - math.pi) <= osc.error
    ok = not bad and exact
    return ok, (f"worst z {worst:.2f}, outliers {bad}; oscillator |I - pi| = "
                f"{abs(osc.value - math.pi):.1e} vs estimate {osc.error:.1e}")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    passed, detail = CRITERIA[number]()
    RESULTS[number] = (passed, detail)
    assert passed, detail


def test_torus_count_matches_discrete_spectrum():
    # The scheme's eigenvalues (4 hbar^2 / h^2) sin^2(j h / 2) sit below hbar^2 j^2,
    # so lattice points exactly on the circle j^2 + k^2 = 1 / hbar^2 are counted.
    def closed_count(hbar):
        r = int(1 / hbar) + 1
        j = np.arange(-r, r + 1)
        s = j[:, None] ** 2 + j[None, :] ** 2
        return int(np.count_nonzero(hbar ** 2 * s <= 1.0 + 1e-12))

    assert closed_count(0.1) == 317
    assert _torus_count(0.1, 4) == closed_count(0.1)


def format_line(number, passed, detail):
    return f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"


if __name__ == "__main__":
    for k, fn in CRITERIA.items():
        print(format_line(k, *fn()), flush=True)
