"""hbar sweeps: scaled eigenvalue counts against phase-space volume, and the
two-sided comparison between a confining model and its compact partner."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence

from . import __version__, assembly
from .assembly import TruncationError, model_grid, pair_grids, truncation_audit
from .ims import (build_partition, commutator_check, commutator_convergence, ims_residual,
                  is_vacuous, localized_bound_check, transport)
from .model import EquivalentPair, ModelSpec, compactify, sublevel_set_bound
from .phasespace import continuity_margin, volume_reduced
from .spectra import (CountingError, EigenSolverError, count_below, rank_lemma_check,
                      spectral_projector)

CHECKS = ("WeylConvergence", "RelativeInequality", "SandwichUpper", "IMSSuite", "RankLemma")
RELATIVE_CHECKS = ("RelativeInequality", "SandwichUpper", "IMSSuite", "RankLemma")
CROSSING_WINDOW = 10.0
SMALL_ORDER = 3000
PROJECTOR_ORDER = 4000


class NumericalFailure(RuntimeError):
    """Counting or refinement could not produce a trustworthy number."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class GridPolicy:
    resolution_factor: float = 4.0
    safety_factor: float = 4.0
    audit_threshold: float = 2.0
    spacing: float | None = None
    max_refinements: int = 2
    refine_ratio: float = 1.5

    def __post_init__(self):
        if self.resolution_factor <= 0 or self.refine_ratio <= 1:
            raise ValueError("resolution factor must be positive and refine ratio > 1")
        if self.safety_factor < self.audit_threshold:
            raise ValueError(f"safety factor must be at least {self.audit_threshold}")
        if self.spacing is not None and not self.spacing > 0:
            raise ValueError("fixed spacing must be positive")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be non-negative")

    def spacing_for(self, hbar: float, lambda_max: float) -> float:
        if self.spacing is not None:
            return self.spacing
        return assembly.resolution_spacing(hbar, lambda_max, self.resolution_factor)

    def to_dict(self) -> dict:
        return {"resolution_factor": self.resolution_factor, "safety_factor": self.safety_factor,
                "audit_threshold": self.audit_threshold, "spacing": self.spacing,
                "max_refinements": self.max_refinements, "refine_ratio": self.refine_ratio}


@dataclass(frozen=True)
class SweepConfig:
    name: str
    model: ModelSpec
    lam: float
    hbar_grid: tuple[float, ...]
    checks: tuple[str, ...] = ("WeylConvergence",)
    policy: GridPolicy = field(default_factory=GridPolicy)
    tolerance: float = 0.05
    margin: float = 1.0
    epsilon: float | None = None
    seed: int = 0
    rank_lemma_instances: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hbar_grid", tuple(float(h) for h in self.hbar_grid))
        object.__setattr__(self, "checks", tuple(self.checks))
        problems = config_problems(self)
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        return {"name": self.name, "model": self.model.to_dict(), "lambda": self.lam,
                "hbar_grid": list(self.hbar_grid), "checks": list(self.checks),
                "grid": self.policy.to_dict(), "tolerance": self.tolerance,
                "margin": self.margin, "epsilon": self.epsilon, "seed": self.seed,
                "rank_lemma_instances": self.rank_lemma_instances}


def config_problems(cfg: SweepConfig) -> list[str]:
    out = []
    h = cfg.hbar_grid
    if not h:
        out.append("hbar_grid: empty")
    if any(not (v > 0 and math.isfinite(v)) for v in h):
        out.append("hbar_grid: values must be positive")
    if any(b >= a for a, b in zip(h, h[1:])):
        out.append("hbar_grid: must be strictly decreasing")
    unknown = [c for c in cfg.checks if c not in CHECKS]
    if unknown:
        out.append(f"checks: unknown check(s) {unknown}")
    if "WeylConvergence" in cfg.checks and len(h) < 3:
        out.append("hbar_grid: WeylConvergence needs at least 3 values")
    if any(c in RELATIVE_CHECKS for c in cfg.checks) and cfg.model.compact:
        out.append("checks: relative checks need a non-compact model to compactify")
    if not cfg.margin > 0:
        out.append("margin: must be positive")
    if cfg.epsilon is not None and not cfg.epsilon > 0:
        out.append("epsilon: must be positive")
    if not cfg.tolerance > 0:
        out.append("tolerance: must be positive")
    return out


# -- counting with refinement escalation ------------------------------------

def near_crossing(op, lam: float, shift: float) -> bool:
    """True when an eigenvalue lies within 10 shifts of the counting threshold."""
    w = CROSSING_WINDOW * shift
    return count_below(op, lam, shift=shift - w).count != count_below(op, lam, shift=shift + w).count


def resolved_count(build, lam: float, policy: GridPolicy):
    """Count at ``lam`` on ``build(scale)``, refining by ``refine_ratio`` while the
    threshold sits near an eigenvalue; two consecutive levels must agree."""
    history = []
    prev = None
    for level in range(policy.max_refinements + 1):
        op = build(policy.refine_ratio ** level)
        try:
            res = count_below(op, lam)
        except CountingError as exc:
            raise NumericalFailure(str(exc), exc.diagnostics) from exc
        near = near_crossing(op, lam, res.shift)
        history.append({"level": level, "order": op.order, "count": res.count, "near": near})
        if level == 0 and not near:
            return res, op, level
        if prev is not None and prev.count == res.count:
            return res, op, level
        prev = res
    raise NumericalFailure(
        f"count at lambda={lam} did not settle under refinement", {"levels": history})


# -- Weyl sweep ----------------------------------------------------------------

def _weyl_row(cfg: SweepConfig, hbar: float, volume: float, dump_dir=None, index=0) -> dict:
    model, lam, policy = cfg.model, cfg.lam, cfg.policy
    audits = []

    def build(scale):
        h = policy.spacing_for(hbar, lam) / scale
        grid = model_grid(model, h, lam, policy.safety_factor)
        audit = truncation_audit(model, grid, lam, policy.audit_threshold)
        audits.append(audit)
        if not audit.passed:
            raise TruncationError(
                f"truncation audit failed at hbar={hbar}: ratio {audit.ratio:.3g} at "
                f"node {audit.worst_node}")
        return assembly.assemble(model, grid, hbar)

    res, op, level = resolved_count(build, lam, policy)
    if dump_dir is not None:
        assembly.dump_matrix(op, Path(dump_dir) / f"{cfg.name}_hbar{index}.coo.txt")
    n = model.dimension
    scaled = (2 * math.pi * hbar) ** n * res.count
    audit = audits[-1]
    return {"hbar": hbar, "n_count": res.count, "scaled_count": scaled, "volume": volume,
            "remainder": scaled - volume, "counting_method": res.method,
            "truncation_ratio": None if math.isinf(audit.ratio) else audit.ratio,
            "shift": res.shift, "min_pivot": res.min_pivot, "order": op.order,
            "spacing": list(op.grid.spacing), "refinements": level}


def fit_remainder(rows) -> dict:
    """Least-squares slope of ``log|remainder|`` against ``log hbar``.

    Descriptive only.  Rows whose remainder vanishes to round-off make the fit
    meaningless and the slope is then reported as below resolution.
    """
    rows = [r for r in rows if r["volume"] > 0]
    if len(rows) < 3:
        raise ValueError("need at least 3 rows with non-zero volume")
    h = np.array([r["hbar"] for r in rows])
    rem = np.array([abs(r["remainder"]) for r in rows])
    floor = 1e-12 * max(r["volume"] for r in rows)
    if np.any(rem <= floor):
        return {"slope": None, "r2": None, "quality": "below-resolution", "points": len(rows)}
    x, y = np.log(h), np.log(rem)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 0.0
    quality = "good" if r2 >= 0.8 and slope > 0.25 else "low"
    return {"slope": float(slope), "r2": r2, "quality": quality, "points": len(rows)}


def weyl_verdict(rows, tolerance: float, volume_error: float = 0.0) -> dict:
    """|remainder| non-increasing over the last three rows and final relative
    remainder within ``tolerance``.

    Remainders closer than round-off or the quadrature error of the volume
    are treated as equal in the monotonicity test.
    """
    volume = rows[-1]["volume"]
    slack = max(1e-12 * max(1.0, volume), volume_error)
    tail = [abs(r["remainder"]) for r in rows[-3:]]
    monotone = all(b <= a + slack for a, b in zip(tail, tail[1:]))
    final = abs(rows[-1]["remainder"])
    rel = final / volume if volume > 0 else (0.0 if final <= slack else math.inf)
    ok = monotone and rel <= tolerance
    return {"status": "PASS" if ok else "FAIL", "final_relative_remainder": rel,
            "tolerance": tolerance, "tail_monotone": monotone}


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def run_weyl_sweep(cfg: SweepConfig, jobs: int = 1, dump_dir=None) -> dict:
    volume = volume_reduced(cfg.model, cfg.lam)
    items = list(enumerate(cfg.hbar_grid))
    rows = _map(lambda it: _weyl_row(cfg, it[1], volume.value, dump_dir, it[0]), items, jobs)
    out = {"rows": rows, "volume": volume.to_dict()}
    try:
        out["fit"] = fit_remainder(rows)
    except ValueError as exc:
        out["fit"] = {"slope": None, "r2": None, "quality": str(exc), "points": len(rows)}
    if len(rows) >= 3:
        out["verdict"] = weyl_verdict(rows, cfg.tolerance, volume.error)
    return out


# -- relative inequality --------------------------------------------------------

def _level_band(pair: EquivalentPair, lam: float) -> float:
    boxes = [sublevel_set_bound(m.potential, lam) for m in (pair.model_a, pair.model_b)]
    boxes = [b for b in boxes if b is not None]
    if not boxes:
        return min(pair.region.widths) / 2
    box = boxes[0]
    for b in boxes[1:]:
        box = box.hull(b)
    return float(min(np.min(np.subtract(box.lo, pair.region.lo)),
                     np.min(np.subtract(pair.region.hi, box.hi))))


def _direction(pair: EquivalentPair, lam: float, hbar: float, spacing: float,
               policy: GridPolicy, lambda_max: float, with_suite: bool, with_rank: bool,
               compact_second: bool) -> dict:
    """One comparison ``N(H_1, lam) >= N(H_2, lam - c hbar^2)`` on pair grids.

    ``pair.model_a`` plays M_1.  Escalates resolution on failure.
    """
    attempts = []
    for level in range(policy.max_refinements + 1):
        h = spacing / policy.refine_ratio ** level
        g1, g2 = pair_grids(pair, h, lambda_max, policy.safety_factor)
        pou1, pou2 = build_partition(pair, g1, g2, lam)
        op1 = assembly.assemble(pair.model_a, g1, hbar, None if pair.model_a.compact else lambda_max,
                                policy.audit_threshold)
        op2 = assembly.assemble(pair.model_b, g2, hbar, None if pair.model_b.compact else lambda_max,
                                policy.audit_threshold)
        c = pou2.c
        lower = lam - c * hbar ** 2
        vacuous = is_vacuous(lam, c, hbar)
        try:
            n1 = count_below(op1, lam).count
            n2 = 0 if lower <= 0 else count_below(op2, lower).count
        except CountingError as exc:
            raise NumericalFailure(str(exc), exc.diagnostics) from exc
        cert = commutator_check(op2, pou2)
        row = {"hbar": hbar, "lambda": lam, "spacing": list(g1.spacing), "c": c,
               "lower_level": lower, "n_first": n1, "n_second": n2,
               "status": "VACUOUS" if vacuous else ("PASS" if n1 >= n2 else "FAIL"),
               "commutator_certified": cert.certified, "refinements": level,
               "orders": [op1.order, op2.order]}
        attempts.append(row["status"])
        if row["status"] != "FAIL" or level == policy.max_refinements:
            row["attempts"] = attempts
            row["ops"] = (op1, op2, pou1, pou2)
            break
    if with_suite:
        row["ims"] = _ims_suite(*row["ops"], lam)
    if with_rank:
        row["rank_lemma"] = _rank_instance(*row["ops"], lam)
    return row


def _ims_suite(op1, op2, pou1, pou2, lam) -> dict:
    out = {}
    res = ims_residual(op2, pou2)
    out["ims_residual"] = res
    out["ims_ok"] = res <= 1e-12 * op2.norm_max
    cert = commutator_check(op2, pou2)
    out["commutator"] = cert.to_dict()
    if op1.order <= PROJECTOR_ORDER and op2.order <= PROJECTOR_ORDER:
        proj = spectral_projector(op1, lam)
        checks = localized_bound_check(op1, pou1, proj, partner=(op2, pou2))
        out["localized"] = [v.to_dict() for v in checks]
        loc_ok = all(v.passed for v in checks)
    else:
        out["localized"] = "skipped: order above dense limit"
        loc_ok = True
    out["passed"] = bool(out["ims_ok"] and cert.certified and loc_ok)
    return out


def _rank_instance(op1, op2, pou1, pou2, lam) -> dict:
    hbar = op2.hbar
    mu = lam - pou2.c * hbar ** 2
    if op1.order > SMALL_ORDER or op2.order > SMALL_ORDER or mu <= 0:
        return {"status": "SKIPPED", "reason": "order above dense limit" if mu > 0 else "vacuous"}
    proj = spectral_projector(op1, lam)
    W = transport(op1.grid, op2.grid, pou1.phi[:, None] * proj.basis, pou1.region)
    B = lam * (W @ W.T)
    return rank_lemma_check(op2.matrix, B, mu).to_dict()


def commutator_refinement(pair: EquivalentPair, lam: float, hbar: float, spacing: float,
                          policy: GridPolicy, lambda_max: float, levels: int = 3) -> dict:
    reports = []
    for k in range(levels):
        g1, g2 = pair_grids(pair, spacing / 2 ** k, lambda_max, policy.safety_factor)
        _, pou2 = build_partition(pair, g1, g2, lam)
        op2 = assembly.assemble(pair.model_b, g2, hbar)
        reports.append(commutator_check(op2, pou2))
    fit = commutator_convergence(reports)
    return {"fit": fit.to_dict(), "certified": all(r.certified for r in reports)}


def run_relative_check(pair: EquivalentPair, lam: float, hbar_grid, policy: GridPolicy | None = None,
                       epsilon: float | None = None, ims_suite: bool = False,
                       rank_lemma: bool = False, jobs: int = 1) -> dict:
    """Forward ``N(M, lam) >= N(Mbar, lam - c hbar^2)`` and reversed
    ``N(Mbar, lam + delta) >= N(M, lam + delta - c' hbar^2)`` per hbar.

    ``pair.model_a`` is M and ``pair.model_b`` its compact partner.  ``delta``
    comes from the continuity margin at ``epsilon`` (default: 5% of the volume).
    """
    policy = policy or GridPolicy()
    base = pair.model_a
    vol = volume_reduced(base, lam).value
    eps = epsilon if epsilon is not None else 0.05 * max(vol, 1e-3)
    # lam + delta must stay below any patched outside level.
    outs = [m.potential.outside for m in (pair.model_a, pair.model_b)
            if m.potential.form == "Patched"]
    cap = min([1.0] + [0.5 * (o - lam) for o in outs])
    margin = continuity_margin(base, lam, eps, region=pair.region, cap=cap)
    top = lam + margin.delta
    band = min(_level_band(pair, lam), _level_band(pair, top))
    rows_f, rows_r, sandwich = [], [], []
    n = base.dimension

    def one(hbar):
        spacing = policy.spacing_for(hbar, top)
        spacing = min(spacing, band / 4.0)
        fwd = _direction(pair, lam, hbar, spacing, policy, top, ims_suite, rank_lemma, True)
        rev = _direction(pair.swapped(), top, hbar, spacing, policy, top, False, False, False)
        op_m, op_bar = fwd["ops"][0], fwd["ops"][1]
        n_bar = count_below(op_bar, lam).count
        scale = (2 * math.pi * hbar) ** n
        gap = abs(scale * fwd["n_first"] - scale * n_bar)
        sw = {"hbar": hbar, "scaled_m": scale * fwd["n_first"], "scaled_bar": scale * n_bar,
              "difference": gap, "epsilon": eps, "closed": gap <= eps}
        for r in (fwd, rev):
            r.pop("ops", None)
        return fwd, rev, sw

    for fwd, rev, sw in _map(one, list(hbar_grid), jobs):
        rows_f.append(fwd)
        rows_r.append(rev)
        sandwich.append(sw)

    # Smallest hbar from which the sandwich stays closed.
    threshold = None
    for sw in reversed(sandwich):
        if not sw["closed"]:
            break
        threshold = sw["hbar"]
    out = {"pair": pair.to_dict(), "margin": margin.to_dict(), "volume": vol,
           "forward": rows_f, "reverse": rows_r, "sandwich": sandwich,
           "sandwich_hbar_threshold": threshold}
    if ims_suite and rows_f:
        h0 = hbar_grid[0]
        spacing = min(policy.spacing_for(h0, top), band / 4.0)
        out["commutator_refinement"] = commutator_refinement(pair, lam, h0, spacing, policy, top)
    return out


def random_rank_lemma_suite(instances: int, seed: int, max_order: int = 40) -> dict:
    """Random symmetric ``A``, ``B = lam Q Q^T`` with rank-k ``Q`` and
    ``mu = min eig(A + B)``; the lemma must hold on every instance."""
    rng = np.random.default_rng(seed)
    fails, pre = 0, 0
    for _ in range(instances):
        n = int(rng.integers(2, max_order + 1))
        k = int(rng.integers(0, n + 1))
        G = rng.standard_normal((n, n))
        A = (G + G.T) / 2
        Q = rng.standard_normal((n, k))
        lam = float(rng.uniform(0.1, 5.0))
        B = lam * (Q @ Q.T)
        mu = float(np.linalg.eigvalsh(A + B)[0])
        v = rank_lemma_check(A, B, mu)
        fails += v.status == "FAIL"
        pre += v.status == "precondition-failed"
    return {"instances": instances, "failures": fails, "precondition_failed": pre,
            "status": "PASS" if fails == 0 and pre == 0 else "FAIL"}


# -- experiment and report ---------------------------------------------------------

def config_hash(cfg: SweepConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _row_status(row: dict, strict: bool) -> str:
    s = row["status"]
    if s == "VACUOUS":
        return "FAIL" if strict else "VACUOUS"
    return s


class ExperimentAborted(RuntimeError):
    """A numerical failure stopped an experiment; ``report`` is the partial report."""

    def __init__(self, report: dict, cause: Exception):
        super().__init__(str(cause))
        self.report = report
        self.cause = cause


NUMERICAL_ERRORS = (NumericalFailure, TruncationError, CountingError, EigenSolverError,
                    ArpackNoConvergence)


def run_experiment(cfg: SweepConfig, jobs: int = 1, strict: bool = False, dump_dir=None) -> dict:
    """Run every requested check and return the report as plain data.

    A numerical failure raises :class:`ExperimentAborted` carrying the report
    filled so far, marked incomplete.
    """
    import scipy
    report = {"name": cfg.name, "complete": False,
              "provenance": {"config_hash": config_hash(cfg), "seed": cfg.seed,
                             "versions": {"weyllab": __version__, "numpy": np.__version__,
                                          "scipy": scipy.__version__}},
              "config": cfg.to_dict(), "rows": [], "fits": {}, "verdicts": {}}
    try:
        _fill_report(report, cfg, jobs, strict, dump_dir)
    except NUMERICAL_ERRORS as exc:
        report["error"] = {"kind": type(exc).__name__, "message": str(exc),
                           "diagnostics": getattr(exc, "diagnostics", {}) or {}}
        raise ExperimentAborted(report, exc) from exc
    report["complete"] = True
    return report


def _fill_report(report: dict, cfg: SweepConfig, jobs: int, strict: bool, dump_dir) -> None:
    weyl = run_weyl_sweep(cfg, jobs, dump_dir)
    report["rows"] = weyl["rows"]
    report["volume"] = weyl["volume"]
    report["fits"]["remainder"] = weyl["fit"]
    if "WeylConvergence" in cfg.checks:
        report["verdicts"]["WeylConvergence"] = weyl["verdict"]
    wanted = set(cfg.checks)
    if wanted & {"RelativeInequality", "SandwichUpper", "IMSSuite", "RankLemma"}:
        pair = compactify(cfg.model, cfg.lam, cfg.margin)
        rel = run_relative_check(pair, cfg.lam, cfg.hbar_grid, cfg.policy, cfg.epsilon,
                                 ims_suite="IMSSuite" in wanted, rank_lemma="RankLemma" in wanted,
                                 jobs=jobs)
        report["relative"] = rel
        if "RelativeInequality" in wanted:
            report["verdicts"]["RelativeInequality"] = _direction_verdict(rel["forward"], strict)
        if "SandwichUpper" in wanted:
            v = _direction_verdict(rel["reverse"], strict)
            v["sandwich_hbar_threshold"] = rel["sandwich_hbar_threshold"]
            report["verdicts"]["SandwichUpper"] = v
        if "IMSSuite" in wanted:
            suites = [r["ims"] for r in rel["forward"]]
            conv = rel["commutator_refinement"]
            ok = all(s["passed"] for s in suites) and conv["fit"]["ok"] and conv["certified"]
            report["verdicts"]["IMSSuite"] = {
                "status": "PASS" if ok else "FAIL",
                "max_ims_residual": max(s["ims_residual"] for s in suites),
                "commutator_slope": conv["fit"]["slope"]}
        if "RankLemma" in wanted:
            inst = [r["rank_lemma"] for r in rel["forward"]]
            bad = [i for i in inst if i["status"] not in ("PASS", "SKIPPED")]
            verdict = {"status": "PASS" if not bad else "FAIL",
                       "checked": sum(i["status"] == "PASS" for i in inst)}
            if cfg.rank_lemma_instances:
                suite = random_rank_lemma_suite(cfg.rank_lemma_instances, cfg.seed)
                verdict["random_suite"] = suite
                if suite["status"] != "PASS":
                    verdict["status"] = "FAIL"
            report["verdicts"]["RankLemma"] = verdict
    for row in report["rows"]:
        row["verdicts"] = row_verdicts(report, row["hbar"], strict)


def _direction_verdict(rows, strict: bool) -> dict:
    statuses = [_row_status(r, strict) for r in rows]
    return {"status": "FAIL" if "FAIL" in statuses else "PASS",
            "failures": statuses.count("FAIL"), "vacuous_rows": statuses.count("VACUOUS"),
            "rows": len(rows)}


def row_verdicts(report: dict, hbar: float, strict: bool) -> dict:
    """Per-row status for each requested check ('' when not requested)."""
    out = {}
    rel = report.get("relative")
    for name in CHECKS:
        v = report["verdicts"].get(name)
        if v is None:
            out[name] = ""
        elif name == "RelativeInequality" and rel:
            out[name] = _lookup(rel["forward"], hbar, strict)
        elif name == "SandwichUpper" and rel:
            out[name] = _lookup(rel["reverse"], hbar, strict)
        else:
            out[name] = v["status"]
    return out


def _lookup(rows, hbar, strict):
    for r in rows:
        if r["hbar"] == hbar:
            return _row_status(r, strict)
    return ""


def overall_status(report: dict) -> str:
    return "FAIL" if any(v["status"] == "FAIL" for v in report["verdicts"].values()) else "PASS"
