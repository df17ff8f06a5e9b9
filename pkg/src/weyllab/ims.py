"""IMS localization on discrete operators.

For diagonal multipliers ``phi``, ``psi`` with ``phi**2 + psi**2 = 1`` the
identity

    H = phi H phi + psi H psi + 1/2 [phi, [phi, H]] + 1/2 [psi, [psi, H]]

is exact matrix algebra.  For the stencil Laplacian the double commutator is
the off-diagonal matrix with entries ``-hbar**2 / (2 h**2) * (phi_i - phi_j)**2``
on neighbor couplings, which approximates multiplication by
``-hbar**2 |d phi|**2`` to second order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperator, Grid
from .model import Box, EquivalentPair, smoothstep, smoothstep_derivative, sublevel_set_bound
from .spectra import SpectralProjector

MIN_BAND_CELLS = 4
GRADIENT_SAFETY = 1.1
DENSE_MIN_EIG_LIMIT = 3000


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Node samples of ``phi`` and ``psi = sqrt(1 - phi**2)`` on one grid.

    ``c`` bounds both double commutators: ``||1/2 [f, [f, H]]|| < c/2 hbar**2``
    for ``f`` in ``{phi, psi}``, hence their sum is below ``c hbar**2``.
    """

    phi: np.ndarray
    psi: np.ndarray
    grad_phi_sq: np.ndarray
    grad_psi_sq: np.ndarray
    grad_sup_phi_sq: float
    grad_sup_psi_sq: float
    region: Box
    inner: Box | None
    lam: float
    c: float
    grid: Grid

    def to_dict(self) -> dict:
        return {"grad_sup_phi_sq": self.grad_sup_phi_sq, "grad_sup_psi_sq": self.grad_sup_psi_sq,
                "c": self.c, "lambda": self.lam, "region": self.region.to_dict(),
                "inner": None if self.inner is None else self.inner.to_dict()}


def commutator_constant(sup_phi_sq: float, sup_psi_sq: float) -> float:
    return 2.0 * GRADIENT_SAFETY * max(sup_phi_sq, sup_psi_sq)


def _axis_ramp(x, inner_lo, inner_hi, outer_lo, outer_hi):
    """Per-axis profile ``r``, its complement ``1 - r`` and derivative ``r'``."""
    x = np.asarray(x, dtype=float)
    r = np.zeros_like(x)
    rc = np.ones_like(x)
    dr = np.zeros_like(x)
    flat = (x >= inner_lo) & (x <= inner_hi)
    r[flat], rc[flat] = 1.0, 0.0
    left = (x > outer_lo) & (x < inner_lo)
    if np.any(left):
        w = inner_lo - outer_lo
        t = (x[left] - outer_lo) / w
        r[left], rc[left] = smoothstep(t), smoothstep(1.0 - t)
        dr[left] = smoothstep_derivative(t) / w
    right = (x > inner_hi) & (x < outer_hi)
    if np.any(right):
        w = outer_hi - inner_hi
        t = (outer_hi - x[right]) / w
        r[right], rc[right] = smoothstep(t), smoothstep(1.0 - t)
        dr[right] = -smoothstep_derivative(t) / w
    return r, rc, dr


def _profile(points: np.ndarray, inner: Box, outer: Box):
    """phi, psi, |grad phi|^2, |grad psi|^2 at ``points`` for the product ramp."""
    n = points.shape[1]
    parts = [_axis_ramp(points[:, a], inner.lo[a], inner.hi[a], outer.lo[a], outer.hi[a])
             for a in range(n)]
    phi = np.ones(len(points))
    one_minus = np.zeros(len(points))
    for r, rc, _ in parts:
        # 1 - phi*r = (1 - phi) + phi*(1 - r), kept accurate where phi ~ 1.
        one_minus = one_minus + phi * rc
        phi = phi * r
    grad_sq = np.zeros(len(points))
    for a in range(n):
        g = parts[a][2].copy()
        for b in range(n):
            if b != a:
                g = g * parts[b][0]
        grad_sq += g * g
    phi = np.clip(phi, 0.0, 1.0)
    psi_sq = np.clip(one_minus * (1.0 + phi), 0.0, 1.0)
    psi = np.sqrt(psi_sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad_psi_sq = np.where(psi > 0, phi * phi * grad_sq / psi_sq, 0.0)
    return phi, psi, grad_sq, grad_psi_sq


def _gradient_sups(inner: Box, outer: Box, samples: int):
    axes = [np.linspace(a, b, samples) for a, b in zip(outer.lo, outer.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    _, _, g_phi, g_psi = _profile(pts, inner, outer)
    return float(g_phi.max()), float(g_psi.max())


def partition_for_grid(grid: Grid, region: Box, inner: Box | None, lam: float,
                       compact: bool) -> PartitionOfUnity:
    """Product-ramp partition: ``phi = 1`` on ``inner``, ``phi = 0`` off ``region``.

    ``inner = None`` means the whole domain of a compact model (``phi = 1``,
    ``psi = 0``, ``c = 0``).
    """
    pts = grid.points()
    if inner is None:
        if not compact:
            raise ValueError("phi = 1 everywhere needs a compact model")
        one, zero = np.ones(len(pts)), np.zeros(len(pts))
        return PartitionOfUnity(one, zero, zero, zero, 0.0, 0.0, region, None, lam, 0.0, grid)
    if not region.bounded:
        raise ValueError("identification region must be relatively compact")
    h = np.asarray(grid.spacing)
    band = np.minimum(np.subtract(inner.lo, region.lo), np.subtract(region.hi, inner.hi))
    if np.any(band < MIN_BAND_CELLS * h * (1 - 1e-9)):
        need = MIN_BAND_CELLS * h
        raise ValueError(
            f"band between the sublevel box and U is {band.tolist()} wide; need at least "
            f"{MIN_BAND_CELLS} cells = {need.tolist()} on every axis (enlarge the margin)")
    phi, psi, g_phi, g_psi = _profile(pts, inner, region)
    sup_phi, sup_psi = _gradient_sups(inner, region, 20001 if grid.dimension == 1 else 601)
    sup_phi = max(sup_phi, float(g_phi.max()))
    sup_psi = max(sup_psi, float(g_psi.max()))
    return PartitionOfUnity(phi, psi, g_phi, g_psi, sup_phi, sup_psi, region, inner, float(lam),
                            commutator_constant(sup_phi, sup_psi), grid)


def pair_inner_box(pair: EquivalentPair, lam: float) -> Box:
    boxes = [sublevel_set_bound(m.potential, lam) for m in (pair.model_a, pair.model_b)]
    boxes = [b for b in boxes if b is not None]
    if not boxes:
        # Empty allowed region: any point of U works; use its center.
        c = 0.5 * (np.asarray(pair.region.lo) + np.asarray(pair.region.hi))
        return Box(c, c)
    inner = boxes[0]
    for b in boxes[1:]:
        inner = inner.hull(b)
    if not pair.region.contains_box(inner, strict=True):
        raise ValueError(f"sublevel set at {lam} is not strictly inside U")
    return inner


def build_partition(pair: EquivalentPair, grid_a: Grid, grid_b: Grid,
                    lam: float | None = None) -> tuple[PartitionOfUnity, PartitionOfUnity]:
    """Matched partitions on both members of an equivalent pair."""
    lam = pair.lam if lam is None else float(lam)
    inner = pair_inner_box(pair, lam)
    pa = partition_for_grid(grid_a, pair.region, inner, lam, pair.model_a.compact)
    pb = partition_for_grid(grid_b, pair.region, inner, lam, pair.model_b.compact)
    return pa, pb


def partition_violations(pou: PartitionOfUnity, potential: np.ndarray,
                         tol: float = 1e-12) -> list[str]:
    """Node-wise conditions (1)-(3) of a partition on its own grid."""
    problems = []
    if np.max(np.abs(pou.phi ** 2 + pou.psi ** 2 - 1.0)) > tol:
        problems.append("phi^2 + psi^2 != 1")
    if np.any(pou.phi < 0) or np.any(pou.phi > 1) or np.any(pou.psi < 0) or np.any(pou.psi > 1):
        problems.append("phi or psi leaves [0, 1]")
    outside = ~pou.region.contains(pou.grid.points())
    if np.any(pou.phi[outside] != 0.0):
        problems.append("phi does not vanish outside U")
    allowed = potential <= pou.lam
    if np.any(pou.psi[allowed] != 0.0):
        problems.append("psi does not vanish on {V <= lambda}")
    return problems


def custom_partition(grid: Grid, phi, region: Box | None, lam: float, compact: bool,
                     potential: np.ndarray | None = None) -> PartitionOfUnity:
    """Partition from user-supplied node values of ``phi``; validated.

    Gradient quantities are set from one-sided differences, so ``c`` is only
    indicative here.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (grid.size,):
        raise ValueError("phi must have one value per grid node")
    if region is None:
        if not compact:
            raise ValueError("U must be relatively compact on a non-compact model")
        big = [a.lattice_nodes for a in grid.axes]
        region = Box([b.min() for b in big], [b.max() for b in big])
    if not region.bounded:
        raise ValueError("U must be relatively compact on a non-compact model")
    psi = np.sqrt(np.maximum(1.0 - phi * phi, 0.0))
    g_phi = _difference_gradient_sq(grid, phi)
    g_psi = _difference_gradient_sq(grid, psi)
    pou = PartitionOfUnity(phi, psi, g_phi, g_psi, float(g_phi.max()), float(g_psi.max()),
                           region, None, float(lam),
                           commutator_constant(float(g_phi.max()), float(g_psi.max())), grid)
    bad = partition_violations(pou, potential if potential is not None
                               else np.full(grid.size, np.inf))
    if bad:
        raise ValueError("invalid partition: " + "; ".join(bad))
    return pou


def _difference_gradient_sq(grid: Grid, f: np.ndarray) -> np.ndarray:
    F = f.reshape(grid.shape)
    out = np.zeros(grid.shape)
    for a, ax in enumerate(grid.axes):
        if ax.periodic:
            fwd = (np.roll(F, -1, axis=a) - F) / ax.spacing
            bwd = (F - np.roll(F, 1, axis=a)) / ax.spacing
        else:
            pad = [(0, 0)] * grid.dimension
            pad[a] = (1, 1)
            G = np.pad(F, pad)
            sl = [slice(None)] * grid.dimension
            sl_f, sl_b = list(sl), list(sl)
            sl_f[a], sl_b[a] = slice(2, None), slice(0, -2)
            fwd = (G[tuple(sl_f)] - F) / ax.spacing
            bwd = (F - G[tuple(sl_b)]) / ax.spacing
        out += np.maximum(fwd ** 2, bwd ** 2)
    return out.ravel()


def double_commutator(H, f) -> sp.csr_matrix:
    """``1/2 [f, [f, H]]`` for the diagonal multiplier ``f``."""
    F = sp.diags(np.asarray(f, dtype=float))
    C = F @ H - H @ F
    return (0.5 * (F @ C - C @ F)).tocsr()


def _arrays(pou_or_phi, psi):
    if isinstance(pou_or_phi, PartitionOfUnity):
        return pou_or_phi.phi, pou_or_phi.psi
    return np.asarray(pou_or_phi, dtype=float), np.asarray(psi, dtype=float)


def ims_residual(op, pou_or_phi, psi=None) -> float:
    """``max |H - (phi H phi + psi H psi + 1/2[phi,[phi,H]] + 1/2[psi,[psi,H]])|``."""
    H = op.matrix if isinstance(op, DiscreteOperator) else sp.csr_matrix(op)
    phi, psi = _arrays(pou_or_phi, psi)
    if phi.shape != (H.shape[0],) or psi.shape != (H.shape[0],):
        raise ValueError("partition is not sampled on the operator's grid")
    P, S = sp.diags(phi), sp.diags(psi)
    rebuilt = P @ H @ P + S @ H @ S + double_commutator(H, phi) + double_commutator(H, psi)
    R = (H - rebuilt).tocsr()
    return float(abs(R).max()) if R.nnz else 0.0


def _inf_norm(M) -> float:
    return float(abs(M).sum(axis=1).max()) if M.nnz else 0.0


@dataclass(frozen=True)
class CommutatorReport:
    spacing: float
    hbar: float
    max_deviation: float
    norm_phi: float
    norm_psi: float
    bound: float
    certified: bool

    def to_dict(self) -> dict:
        return {"spacing": self.spacing, "hbar": self.hbar, "max_deviation": self.max_deviation,
                "norm_phi": self.norm_phi, "norm_psi": self.norm_psi, "bound": self.bound,
                "certified": self.certified}


def commutator_check(op: DiscreteOperator, pou: PartitionOfUnity) -> CommutatorReport:
    """Compare ``1/2 [phi, [phi, H]]`` with ``-hbar**2 |d phi|**2`` and certify
    ``||1/2 [f, [f, H]]|| < (c/2) hbar**2`` for ``f = phi, psi``.

    The deviation is measured on the action on the constant vector (the row
    sums).  Norms are infinity norms, which bound the spectral norm of these
    symmetric matrices.
    """
    if pou.phi.shape != (op.order,):
        raise ValueError("partition is not sampled on the operator's grid")
    D_phi = double_commutator(op.matrix, pou.phi)
    D_psi = double_commutator(op.matrix, pou.psi)
    symbol = np.asarray(D_phi.sum(axis=1)).ravel()
    deviation = float(np.max(np.abs(symbol + op.hbar ** 2 * pou.grad_phi_sq)))
    n_phi, n_psi = _inf_norm(D_phi), _inf_norm(D_psi)
    bound = 0.5 * pou.c * op.hbar ** 2
    return CommutatorReport(max(op.grid.spacing), op.hbar, deviation, n_phi, n_psi, bound,
                            n_phi < bound and n_psi < bound)


@dataclass(frozen=True)
class ConvergenceFit:
    slope: float
    deviations: tuple[float, ...]
    spacings: tuple[float, ...]
    ok: bool

    def to_dict(self) -> dict:
        return {"slope": self.slope, "deviations": list(self.deviations),
                "spacings": list(self.spacings), "ok": self.ok}


def commutator_convergence(reports, low: float = 1.5, high: float = 2.5) -> ConvergenceFit:
    """Log-log slope of the deviation against spacing over a refinement sequence."""
    reports = list(reports)
    if len(reports) < 3:
        raise ValueError("need at least 3 refinement levels")
    h = np.array([r.spacing for r in reports])
    d = np.array([r.max_deviation for r in reports])
    slope = float(np.polyfit(np.log(h), np.log(d), 1)[0])
    return ConvergenceFit(slope, tuple(d.tolist()), tuple(h.tolist()), low <= slope <= high)


def transport(src: Grid, dst: Grid, values: np.ndarray, region: Box | None = None) -> np.ndarray:
    """Carry node values from ``src`` to ``dst`` by lattice identification.

    Rows at source nodes inside ``region`` (all nodes if ``None``) are placed
    at the destination node with the same lattice coordinates; everything else
    is zero.  ``values`` may be 1-d or have one column per vector.
    """
    if not src.same_lattice(dst):
        raise ValueError("grids do not share a lattice")
    values = np.asarray(values, dtype=float)
    out = np.zeros((dst.size,) + values.shape[1:])
    keys = src.lattice_index()
    keep = np.ones(src.size, bool) if region is None else region.contains(src.points())
    keep &= np.any(values.reshape(src.size, -1) != 0, axis=1)
    idx = np.zeros(int(keep.sum()), dtype=np.int64)
    stride = 1
    for a in reversed(range(dst.dimension)):
        ax = dst.axes[a]
        local = keys[keep, a] - ax.start
        if ax.periodic:
            local = np.mod(local, ax.count)
        if np.any(local < 0) or np.any(local >= ax.count):
            raise ValueError("transported support leaves the destination grid")
        idx += local * stride
        stride *= ax.count
    out[idx] = values[keep]
    return out


def matched_partitions(pou_a: PartitionOfUnity, pou_b: PartitionOfUnity) -> bool:
    """True when phi_a(x) == phi_b(Phi(x)) on every shared node of U."""
    moved = transport(pou_a.grid, pou_b.grid, pou_a.phi, pou_a.region)
    inside = pou_b.region.contains(pou_b.grid.points())
    return bool(np.array_equal(moved[inside], pou_b.phi[inside]))


def _min_eig(H, W: np.ndarray | None, weight: float) -> float:
    n = H.shape[0]
    if n <= DENSE_MIN_EIG_LIMIT:
        M = H.toarray()
        if W is not None and W.shape[1]:
            M = M + weight * (W @ W.T)
        return float(la.eigvalsh(M, subset_by_index=[0, 0])[0])

    def mv(u):
        out = H @ u
        if W is not None and W.shape[1]:
            out = out + weight * (W @ (W.T @ u))
        return out

    L = spla.LinearOperator((n, n), matvec=mv, dtype=float)
    return float(spla.eigsh(L, k=1, which="SA", tol=1e-12, maxiter=20 * n)[0][0])


@dataclass(frozen=True)
class LocalizedVerdict:
    name: str
    value: float
    threshold: float
    passed: bool
    vacuous: bool = False

    @property
    def margin(self) -> float:
        return self.value - self.threshold

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "margin": self.margin, "passed": self.passed, "vacuous": self.vacuous}


def localized_bound_check(op: DiscreteOperator, pou: PartitionOfUnity,
                          projector: SpectralProjector, partner=None,
                          tol: float = 1e-10) -> list[LocalizedVerdict]:
    """Smallest-eigenvalue checks of the localized inequalities.

    * ``H + lam P >= lam`` on the operator that owns ``projector``;
    * ``(H - lam)`` restricted to ``supp psi`` is positive (reported margin);
    * with ``partner = (op2, pou2)``: ``H2 + lam phi2 P phi2 >= lam - c hbar**2``
      where ``phi2 P phi2`` is carried over by lattice identification.
    """
    lam = pou.lam
    if abs(projector.lam - lam) > 1e-12 * max(1.0, abs(lam)):
        raise ValueError("projector and partition use different levels")
    out = []
    low = _min_eig(op.matrix, projector.basis, lam)
    out.append(LocalizedVerdict("H+lamP>=lam", low, lam - tol - projector.shift,
                                low >= lam - tol - projector.shift))
    supp = pou.psi > 0
    if np.any(supp):
        sub = op.matrix[supp][:, supp] - lam * sp.identity(int(supp.sum()))
        margin = _min_eig(sub.tocsr(), None, 0.0)
        out.append(LocalizedVerdict("psiHpsi>lam*psi^2", margin, 0.0, margin > 0.0))
    if partner is not None:
        op2, pou2 = partner
        c = pou2.c
        threshold = lam - c * op2.hbar ** 2
        W = transport(op.grid, op2.grid, pou.phi[:, None] * projector.basis, pou.region)
        low2 = _min_eig(op2.matrix, W, lam)
        out.append(LocalizedVerdict("H2+lam*phiPphi>=lam-c*hbar^2", low2, threshold - tol,
                                    low2 >= threshold - tol, vacuous=threshold <= 0))
    return out


def is_vacuous(lam: float, c: float, hbar: float) -> bool:
    return c * hbar * hbar >= lam


def band_cells(pou: PartitionOfUnity) -> float:
    if pou.inner is None:
        return math.inf
    band = np.minimum(np.subtract(pou.inner.lo, pou.region.lo),
                      np.subtract(pou.region.hi, pou.inner.hi))
    return float(np.min(band / np.asarray(pou.grid.spacing)))
