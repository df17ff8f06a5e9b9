"""Finite-difference discretization of ``hbar**2 * Laplacian + V``.

Grids are uniform lattices ``anchor + k * spacing`` per axis.  Periodic axes
wrap; Dirichlet axes (compact boxes and truncated non-compact models) keep
only interior nodes, the boundary nodes at ``start - 1`` and ``start + count``
being eliminated.  Two grids built on the same lattice share node coordinates
exactly, which is how matched patches of an equivalent pair are identified.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import (Box, EquivalentPair, ModelSpec, potential_minimum, sublevel_set_bound,
                    values_at)


class TruncationError(ValueError):
    """The truncation box of a non-compact model fails the safety audit."""


@dataclass(frozen=True)
class Axis:
    anchor: float
    spacing: float
    start: int
    count: int
    periodic: bool

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        if self.count < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.count}")

    @property
    def indices(self) -> np.ndarray:
        return self.start + np.arange(self.count)

    @property
    def nodes(self) -> np.ndarray:
        return self.anchor + self.spacing * self.indices

    @property
    def boundary_nodes(self) -> np.ndarray:
        if self.periodic:
            return np.empty(0)
        return self.anchor + self.spacing * np.array([self.start - 1, self.start + self.count])

    @property
    def lattice_nodes(self) -> np.ndarray:
        """Interior nodes plus the eliminated Dirichlet boundary nodes."""
        if self.periodic:
            return self.nodes
        return self.anchor + self.spacing * np.arange(self.start - 1, self.start + self.count + 1)


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]
    truncation: Box | None = None

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(a.periodic for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, n), row-major (last axis fastest)."""
        mesh = np.meshgrid(*[a.nodes for a in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def lattice_index(self) -> np.ndarray:
        """Integer lattice coordinates of the nodes, shape (size, n)."""
        mesh = np.meshgrid(*[a.indices for a in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def boundary_points(self) -> np.ndarray:
        """Eliminated Dirichlet nodes on the faces of the grid box."""
        faces = []
        for a, axis in enumerate(self.axes):
            if axis.periodic:
                continue
            others = [ax.lattice_nodes for ax in self.axes]
            others[a] = axis.boundary_nodes
            mesh = np.meshgrid(*others, indexing="ij")
            faces.append(np.stack([m.ravel() for m in mesh], axis=1))
        if not faces:
            return np.empty((0, self.dimension))
        return np.unique(np.concatenate(faces), axis=0)

    def same_lattice(self, other: "Grid") -> bool:
        if self.dimension != other.dimension:
            return False
        for a, b in zip(self.axes, other.axes):
            if abs(a.spacing - b.spacing) > 1e-12 * a.spacing:
                return False
            if abs(a.anchor - b.anchor) > 1e-12 * max(1.0, abs(a.anchor)):
                return False
        return True

    def describe(self) -> dict:
        return {"shape": list(self.shape), "spacing": list(self.spacing),
                "periodic": list(self.periodic),
                "truncation": None if self.truncation is None else self.truncation.to_dict()}


def periodic_grid(length, n, origin=0.0) -> Grid:
    """``n`` nodes on a circle of the given length; 2D when sequences are passed."""
    length, n, origin = np.atleast_1d(length), np.atleast_1d(n), np.atleast_1d(origin)
    axes = tuple(Axis(float(o), float(L) / int(m), 0, int(m), True)
                 for L, m, o in zip(length, n, np.broadcast_to(origin, length.shape)))
    return Grid(axes)


def interior_grid(lo, hi, n, truncation: bool = False) -> Grid:
    """``n`` interior nodes per axis of the box ``[lo, hi]`` with Dirichlet ends."""
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    n = np.broadcast_to(np.atleast_1d(n), lo.shape)
    axes = tuple(Axis(float(a), float(b - a) / (int(m) + 1), 1, int(m), False)
                 for a, b, m in zip(lo, hi, n))
    return Grid(axes, Box(lo, hi) if truncation else None)


def resolution_spacing(hbar: float, lambda_max: float, factor: float = 4.0) -> float:
    """Largest spacing resolving wavelength ``2*pi*hbar/sqrt(lambda_max)``:
    ``h <= hbar / sqrt(lambda_max) / factor``."""
    return hbar / math.sqrt(max(lambda_max, 1e-300)) / factor if lambda_max > 0 else hbar / factor


def truncation_box(model: ModelSpec, lambda_max: float, safety: float) -> Box:
    """Box on whose faces ``V >= safety * lambda_max``."""
    level = max(safety * max(lambda_max, 0.0), potential_minimum(model.potential))
    box = sublevel_set_bound(model.potential, level)
    return box.expand(1e-9 * (1.0 + np.max(np.abs(np.concatenate([box.lo, box.hi])))))


def model_grid(model: ModelSpec, spacing: float, lambda_max: float = 0.0,
               safety: float = 4.0, anchor=None, cover: Box | None = None) -> Grid:
    """Grid for ``model`` with spacing at most ``spacing``.

    Compact charts get the largest spacing <= ``spacing`` that divides them.
    Non-compact models are truncated to a box whose faces satisfy the safety
    rule and which contains ``cover`` with two spare cells; the box is snapped
    outward onto the lattice ``anchor + k * spacing``.
    """
    n = model.dimension
    geom = model.geometry
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (n,))
    axes = []
    if geom.compact:
        for a in range(n):
            L, o = geom.extent[a], geom.origin[a]
            if geom.periodic[a]:
                m = max(3, math.ceil(L / spacing[a] - 1e-9))
                axes.append(Axis(o, L / m, 0, m, True))
            else:
                m = max(4, math.ceil(L / spacing[a] - 1e-9))
                axes.append(Axis(o, L / m, 1, m - 1, False))
        return Grid(tuple(axes))
    anchor = np.zeros(n) if anchor is None else np.broadcast_to(np.asarray(anchor, float), (n,))
    box = truncation_box(model, lambda_max, safety)
    if cover is not None:
        box = box.hull(cover.expand(2 * spacing))
    for a in range(n):
        h = float(spacing[a])
        k_lo = math.floor((box.lo[a] - anchor[a]) / h + 1e-9)
        k_hi = math.ceil((box.hi[a] - anchor[a]) / h - 1e-9)
        if k_hi - k_lo < 4:
            k_hi = k_lo + 4
        axes.append(Axis(float(anchor[a]), h, k_lo + 1, k_hi - k_lo - 1, False))
    trunc = Box([ax.anchor + ax.spacing * (ax.start - 1) for ax in axes],
                [ax.anchor + ax.spacing * (ax.start + ax.count) for ax in axes])
    return Grid(tuple(axes), trunc)


def pair_grids(pair: EquivalentPair, spacing: float, lambda_max: float,
               safety: float = 4.0) -> tuple[Grid, Grid]:
    """Grids for both members of a pair on one common lattice.

    A compact member fixes the lattice (its chart must be an integer number of
    cells); the other member is laid on the same anchor and spacing.
    """
    a, b = pair.model_a, pair.model_b
    if a.compact and b.compact:
        ga = model_grid(a, spacing)
        gb = model_grid(b, ga.spacing[0])
        if not ga.same_lattice(gb):
            raise ValueError("compact pair members do not share a lattice")
        return ga, gb
    if a.compact or b.compact:
        comp, other = (a, b) if a.compact else (b, a)
        gc = model_grid(comp, spacing)
        go = model_grid(other, gc.spacing, lambda_max, safety, anchor=comp.geometry.origin,
                        cover=pair.region)
        return (gc, go) if a.compact else (go, gc)
    ga = model_grid(a, spacing, lambda_max, safety, cover=pair.region)
    gb = model_grid(b, spacing, lambda_max, safety, cover=pair.region)
    return ga, gb


@dataclass(frozen=True)
class TruncationAudit:
    min_boundary_v: float
    lambda_max: float
    ratio: float
    threshold: float
    passed: bool
    worst_node: tuple[float, ...] | None

    def to_dict(self) -> dict:
        return {"min_boundary_v": self.min_boundary_v, "lambda_max": self.lambda_max,
                "ratio": self.ratio, "threshold": self.threshold, "passed": self.passed,
                "worst_node": None if self.worst_node is None else list(self.worst_node)}


def truncation_audit(model: ModelSpec, grid: Grid, lambda_max: float,
                     threshold: float = 2.0) -> TruncationAudit:
    """Smallest potential on the truncation faces relative to ``lambda_max``."""
    pts = grid.boundary_points()
    if model.compact or len(pts) == 0:
        return TruncationAudit(math.inf, lambda_max, math.inf, threshold, True, None)
    v = values_at(model.potential, pts)
    i = int(np.argmin(v))
    vmin = float(v[i])
    ratio = vmin / lambda_max if lambda_max > 0 else math.inf
    return TruncationAudit(vmin, float(lambda_max), ratio, threshold, ratio >= threshold,
                           tuple(float(c) for c in pts[i]))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse symmetric matrix of ``hbar**2 * Laplacian + V`` on a grid."""

    matrix: sp.csr_matrix
    hbar: float
    grid: Grid
    potential: np.ndarray
    model: ModelSpec | None = None

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume

    @property
    def norm_max(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def gershgorin_lower(self) -> float:
        A = self.matrix
        d = A.diagonal()
        off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
        return float(np.min(d - off))


def axis_stencil(axis: Axis, hbar: float) -> sp.csr_matrix:
    """``hbar**2 / h**2 * tridiag(-1, 2, -1)``, with wraparound on periodic axes."""
    n, w = axis.count, hbar ** 2 / axis.spacing ** 2
    i = np.arange(n - 1 + (1 if axis.periodic else 0))
    j = (i + 1) % n
    rows = np.concatenate([np.arange(n), i, j])
    cols = np.concatenate([np.arange(n), j, i])
    vals = np.concatenate([np.full(n, 2.0 * w), np.full(len(i), -w), np.full(len(i), -w)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble(model: ModelSpec, grid: Grid, hbar: float, lambda_max: float | None = None,
             safety: float = 2.0) -> DiscreteOperator:
    """Second-order central-difference ``hbar**2 * Laplacian + V`` on ``grid``.

    For non-compact models a ``lambda_max`` triggers the truncation audit; a
    failing box raises :class:`TruncationError` naming the worst boundary node.
    """
    if not hbar > 0:
        raise ValueError(f"hbar must be positive, got {hbar}")
    if grid.dimension != model.dimension:
        raise ValueError("grid dimension does not match the model")
    if tuple(grid.periodic) != tuple(model.geometry.periodic):
        raise ValueError("grid periodicity does not match the geometry")
    if lambda_max is not None and not model.compact:
        audit = truncation_audit(model, grid, lambda_max, safety)
        if not audit.passed:
            raise TruncationError(
                f"truncation box too small: V={audit.min_boundary_v:.6g} at boundary node "
                f"{audit.worst_node} is below {safety} x lambda_max={lambda_max}")
    mats = [axis_stencil(ax, hbar) for ax in grid.axes]
    eyes = [sp.identity(ax.count, format="csr") for ax in grid.axes]
    lap = None
    for a in range(grid.dimension):
        term = None
        for b in range(grid.dimension):
            f = mats[b] if a == b else eyes[b]
            term = f if term is None else sp.kron(term, f, format="csr")
        lap = term if lap is None else lap + term
    v = values_at(model.potential, grid.points())
    H = (lap + sp.diags(v)).tocsr()
    H.sort_indices()
    return DiscreteOperator(H, float(hbar), grid, v, model)


def apply(op: DiscreteOperator, u) -> np.ndarray:
    u = np.asarray(u)
    if u.shape[0] != op.order:
        raise ValueError(f"vector length {u.shape[0]} does not match operator order {op.order}")
    return op.matrix @ u


def dump_matrix(op: DiscreteOperator, path) -> Path:
    """Coordinate text dump: one ``row col value`` line per nonzero, row-major."""
    A = op.matrix.tocoo()
    order = np.lexsort((A.col, A.row))
    path = Path(path)
    with path.open("w") as fh:
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
    return path
