"""Classical phase-space volume ``Vol{(x, xi) : |xi|^2 + V(x) <= lam}``.

For a flat metric the momentum fiber over ``x`` is a ball of radius
``sqrt(lam - V(x))``, so the volume reduces to a spatial integral
``omega_n * int (lam - V)_+^{n/2} dx``.  A direct Monte Carlo estimate over the
2n-dimensional box gives an independent cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Box, ModelSpec, sublevel_set_bound, values_at


@dataclass(frozen=True)
class PhaseSpaceVolume:
    value: float
    lam: float
    method: str
    error: float
    converged: bool = True
    flagged: bool = False

    def to_dict(self) -> dict:
        return {"value": self.value, "lambda": self.lam, "method": self.method,
                "error": self.error, "converged": self.converged, "flagged": self.flagged}


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def integration_box(model: ModelSpec, lam: float) -> Box | None:
    """Spatial box carrying the classically allowed region (``None`` if empty)."""
    box = sublevel_set_bound(model.potential, lam)
    if box is None:
        return None
    chart = model.geometry.chart
    if chart is not None:
        box = box.intersect(chart)
    if box is None or not box.bounded:
        raise ValueError("allowed region is unbounded; model is not confining")
    return box


def _midpoint(model: ModelSpec, lam: float, box: Box, m: int, chunk: int = 1 << 20) -> float:
    n = model.dimension
    h = np.asarray(box.widths) / m
    centers = [box.lo[a] + h[a] * (np.arange(m) + 0.5) for a in range(n)]
    power = n / 2
    if n == 1:
        total = 0.0
        for s in range(0, m, chunk):
            v = values_at(model.potential, centers[0][s:s + chunk, None])
            total += np.sum(np.maximum(lam - v, 0.0) ** power)
    else:
        total = 0.0
        rows = max(1, chunk // m)
        for s in range(0, m, rows):
            xs = centers[0][s:s + rows]
            X, Y = np.meshgrid(xs, centers[1], indexing="ij")
            v = values_at(model.potential, np.stack([X.ravel(), Y.ravel()], axis=1))
            total += np.sum(np.maximum(lam - v, 0.0) ** power)
    return unit_ball_volume(n) * float(total) * float(np.prod(h))


def volume_reduced(model: ModelSpec, lam: float, rtol: float | None = None,
                   start: int = 64, max_cells: int | None = None) -> PhaseSpaceVolume:
    """Fiber-reduced volume by composite midpoint quadrature.

    The cell count per axis doubles until two successive differences
    ``|I_2m - I_m|`` fall below ``rtol``; requiring two guards against the
    erratic early convergence caused by the kink of ``(lam - V)_+``.  The
    finest level is returned with the larger of those differences as its
    error estimate.  Midpoint nodes never touch the boundary of the allowed region,
    where ``(lam - V)^{1/2}`` has an unbounded derivative.
    """
    n = model.dimension
    if rtol is None:
        rtol = 1e-9 if n == 1 else 1e-5
    if max_cells is None:
        max_cells = 1 << 22 if n == 1 else 4096
    box = integration_box(model, lam)
    if box is None or box.volume == 0.0:
        return PhaseSpaceVolume(0.0, float(lam), "ReducedQuadrature", 0.0)
    m = start
    coarse = _midpoint(model, lam, box, m)
    errors = []
    while True:
        m *= 2
        fine = _midpoint(model, lam, box, m)
        err = abs(fine - coarse)
        errors.append(err)
        recent = errors[-2:]
        if len(recent) == 2 and max(recent) <= rtol * abs(fine) or err == 0.0:
            return PhaseSpaceVolume(fine, float(lam), "ReducedQuadrature", max(recent))
        if 2 * m > max_cells:
            shrinking = len(errors) < 2 or errors[-1] < errors[-2]
            return PhaseSpaceVolume(fine, float(lam), "ReducedQuadrature", err,
                                    converged=shrinking, flagged=not shrinking)
        coarse = fine


def monte_carlo_box(model: ModelSpec, lam: float) -> tuple[Box, Box] | None:
    box = integration_box(model, lam)
    if box is None or lam <= 0:
        return None
    r = math.sqrt(lam)
    return box, Box((-r,) * model.dimension, (r,) * model.dimension)


def volume_monte_carlo(model: ModelSpec, lam: float, samples: int = 10 ** 6, seed: int = 0,
                       shards: int = 1, chunk: int = 1 << 18) -> PhaseSpaceVolume:
    """Hit-or-miss estimate in the box ``X x [-sqrt(lam), sqrt(lam)]^n``.

    Each shard draws from its own stream spawned from ``seed``; hits are summed
    in shard order, so the result depends only on (seed, samples, shards).
    """
    if samples < 10 ** 4:
        raise ValueError(f"need at least 1e4 samples, got {samples}")
    boxes = monte_carlo_box(model, lam)
    if boxes is None:
        return PhaseSpaceVolume(0.0, float(lam), "MonteCarlo", 0.0, flagged=True)
    xbox, pbox = boxes
    n = model.dimension
    lo = np.concatenate([xbox.lo, pbox.lo])
    width = np.concatenate([xbox.widths, pbox.widths])
    box_volume = float(np.prod(width))
    streams = np.random.SeedSequence(seed).spawn(shards)
    per_shard = [samples // shards + (1 if i < samples % shards else 0) for i in range(shards)]
    hits = 0
    for ss, count in zip(streams, per_shard):
        rng = np.random.default_rng(ss)
        left = count
        while left:
            k = min(chunk, left)
            z = lo + width * rng.random((k, 2 * n))
            energy = np.sum(z[:, n:] ** 2, axis=1) + values_at(model.potential, z[:, :n])
            hits += int(np.count_nonzero(energy <= lam))
            left -= k
    p = hits / samples
    if hits == 0:
        return PhaseSpaceVolume(0.0, float(lam), "MonteCarlo", box_volume / samples, flagged=True)
    err = box_volume * math.sqrt(p * (1 - p) / samples)
    return PhaseSpaceVolume(box_volume * p, float(lam), "MonteCarlo", err)


def volume_separable(model: ModelSpec, lam: float, cells: int = 2048) -> PhaseSpaceVolume:
    """2D volume for ``V(x, y) = V1(x) + V2(y)`` by convolving the 1D phase volumes.

    ``Vol(lam) = int_{xi^2 + V1(x) <= lam} A2(lam - xi^2 - V1(x)) dx dxi`` where
    ``A2(e) = 2 int (e - V2)_+^{1/2} dy`` is the 1D volume of the second factor.
    """
    spec = model.potential
    if model.dimension != 2 or spec.form not in ("Harmonic", "Polynomial"):
        raise ValueError("separable volume needs a 2D Harmonic or Polynomial potential")
    box = integration_box(model, lam)
    if box is None or lam <= 0:
        return PhaseSpaceVolume(0.0, float(lam), "SeparableConvolution", 0.0)

    v0 = values_at(spec, np.zeros((1, 2)))[0]

    def axis_values(a, x):
        pts = np.zeros((len(x), 2))
        pts[:, a] = x
        return values_at(spec, pts) - v0

    hy = box.widths[1] / cells
    y = box.lo[1] + hy * (np.arange(cells) + 0.5)
    v2 = axis_values(1, y) + v0
    hx = box.widths[0] / cells
    x = box.lo[0] + hx * (np.arange(cells) + 0.5)
    v1 = axis_values(0, x)

    # Tabulate A2 on an energy grid, then integrate over (x, xi) by midpoint.
    top = lam - float(v1.min())
    e_tab = np.linspace(0.0, top, 4 * cells + 1)
    a_tab = np.array([2.0 * hy * np.sum(np.sqrt(np.maximum(e - v2, 0.0))) for e in e_tab])
    r = math.sqrt(lam)
    hp = 2 * r / cells
    xi = -r + hp * (np.arange(cells) + 0.5)
    total = 0.0
    for row in range(0, cells, 64):
        e = lam - xi[row:row + 64, None] ** 2 - v1[None, :]
        total += np.sum(np.interp(e, e_tab, a_tab, left=0.0))
    value = float(total * hx * hp)
    return PhaseSpaceVolume(value, float(lam), "SeparableConvolution", float("nan"))


@dataclass(frozen=True)
class MarginResult:
    delta: float
    shell_volume: float
    epsilon: float
    contained: bool
    capped: bool

    def to_dict(self) -> dict:
        return {"delta": self.delta, "shell_volume": self.shell_volume,
                "epsilon": self.epsilon, "contained": self.contained, "capped": self.capped}


def continuity_margin(model: ModelSpec, lam: float, epsilon: float, region: Box | None = None,
                      cap: float = 1.0, xtol: float = 1e-6) -> MarginResult:
    """Largest ``delta <= cap`` with shell volume between ``lam`` and ``lam + delta``
    below ``epsilon`` and, when ``region`` is given, ``{V <= lam + delta}``
    strictly inside it.

    Halving from ``cap`` brackets the answer, then bisection narrows it to a
    relative width ``xtol``; the lower end of the bracket is returned.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    base = volume_reduced(model, lam).value

    def shell(d):
        return volume_reduced(model, lam + d).value - base

    def contained(d):
        if region is None:
            return True
        box = sublevel_set_bound(model.potential, lam + d)
        return box is None or region.contains_box(box, strict=True)

    def ok(d):
        return contained(d) and shell(d) < epsilon

    if ok(cap):
        return MarginResult(cap, shell(cap), epsilon, True, True)
    hi = cap
    lo = cap / 2
    while not ok(lo):
        hi = lo
        lo /= 2
        if lo < cap * 2.0 ** -40:
            raise ValueError(
                f"no delta > 0 keeps the shell volume below {epsilon} with "
                "{V <= lam + delta} inside the identification region; enlarge the region")
    while hi - lo > xtol * lo:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return MarginResult(lo, shell(lo), epsilon, True, False)
