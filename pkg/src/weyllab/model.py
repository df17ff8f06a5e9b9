"""Catalog of flat desk-scale manifolds, confining potentials, and
lambda-equivalent pairs.

A model is a flat geometry (line, plane, circle, torus, interval, rectangle)
together with a non-negative potential.  Non-compact geometries must carry a
confining potential.  :func:`compactify` builds the compact comparison model
whose potential agrees with the original one on a box ``U`` containing the
classically allowed region and exceeds the energy level outside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

GEOMETRY_KINDS = ("Line1D", "Plane2D", "Circle", "Torus2D", "Interval", "Rectangle")
POTENTIAL_FORMS = ("Polynomial", "Harmonic", "Constant", "Patched")

_NONCOMPACT = {"Line1D": 1, "Plane2D": 2}
_PERIODIC = {"Circle": 1, "Torus2D": 2}
_DIRICHLET = {"Interval": 1, "Rectangle": 2}


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo_0, hi_0] x ... x [lo_{n-1}, hi_{n-1}]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("box bounds have different dimensions")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty box: lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def bounded(self) -> bool:
        return all(np.isfinite(self.lo)) and all(np.isfinite(self.hi))

    def expand(self, amount) -> "Box":
        d = np.broadcast_to(np.asarray(amount, dtype=float), (self.dimension,))
        return Box(np.subtract(self.lo, d), np.add(self.hi, d))

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def hull(self, other: "Box") -> "Box":
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def contains(self, points, strict: bool = False) -> np.ndarray:
        """Mask of points inside the box; ``points`` has shape (m, n)."""
        p = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if strict:
            return np.all((p > lo) & (p < hi), axis=1)
        return np.all((p >= lo) & (p <= hi), axis=1)

    def contains_box(self, other: "Box", strict: bool = False) -> bool:
        if strict:
            return all(a < c for a, c in zip(self.lo, other.lo)) and all(
                d < b for b, d in zip(self.hi, other.hi))
        return all(a <= c for a, c in zip(self.lo, other.lo)) and all(
            d <= b for b, d in zip(self.hi, other.hi))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Geometry:
    """Flat geometry.  ``extent`` and ``origin`` describe the coordinate chart;
    for the non-compact kinds the chart is all of R^n and both are ``None``."""

    kind: str
    extent: tuple[float, ...] | None = None
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in GEOMETRY_KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.kind in _NONCOMPACT:
            object.__setattr__(self, "extent", None)
            object.__setattr__(self, "origin", None)
            return
        n = _PERIODIC.get(self.kind) or _DIRICHLET[self.kind]
        if self.extent is None:
            raise ValueError(f"{self.kind} requires an extent")
        ext = tuple(float(v) for v in np.atleast_1d(self.extent))
        org = (0.0,) * n if self.origin is None else tuple(
            float(v) for v in np.atleast_1d(self.origin))
        if len(ext) != n or len(org) != n:
            raise ValueError(f"{self.kind} needs {n} extent/origin values")
        if any(not (e > 0 and math.isfinite(e)) for e in ext):
            raise ValueError(f"extent must be positive and finite, got {ext}")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "origin", org)

    @property
    def dimension(self) -> int:
        for table in (_NONCOMPACT, _PERIODIC, _DIRICHLET):
            if self.kind in table:
                return table[self.kind]
        raise AssertionError(self.kind)

    @property
    def compact(self) -> bool:
        return self.kind not in _NONCOMPACT

    @property
    def periodic(self) -> tuple[bool, ...]:
        return (self.kind in _PERIODIC,) * self.dimension

    @property
    def boundary(self) -> str:
        return "periodic" if self.kind in _PERIODIC else "dirichlet"

    @property
    def chart(self) -> Box | None:
        """Coordinate box of a compact geometry (``None`` when non-compact)."""
        if not self.compact:
            return None
        return Box(self.origin, np.add(self.origin, self.extent))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.compact:
            d["extent"] = list(self.extent)
            d["origin"] = list(self.origin)
        return d


def line() -> Geometry:
    return Geometry("Line1D")


def plane() -> Geometry:
    return Geometry("Plane2D")


def circle(circumference: float, origin: float = 0.0) -> Geometry:
    return Geometry("Circle", (circumference,), (origin,))


def torus(sides, origin=(0.0, 0.0)) -> Geometry:
    return Geometry("Torus2D", tuple(sides), tuple(origin))


def interval(a: float, b: float) -> Geometry:
    return Geometry("Interval", (b - a,), (a,))


def rectangle(lo, hi) -> Geometry:
    return Geometry("Rectangle", tuple(np.subtract(hi, lo)), tuple(lo))


def smoothstep(t):
    """Quintic C^2 ramp: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_derivative(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


@dataclass(frozen=True)
class PotentialSpec:
    """A potential from the catalog.

    Polynomial and Harmonic forms are separable: ``V(x) = sum_a p_a(x_a)``
    with ``p_a`` a polynomial (ascending coefficients) or ``k_a x_a**2``.
    A Patched potential equals ``base`` on ``region`` and ``outside`` far from
    it; with ``ramp > 0`` the two are blended by a C^2 quintic over a band of
    that width, otherwise the switch is a hard clamp.
    """

    form: str
    coefficients: tuple[tuple[float, ...], ...] = ()
    stiffness: tuple[float, ...] = ()
    level: float = 0.0
    dim: int = 0
    base: "PotentialSpec | None" = None
    region: Box | None = None
    outside: float = 0.0
    lambda_ref: float = 0.0
    ramp: float = 0.0

    def __post_init__(self):
        if self.form not in POTENTIAL_FORMS:
            raise ValueError(f"unknown potential form {self.form!r}")
        if self.form == "Harmonic":
            k = tuple(float(v) for v in np.atleast_1d(self.stiffness))
            if not k or any(v < 0 for v in k):
                raise ValueError("harmonic stiffness must be non-negative")
            object.__setattr__(self, "stiffness", k)
            object.__setattr__(self, "dim", len(k))
        elif self.form == "Polynomial":
            coeffs = tuple(tuple(float(c) for c in np.trim_zeros(np.atleast_1d(p), "b"))
                           for p in self.coefficients)
            if not coeffs:
                raise ValueError("polynomial needs coefficients for at least one axis")
            for p in coeffs:
                _check_polynomial(p)
            object.__setattr__(self, "coefficients", coeffs)
            object.__setattr__(self, "dim", len(coeffs))
        elif self.form == "Constant":
            if self.level < 0:
                raise ValueError("constant potential must be non-negative")
            if self.dim not in (1, 2):
                raise ValueError("constant potential needs dim 1 or 2")
        else:
            if self.base is None or self.region is None:
                raise ValueError("patched potential needs a base and a region")
            if self.outside <= self.lambda_ref:
                raise ValueError(
                    f"patched potential: outside level {self.outside} must exceed "
                    f"the reference level {self.lambda_ref}")
            if self.ramp < 0:
                raise ValueError("ramp width must be non-negative")
            if self.region.dimension != self.base.dim:
                raise ValueError("patch region dimension does not match base")
            object.__setattr__(self, "dim", self.base.dim)

    @property
    def confining(self) -> bool:
        """True when V grows without bound in every direction."""
        if self.form == "Harmonic":
            return all(k > 0 for k in self.stiffness)
        if self.form == "Polynomial":
            return all(len(p) >= 3 for p in self.coefficients)
        return False

    def to_dict(self) -> dict:
        if self.form == "Harmonic":
            return {"form": "Harmonic", "stiffness": list(self.stiffness)}
        if self.form == "Polynomial":
            return {"form": "Polynomial", "coefficients": [list(p) for p in self.coefficients]}
        if self.form == "Constant":
            return {"form": "Constant", "level": self.level, "dim": self.dim}
        return {"form": "Patched", "base": self.base.to_dict(), "region": self.region.to_dict(),
                "outside": self.outside, "lambda_ref": self.lambda_ref, "ramp": self.ramp}


def _check_polynomial(p):
    deg = len(p) - 1
    if deg < 0:
        return
    if deg % 2 or p[-1] <= 0:
        raise ValueError(f"polynomial {p} needs an even degree with positive leading coefficient")
    if _polynomial_min(p) < -1e-12 * max(1.0, max(abs(c) for c in p)):
        raise ValueError(f"polynomial {p} takes negative values")


def _polynomial_min(p) -> float:
    if len(p) == 1:
        return p[0]
    poly = np.polynomial.Polynomial(p)
    crit = poly.deriv().roots()
    crit = crit[np.abs(crit.imag) <= 1e-9 * (1 + np.abs(crit.real))].real
    if crit.size == 0:
        return float(p[0])
    return float(np.min(poly(crit)))


def harmonic(*stiffness: float) -> PotentialSpec:
    return PotentialSpec("Harmonic", stiffness=tuple(stiffness))


def polynomial(*coefficients) -> PotentialSpec:
    """One ascending coefficient sequence per axis, e.g. ``polynomial([0, 0, 0, 0, 1])`` is x**4."""
    return PotentialSpec("Polynomial", coefficients=tuple(tuple(c) for c in coefficients))


def constant(level: float, dim: int = 1) -> PotentialSpec:
    return PotentialSpec("Constant", level=float(level), dim=dim)


def patched(base: PotentialSpec, region: Box, outside: float, lambda_ref: float,
            ramp: float = 0.0) -> PotentialSpec:
    return PotentialSpec("Patched", base=base, region=region, outside=float(outside),
                         lambda_ref=float(lambda_ref), ramp=float(ramp))


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (dim > 1 and x.ndim == 1)
    if dim == 1 and (x.ndim <= 1):
        pts = x.reshape(-1, 1)
    else:
        pts = x.reshape(-1, dim)
    return pts, scalar, x.shape


def _evaluate(spec: PotentialSpec, pts: np.ndarray) -> np.ndarray:
    if spec.form == "Harmonic":
        return pts ** 2 @ np.asarray(spec.stiffness)
    if spec.form == "Polynomial":
        out = np.zeros(len(pts))
        for a, p in enumerate(spec.coefficients):
            out += np.polynomial.polynomial.polyval(pts[:, a], p)
        return out
    if spec.form == "Constant":
        return np.full(len(pts), spec.level)
    inner = _evaluate(spec.base, pts)
    w = patch_weight(spec.region, spec.ramp, pts)
    # Exact base values on the region keep the pair's potential match bitwise.
    return np.where(w == 1.0, inner, spec.outside + w * (inner - spec.outside))


def patch_weight(region: Box, ramp: float, pts: np.ndarray) -> np.ndarray:
    """Weight that is 1 on ``region`` and falls to 0 a distance ``ramp`` outside it."""
    lo, hi = np.asarray(region.lo), np.asarray(region.hi)
    beyond = np.maximum(lo - pts, 0.0) + np.maximum(pts - hi, 0.0)
    if ramp == 0:
        return np.all(beyond == 0.0, axis=1).astype(float)
    return np.prod(1.0 - smoothstep(beyond / ramp), axis=1)


def values_at(spec: PotentialSpec, points) -> np.ndarray:
    """Potential at an ``(m, n)`` array of points, as a flat length-m array."""
    return _evaluate(spec, np.asarray(points, dtype=float).reshape(-1, spec.dim))


def evaluate_potential(spec: PotentialSpec, x):
    """Evaluate ``V`` at one point or an array of points.

    In 1D ``x`` may be a scalar or a 1-d array; in 2D a point is a length-2
    sequence and a batch is an ``(m, 2)`` array.
    """
    pts, scalar, shape = _as_points(x, spec.dim)
    vals = _evaluate(spec, pts)
    if scalar:
        return float(vals[0])
    if spec.dim == 1:
        return vals.reshape(shape)
    return vals


@dataclass(frozen=True)
class ModelSpec:
    """A geometry from the catalog together with a potential."""

    geometry: Geometry
    potential: PotentialSpec
    name: str = ""

    def __post_init__(self):
        if self.geometry.dimension != self.potential.dim:
            raise ValueError(
                f"potential dimension {self.potential.dim} does not match "
                f"geometry {self.geometry.kind}")
        if not self.geometry.compact and not self.potential.confining:
            raise ValueError(
                f"{self.geometry.kind} is non-compact and needs a confining potential, "
                f"got {self.potential.form}")

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    @property
    def compact(self) -> bool:
        return self.geometry.compact

    @property
    def boundary(self) -> str:
        return self.geometry.boundary

    def V(self, x):
        return evaluate_potential(self.potential, x)

    def to_dict(self) -> dict:
        return {"name": self.name, "geometry": self.geometry.to_dict(),
                "potential": self.potential.to_dict()}


def _real_roots(p, level):
    q = np.array(p, dtype=float)
    q[0] -= level
    r = np.polynomial.Polynomial(q).roots()
    scale = 1.0 + np.abs(r.real)
    return r[np.abs(r.imag) <= 1e-6 * scale].real


def _unbounded(dim):
    return Box((-np.inf,) * dim, (np.inf,) * dim)


def sublevel_set_bound(spec: PotentialSpec, lam: float) -> Box | None:
    """A box guaranteed to contain ``{x : V(x) <= lam}``; ``None`` if the set is empty.

    The box for a Constant potential at or above its level is unbounded; callers
    intersect it with the chart of their geometry.
    """
    lam = float(lam)
    if spec.form == "Harmonic":
        if lam < 0:
            return None
        half = []
        for k in spec.stiffness:
            half.append(math.sqrt(lam / k) if k > 0 else np.inf)
        half = np.asarray(half) * (1 + 1e-12)
        return Box(-half, half)
    if spec.form == "Polynomial":
        mins = [_polynomial_min(p) for p in spec.coefficients]
        lo, hi = [], []
        for a, p in enumerate(spec.coefficients):
            level = lam - (sum(mins) - mins[a])
            if level < mins[a]:
                return None
            if len(p) == 1:
                lo.append(-np.inf)
                hi.append(np.inf)
                continue
            roots = _real_roots(p, level)
            if roots.size == 0:
                # Level sits at a minimum and the double root went complex.
                x0 = np.polynomial.Polynomial(p).deriv().roots()
                roots = x0.real
            pad = 1e-9 * (1.0 + np.max(np.abs(roots)))
            lo.append(float(roots.min()) - pad)
            hi.append(float(roots.max()) + pad)
        return Box(lo, hi)
    if spec.form == "Constant":
        return _unbounded(spec.dim) if spec.level <= lam else None
    if lam >= spec.outside:
        return _unbounded(spec.dim)
    inner = sublevel_set_bound(spec.base, lam)
    if inner is None:
        return None
    return inner.intersect(spec.region.expand(spec.ramp))


def potential_minimum(spec: PotentialSpec) -> float:
    if spec.form == "Harmonic":
        return 0.0
    if spec.form == "Polynomial":
        return float(sum(_polynomial_min(p) for p in spec.coefficients))
    if spec.form == "Constant":
        return spec.level
    return min(potential_minimum(spec.base), spec.outside)


@dataclass(frozen=True)
class EquivalentPair:
    """Two models identified isometrically on the box ``region``.

    The identification is the identity map in chart coordinates, so the two
    models agree on ``region`` whenever their potentials do.
    """

    model_a: ModelSpec
    model_b: ModelSpec
    region: Box
    lam: float
    margin: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.model_a.dimension != self.model_b.dimension:
            raise ValueError("pair models have different dimensions")
        if self.region.dimension != self.model_a.dimension:
            raise ValueError("identification region has the wrong dimension")
        if not self.region.bounded:
            raise ValueError("identification region must be relatively compact")

    def swapped(self) -> "EquivalentPair":
        return replace(self, model_a=self.model_b, model_b=self.model_a)

    def with_level(self, lam: float) -> "EquivalentPair":
        return replace(self, lam=float(lam))

    def to_dict(self) -> dict:
        return {"model_a": self.model_a.to_dict(), "model_b": self.model_b.to_dict(),
                "region": self.region.to_dict(), "lambda": self.lam, "margin": self.margin}


def default_outside_level(lam: float) -> float:
    return lam + max(1.0, lam)


def compactify(model: ModelSpec, lam: float, margin: float,
               outside: float | None = None) -> EquivalentPair:
    """Embed the allowed region of a confining model into a flat circle/torus.

    ``U`` is the sublevel box at ``lam`` grown by ``margin``.  The compact chart
    adds a further ``margin`` band on each side, across which the potential is
    blended up to ``outside`` (default ``lam + max(1, lam)``).
    """
    if model.compact:
        raise ValueError("compactify expects a non-compact model")
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin}")
    inner = sublevel_set_bound(model.potential, lam)
    if inner is None:
        raise ValueError(f"sublevel set {{V <= {lam}}} is empty")
    region = inner.expand(margin)
    mu_out = default_outside_level(lam) if outside is None else float(outside)
    vbar = patched(model.potential, region, mu_out, lam, ramp=margin)
    origin = np.subtract(region.lo, margin)
    extent = np.add(region.widths, 2 * margin)
    geom = circle(extent[0], origin[0]) if model.dimension == 1 else torus(extent, origin)
    bar = ModelSpec(geom, vbar, name=(model.name + "-compact") if model.name else "compact")

    # V-bar must stay above lam everywhere outside U.
    pts = _chart_samples(geom.chart, 4001 if model.dimension == 1 else 301)
    outside_u = ~region.contains(pts)
    vals = values_at(vbar, pts)
    if np.any(outside_u) and vals[outside_u].min() <= lam:
        raise ValueError(
            f"margin {margin} too small: compact potential drops to "
            f"{vals[outside_u].min():.6g} <= {lam} outside U")
    return EquivalentPair(model, bar, region, float(lam), float(margin))


def _chart_samples(chart: Box, m: int) -> np.ndarray:
    axes = [np.linspace(a, b, m) for a, b in zip(chart.lo, chart.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def geometry_from_dict(d: dict) -> Geometry:
    return Geometry(d["kind"], d.get("extent"), d.get("origin"))


def potential_from_dict(d: dict) -> PotentialSpec:
    form = d.get("form")
    if form == "Harmonic":
        return PotentialSpec("Harmonic", stiffness=tuple(d["stiffness"]))
    if form == "Polynomial":
        return PotentialSpec("Polynomial", coefficients=tuple(tuple(p) for p in d["coefficients"]))
    if form == "Constant":
        return PotentialSpec("Constant", level=float(d["level"]), dim=int(d["dim"]))
    if form == "Patched":
        region = Box(tuple(d["region"]["lo"]), tuple(d["region"]["hi"]))
        return patched(potential_from_dict(d["base"]), region, d["outside"], d["lambda_ref"],
                       d.get("ramp", 0.0))
    raise ValueError(f"unknown potential form {form!r}")


def model_from_dict(d: dict) -> ModelSpec:
    """Inverse of :meth:`ModelSpec.to_dict`."""
    return ModelSpec(geometry_from_dict(d["geometry"]), potential_from_dict(d["potential"]),
                     d.get("name", ""))


def catalog() -> dict[str, ModelSpec]:
    """Named desk-scale models used by the demos and the acceptance suite."""
    two_pi = 2 * math.pi
    return {
        "oscillator-1d": ModelSpec(line(), harmonic(1.0), "oscillator-1d"),
        "oscillator-2d": ModelSpec(plane(), harmonic(1.0, 1.0), "oscillator-2d"),
        "anisotropic-2d": ModelSpec(plane(), harmonic(1.0, 2.0), "anisotropic-2d"),
        "quartic-1d": ModelSpec(line(), polynomial([0, 0, 0, 0, 1]), "quartic-1d"),
        "tilted-quartic-1d": ModelSpec(line(), polynomial([1, -1, 0, 0, 1]), "tilted-quartic-1d"),
        "mixed-2d": ModelSpec(plane(), polynomial([0, 0, 1], [0, 0, 0, 0, 1]), "mixed-2d"),
        "circle": ModelSpec(circle(two_pi), constant(0.0, 1), "circle"),
        "torus": ModelSpec(torus((two_pi, two_pi)), constant(0.0, 2), "torus"),
        "interval": ModelSpec(interval(0.0, math.pi), constant(0.0, 1), "interval"),
        "rectangle": ModelSpec(rectangle((0.0, 0.0), (math.pi, 2.0)), constant(0.0, 2),
                               "rectangle"),
    }
