"""Numerical checks of the semiclassical Weyl law for ``hbar**2 * Laplacian + V``
on flat desk-scale manifolds, together with the localization estimates behind it."""

__version__ = "0.1.0"

from .model import (Box, EquivalentPair, Geometry, ModelSpec, PotentialSpec, circle, compactify,
                    constant, harmonic, interval, line, patched, plane, polynomial, rectangle,
                    torus)
from .assembly import DiscreteOperator, Grid, assemble, model_grid, pair_grids
from .spectra import count_below, dense_count_oracle, rank_lemma_check, spectral_projector
from .phasespace import continuity_margin, volume_monte_carlo, volume_reduced
from .ims import build_partition, commutator_check, ims_residual, localized_bound_check

__all__ = [
    "Box", "EquivalentPair", "Geometry", "ModelSpec", "PotentialSpec", "circle", "compactify",
    "constant", "harmonic", "interval", "line", "patched", "plane", "polynomial", "rectangle",
    "torus", "DiscreteOperator", "Grid", "assemble", "model_grid", "pair_grids", "count_below",
    "dense_count_oracle", "rank_lemma_check", "spectral_projector", "continuity_margin",
    "volume_monte_carlo", "volume_reduced", "build_partition", "commutator_check",
    "ims_residual", "localized_bound_check",
]
