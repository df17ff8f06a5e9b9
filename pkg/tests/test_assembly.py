import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from weyllab.assembly import (Axis, Grid, TruncationError, apply, assemble, dump_matrix,
                              interior_grid, model_grid, periodic_grid, resolution_spacing,
                              truncation_audit)
from weyllab.model import (ModelSpec, circle, constant, harmonic, interval, line, plane,
                           polynomial, rectangle, torus)


def test_circle_four_nodes_is_circulant():
    m = ModelSpec(circle(2 * math.pi), constant(0.0, 1))
    op = assemble(m, periodic_grid(2 * math.pi, 4), 1.0)
    h = math.pi / 2
    d, o = 2 / h ** 2, -1 / h ** 2
    expected = np.array([[d, o, 0, o], [o, d, o, 0], [0, o, d, o], [o, 0, o, d]])
    np.testing.assert_array_equal(op.matrix.toarray(), expected)


def test_interval_three_nodes():
    m = ModelSpec(interval(0.0, 1.0), constant(0.0, 1))
    op = assemble(m, interior_grid(0.0, 1.0, 3), 1.0)
    expected = np.array([[32.0, -16, 0], [-16, 32, -16], [0, -16, 32]])
    np.testing.assert_array_equal(op.matrix.toarray(), expected)


def test_harmonic_ground_state():
    m = ModelSpec(line(), harmonic(1.0))
    op = assemble(m, interior_grid(-4.0, 4.0, 801, truncation=True), 0.1)
    w = la.eigvalsh(op.matrix.toarray(), subset_by_index=[0, 0])
    assert abs(w[0] - 0.1) < 1e-3


def test_stencil_entries_2d():
    m = ModelSpec(rectangle((0, 0), (1, 2)), constant(0.5, 2))
    g = Grid((Axis(0.0, 0.25, 1, 3, False), Axis(0.0, 0.4, 1, 4, False)))
    hbar = 0.3
    A = assemble(m, g, hbar).matrix.toarray()
    hx, hy = 0.25, 0.4
    np.testing.assert_allclose(np.diag(A), hbar ** 2 * (2 / hx ** 2 + 2 / hy ** 2) + 0.5,
                               rtol=1e-15)
    # Row-major: node (i, j) -> 4 i + j.
    assert A[0, 1] == -hbar ** 2 / hy ** 2
    assert A[0, 4] == -hbar ** 2 / hx ** 2
    assert A[3, 4] == 0.0


def test_assembly_exactly_symmetric_and_psd():
    m = ModelSpec(torus((2.0, 3.0)), constant(0.0, 2))
    op = assemble(m, periodic_grid((2.0, 3.0), (7, 9)), 0.7)
    assert (op.matrix != op.matrix.T).nnz == 0
    assert op.gershgorin_lower() >= -1e-12 * op.norm_max


def test_rejects_bad_inputs():
    m = ModelSpec(circle(1.0), constant(0.0, 1))
    g = periodic_grid(1.0, 5)
    with pytest.raises(ValueError, match="hbar"):
        assemble(m, g, 0.0)
    with pytest.raises(ValueError):
        assemble(m, interior_grid(0.0, 1.0, 5), 1.0)
    with pytest.raises(ValueError):
        Axis(0.0, 0.1, 0, 2, True)
    with pytest.raises(ValueError):
        Axis(0.0, -0.1, 0, 5, True)


def test_truncation_violation_names_worst_node():
    m = ModelSpec(line(), harmonic(1.0))
    g = interior_grid(-1.0, 1.0, 20, truncation=True)
    with pytest.raises(TruncationError, match="boundary node"):
        assemble(m, g, 0.1, lambda_max=1.0)


@pytest.mark.parametrize("spec, box, lam, ratio, passed", [
    (harmonic(1.0), 4.0, 1.0, 16.0, True),
    (harmonic(1.0), 1.0, 1.0, 1.0, False),
    (polynomial([0, 0, 0, 0, 1]), 2.0, 4.0, 4.0, True),
])
def test_truncation_audit(spec, box, lam, ratio, passed):
    m = ModelSpec(line(), spec)
    audit = truncation_audit(m, interior_grid(-box, box, 41, truncation=True), lam)
    assert math.isclose(audit.ratio, ratio, rel_tol=1e-12)
    assert audit.passed is passed


def test_apply_constants():
    m = ModelSpec(circle(3.0), constant(0.0, 1))
    op = assemble(m, periodic_grid(3.0, 11), 0.5)
    np.testing.assert_allclose(apply(op, np.ones(11)), 0.0, atol=1e-12)
    m2 = ModelSpec(torus((1.0, 2.0)), constant(2.5, 2))
    op2 = assemble(m2, periodic_grid((1.0, 2.0), (5, 6)), 0.5)
    np.testing.assert_allclose(apply(op2, np.ones(30)), 2.5, rtol=1e-12)
    with pytest.raises(ValueError):
        apply(op, np.ones(10))


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_quadratic_form_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = ModelSpec(plane(), harmonic(1.0, 2.0))
    g = model_grid(m, 0.3, lambda_max=1.0)
    op = assemble(m, g, 0.4)
    u = rng.standard_normal(op.order)
    assert u @ apply(op, u) >= 0.0
    assert la.eigvalsh(op.matrix.toarray(), subset_by_index=[0, 0])[0] >= 0.0


def test_rayleigh_quotient_second_order():
    m = ModelSpec(line(), harmonic(1.0))
    hbar = 0.5
    err, hs = [], []
    for n in (99, 199, 399, 799):
        g = interior_grid(-4.0, 4.0, n)
        x = g.points()[:, 0]
        u = np.exp(-x ** 2 / (2 * hbar))
        op = assemble(m, g, hbar)
        err.append(abs(u @ apply(op, u) / (u @ u) - hbar))
        hs.append(g.spacing[0])
    slope = np.polyfit(np.log(hs), np.log(err), 1)[0]
    assert 1.7 <= slope <= 2.3


def test_dirichlet_monotonicity():
    # Growing the box on one lattice adds rows and columns, so by interlacing
    # the lowest eigenvalues can only move down toward the continuum values.
    m = ModelSpec(line(), harmonic(1.0))
    hbar, h = 0.2, 0.02
    exact = hbar * (2 * np.arange(10) + 1)
    spectra = []
    for L in (2.0, 3.0, 4.0):
        n = int(round(2 * L / h)) - 1
        spectra.append(la.eigvalsh(assemble(m, interior_grid(-L, L, n), hbar).matrix.toarray(),
                                   subset_by_index=[0, 9]))
    assert np.all(spectra[1] <= spectra[0] + 1e-12) and np.all(spectra[2] <= spectra[1] + 1e-12)
    # Truncation-dominated levels get more accurate; the widest box is limited by O(h^2) only.
    assert np.all(np.abs(spectra[2] - exact)[6:] < np.abs(spectra[0] - exact)[6:])
    np.testing.assert_allclose(spectra[2], exact, rtol=1.5e-3)


def test_model_grid_truncation_passes_audit():
    m = ModelSpec(plane(), harmonic(1.0, 0.5))
    g = model_grid(m, resolution_spacing(0.2, 1.0), lambda_max=1.0, safety=4.0)
    audit = truncation_audit(m, g, 1.0)
    assert audit.passed and audit.ratio >= 4.0


def test_dump_matrix_format(tmp_path):
    m = ModelSpec(circle(2 * math.pi), constant(0.0, 1))
    op = assemble(m, periodic_grid(2 * math.pi, 4), 1.0)
    path = dump_matrix(op, tmp_path / "h.txt")
    lines = path.read_text().splitlines()
    assert len(lines) == 12
    rows = [tuple(map(int, ln.split()[:2])) for ln in lines]
    assert rows == sorted(rows)
    r, c, v = lines[0].split()
    assert (r, c) == ("0", "0") and float(v) == 2 / (math.pi / 2) ** 2
