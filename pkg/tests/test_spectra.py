import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_sparse_symmetric
from weyllab.assembly import assemble, interior_grid, model_grid
from weyllab.model import ModelSpec, harmonic, line, plane
from weyllab.spectra import (CountingError, count_below, dense_count_oracle, ldlt_inertia,
                             numerical_rank, rank_lemma_check, spectral_projector, sturm_count,
                             tie_shift)


def test_diagonal_count():
    assert count_below(np.diag([0.5, 1.5, 2.5]), 2.0).count == 2


def test_dense_oracle_trivia():
    assert dense_count_oracle(np.array([[0.0, 1.0], [1.0, 0.0]]), 0.0).count == 1
    assert dense_count_oracle(np.eye(5), 1.0).count == 0
    assert count_below(np.eye(5), 1.0).count == 0


def test_nonnegative_operator_below_zero(oscillator2d):
    op = assemble(oscillator2d, model_grid(oscillator2d, 0.2, 1.0), 0.3)
    assert count_below(op, 0.0).count == 0
    assert count_below(op, -1.0).count == 0


def test_harmonic_count_fine_grid(oscillator):
    op = assemble(oscillator, model_grid(oscillator, 0.05 / 8, 1.0), 0.05)
    res = count_below(op, 1.0)
    assert res.count == 10
    assert res.method == "SturmTridiagonal"
    assert dense_count_oracle(op, 1.0).count == 10


def test_methods_and_diagnostics(oscillator2d):
    op = assemble(oscillator2d, model_grid(oscillator2d, 0.1, 1.0), 0.2)
    res = count_below(op, 1.0)
    assert res.method == "InertiaLDLT"
    assert res.shift == tie_shift(1.0) == 1e-9
    assert res.min_pivot > 0 and res.order == op.order
    assert res.count == dense_count_oracle(op, 1.0).count


def test_tie_shift_scales_with_lambda():
    assert tie_shift(0.01) == 1e-9
    assert tie_shift(-50.0) == pytest.approx(5e-8, rel=1e-15)


def test_sturm_matches_eigvalsh(rng):
    for _ in range(50):
        n = int(rng.integers(1, 60))
        d, e = rng.standard_normal(n), rng.standard_normal(n - 1)
        T = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
        x = float(rng.standard_normal())
        assert sturm_count(d, e, x)[0] == np.count_nonzero(np.linalg.eigvalsh(T) < x)


def test_breakdown_reported_with_diagnostics():
    # A - I is singular and not tridiagonal; an exact zero shift cannot be rescued.
    A = sp.csr_matrix(np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 2.0]]))
    with pytest.raises(CountingError) as info:
        count_below(A, 1.0, shift=0.0, max_retries=2)
    assert len(info.value.diagnostics["attempts"]) == 3
    res = count_below(A, 1.0)
    assert res.count == dense_count_oracle(A, 1.0).count == 1


@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(10, 120))
def test_inertia_matches_oracle(seed, n):
    rng = np.random.default_rng(seed)
    A = random_sparse_symmetric(rng, n)
    lam = float(rng.uniform(-2, 2))
    res = count_below(A, lam)
    assert res.count == dense_count_oracle(A, lam, shift=res.shift).count
    assert 0 <= res.count <= n


@given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(-5, 5))
def test_shift_equivariance(seed, t):
    rng = np.random.default_rng(seed)
    A = random_sparse_symmetric(rng, 40)
    lam = float(rng.uniform(-1, 1))
    base = count_below(A, lam)
    moved = count_below(A + t * sp.identity(40), lam + t, shift=base.shift)
    # Exact in exact arithmetic; adding t I perturbs eigenvalues by round-off only.
    gap = np.min(np.abs(np.linalg.eigvalsh(A.toarray()) - (lam - base.shift)))
    if gap > 1e-10 * (1 + abs(t)):
        assert moved.count == base.count


def test_monotone_in_lambda(oscillator):
    op = assemble(oscillator, model_grid(oscillator, 0.01, 3.0), 0.1)
    counts = [count_below(op, lam).count for lam in np.linspace(-1, 3, 41)]
    assert counts == sorted(counts)


def test_projector_trivia():
    P = spectral_projector(np.diag([1.0, 2.0, 3.0]), 2.5)
    assert P.rank == 2
    np.testing.assert_allclose(np.abs(P.basis), np.eye(3)[:, :2], atol=1e-14)
    Q = spectral_projector(np.diag([1.0, 2.0, 3.0]), 0.0)
    assert Q.rank == 0


def test_projector_harmonic(oscillator):
    # On the 801-node grid the third level sits at 0.49992, just below 0.5:
    # second-order differences pull every level down, so the count is 3.
    op = assemble(oscillator, interior_grid(-4.0, 4.0, 801, truncation=True), 0.1)
    P = spectral_projector(op, 0.5)
    assert P.rank == count_below(op, 0.5).count == dense_count_oracle(op, 0.5).count == 3
    np.testing.assert_allclose(P.values, [0.1, 0.3, 0.5], atol=2e-4)
    np.testing.assert_allclose(P.basis.T @ P.basis, np.eye(3), atol=1e-10)


def test_projector_sparse_path(oscillator2d):
    op = assemble(oscillator2d, model_grid(oscillator2d, 0.03, 1.0), 0.2)
    assert op.order > 4000
    P = spectral_projector(op, 1.0)
    assert P.rank == count_below(op, 1.0).count
    r = op.matrix @ P.basis - P.basis * P.values
    assert np.abs(r).max() < 1e-8 * op.norm_max


def test_projector_guard(oscillator):
    op = assemble(oscillator, model_grid(oscillator, 0.001, 1.0), 0.001)
    with pytest.raises(ValueError, match="projector limit"):
        spectral_projector(op, 1.0, max_rank=100)


def test_rank_lemma_examples():
    v = rank_lemma_check(np.diag([0.0, 2.0]), np.diag([2.0, 0.0]), 2.0)
    assert v.status == "PASS" and v.rank_b == 1 and v.n_below == 1
    w = rank_lemma_check(np.diag([3.0, 4.0]), np.zeros((2, 2)), 3.0)
    assert w.status == "PASS" and w.rank_b == 0 and w.n_below == 0
    bad = rank_lemma_check(np.diag([0.0, 2.0]), np.zeros((2, 2)), 2.0)
    assert bad.status == "precondition-failed"


def test_numerical_rank(rng):
    Q = np.linalg.qr(rng.standard_normal((30, 4)))[0]
    assert numerical_rank(3.0 * Q @ Q.T) == 4
    assert numerical_rank(np.zeros((5, 5))) == 0


def test_ldlt_rejects_off_diagonal_pivoting():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ZeroDivisionError):
        ldlt_inertia(A, 0.0)
