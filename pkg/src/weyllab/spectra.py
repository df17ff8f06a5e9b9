"""Eigenvalue counting by matrix inertia.

``N(A, lam)`` is the number of eigenvalues of ``A`` strictly below ``lam``.
By Sylvester's law of inertia it equals the number of negative pivots of any
symmetric ``L D L^T`` factorization of ``A - lam I``, so no eigenvalue is ever
computed.  Tridiagonal matrices use the Sturm-sequence recurrence; everything
else goes through a sparse factorization with a symmetric fill-reducing
permutation and diagonal pivots only.

Floating point makes "strictly below" ambiguous when an eigenvalue sits on
``lam``; every count is therefore taken at ``lam - sigma`` with
``sigma = 1e-9 * max(1, |lam|)`` and the shift is reported.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperator

DENSE_ORDER_LIMIT = 4000
PROJECTOR_RANK_LIMIT = 500
PIVOT_TOLERANCE = 1e-14


class CountingError(RuntimeError):
    """Factorization broke down at every retried shift."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EigenSolverError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class CountingResult:
    count: int
    lam: float
    method: str
    shift: float
    min_pivot: float
    order: int
    attempts: int = 1

    def to_dict(self) -> dict:
        return {"count": self.count, "lambda": self.lam, "method": self.method,
                "shift": self.shift, "min_pivot": self.min_pivot, "order": self.order,
                "attempts": self.attempts}


def tie_shift(lam: float) -> float:
    return 1e-9 * max(1.0, abs(lam))


def _matrix(A):
    if isinstance(A, DiscreteOperator):
        return A.matrix
    if sp.issparse(A):
        return A
    return np.asarray(A, dtype=float)


def _is_tridiagonal(A) -> bool:
    if sp.issparse(A):
        C = A.tocoo()
        return C.nnz == 0 or int(np.max(np.abs(C.row - C.col))) <= 1
    n = A.shape[0]
    return n <= 2 or not np.any(np.triu(A, 2)) and not np.any(np.tril(A, -2))


def _norm(A) -> float:
    if sp.issparse(A):
        return float(abs(A).sum(axis=1).max()) if A.nnz else 0.0
    return float(np.abs(A).sum(axis=1).max()) if A.size else 0.0


def sturm_count(diag, off, x: float) -> tuple[int, float]:
    """Negative terms of the Sturm sequence of ``tridiag(off, diag, off) - x``.

    Returns the count and the smallest |pivot| seen.  Tiny pivots are replaced
    by ``-pivmin`` (the LAPACK ``dstebz`` convention), which keeps the count
    backward stable.
    """
    diag = np.asarray(diag, dtype=float)
    off2 = np.asarray(off, dtype=float) ** 2
    pivmin = np.finfo(float).tiny * max(1.0, float(off2.max()) if off2.size else 1.0)
    count = 0
    q = diag[0] - x
    if abs(q) < pivmin:
        q = -pivmin
    smallest = abs(q)
    count += q < 0
    for i in range(1, diag.size):
        q = diag[i] - x - off2[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin
        smallest = min(smallest, abs(q))
        count += q < 0
    return int(count), float(smallest)


def ldlt_inertia(A, x: float) -> tuple[int, float]:
    """Negative pivots of a sparse ``L D L^T`` of ``A - x I``.

    Uses SuperLU with a minimum-degree ordering of ``A + A^T`` applied
    symmetrically and no off-diagonal pivoting, so ``diag(U)`` is ``D``.
    Raises ``ZeroDivisionError`` if the factorization had to leave the
    diagonal or hit an exact zero pivot.
    """
    n = A.shape[0]
    M = (sp.csc_matrix(A) - x * sp.identity(n, format="csc")).tocsc()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=sp.SparseEfficiencyWarning)
            lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise ZeroDivisionError(str(exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise ZeroDivisionError("factorization left the diagonal")
    d = lu.U.diagonal()
    return int(np.count_nonzero(d < 0)), float(np.min(np.abs(d)))


def count_below(op, lam: float, shift: float | None = None,
                max_retries: int = 8) -> CountingResult:
    """``N(A, lam)``: eigenvalues of ``A`` below ``lam - shift`` via inertia.

    ``op`` may be a :class:`DiscreteOperator`, a sparse matrix or a dense
    array.  A pivot smaller than ``1e-14 * ||A||`` counts as a breakdown; the
    shift is then doubled, up to ``max_retries`` times.
    """
    A = _matrix(op)
    n = A.shape[0]
    sigma = tie_shift(lam) if shift is None else float(shift)
    scale = max(_norm(A), abs(lam), 1.0)
    tri = _is_tridiagonal(A)
    if tri:
        if sp.issparse(A):
            diag = A.diagonal()
            off = A.diagonal(1) if n > 1 else np.empty(0)
        else:
            diag, off = np.diag(A), np.diag(A, 1)
    history = []
    for attempt in range(1, max_retries + 2):
        x = lam - sigma
        try:
            if tri:
                count, pivot = sturm_count(diag, off, x)
                method = "SturmTridiagonal"
            else:
                count, pivot = ldlt_inertia(A, x)
                method = "InertiaLDLT"
        except ZeroDivisionError as exc:
            history.append({"shift": sigma, "error": str(exc)})
        else:
            if tri or pivot >= PIVOT_TOLERANCE * scale:
                return CountingResult(count, float(lam), method, sigma, pivot, n, attempt)
            history.append({"shift": sigma, "min_pivot": pivot})
        sigma *= 2.0
    raise CountingError(f"inertia factorization broke down at lambda={lam}",
                        {"order": n, "attempts": history})


def dense_count_oracle(op, lam: float, shift: float | None = None) -> CountingResult:
    """Reference count from a full symmetric eigendecomposition.

    Uses the same tie-breaking shift as :func:`count_below` so the two routes
    count the same quantity.
    """
    A = _matrix(op)
    n = A.shape[0]
    if n > DENSE_ORDER_LIMIT:
        raise ValueError(f"order {n} exceeds the dense oracle limit {DENSE_ORDER_LIMIT}")
    dense = A.toarray() if sp.issparse(A) else A
    w = la.eigvalsh(dense)
    sigma = tie_shift(lam) if shift is None else float(shift)
    gap = float(np.min(np.abs(w - (lam - sigma)))) if n else math.inf
    return CountingResult(int(np.count_nonzero(w < lam - sigma)), float(lam), "DenseOracle",
                          sigma, gap, n)


@dataclass(frozen=True, eq=False)
class SpectralProjector:
    """Orthonormal eigenbasis (columns) for the eigenvalues below ``lam - shift``."""

    basis: np.ndarray
    values: np.ndarray
    lam: float
    shift: float

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def apply(self, u) -> np.ndarray:
        return self.basis @ (self.basis.T @ u)

    def dense(self) -> np.ndarray:
        return self.basis @ self.basis.T


def spectral_projector(op, lam: float, max_rank: int = PROJECTOR_RANK_LIMIT) -> SpectralProjector:
    A = _matrix(op)
    n = A.shape[0]
    counted = count_below(A, lam)
    k, sigma = counted.count, counted.shift
    if k > max_rank:
        raise ValueError(f"N(A, {lam}) = {k} exceeds the projector limit {max_rank}")
    if k == 0:
        return SpectralProjector(np.zeros((n, 0)), np.zeros(0), float(lam), sigma)
    if n <= DENSE_ORDER_LIMIT or k >= n - 1:
        dense = A.toarray() if sp.issparse(A) else A
        w, v = la.eigh(dense, subset_by_index=[0, k - 1])
        info = {"solver": "dense"}
    else:
        lower = _gershgorin_lower(A) - 1.0
        try:
            w, v = spla.eigsh(sp.csc_matrix(A), k=k, sigma=lower, which="LM", tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError("shift-invert Lanczos did not converge",
                                   {"converged": len(exc.eigenvalues), "wanted": k}) from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        info = {"solver": "eigsh"}
    resid = np.linalg.norm(A @ v - v * w, axis=0)
    gram = v.T @ v - np.eye(k)
    norm = max(_norm(A), 1.0)
    info.update(max_residual=float(resid.max()), orthogonality=float(np.abs(gram).max()))
    if resid.max() > 1e-8 * norm or np.abs(gram).max() > 1e-10 or w.max() >= lam - sigma:
        raise EigenSolverError("eigenbasis failed its residual/orthogonality checks", info)
    return SpectralProjector(v, w, float(lam), sigma)


def _gershgorin_lower(A) -> float:
    if sp.issparse(A):
        d = A.diagonal()
        off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    else:
        d = np.diag(A)
        off = np.abs(A).sum(axis=1) - np.abs(d)
    return float(np.min(d - off))


@dataclass(frozen=True)
class RankLemmaVerdict:
    status: str
    n_below: int
    rank_b: int
    min_eig_sum: float
    mu: float

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_dict(self) -> dict:
        return {"status": self.status, "n_below": self.n_below, "rank_b": self.rank_b,
                "min_eig_sum": self.min_eig_sum, "mu": self.mu}


def numerical_rank(B, rtol: float = 1e-10) -> int:
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    s = la.svdvals(B)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def rank_lemma_check(A, B, mu: float) -> RankLemmaVerdict:
    """If ``A + B >= mu`` and ``rank(B) <= k`` then ``N(A, mu) <= k``.

    Dense check; the precondition is verified first and a violation is
    reported as ``"precondition-failed"`` rather than a lemma failure.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError("A and B must have the same shape")
    tol = 1e-12 * max(1.0, abs(mu), float(np.abs(A).sum(axis=1).max()))
    low = float(la.eigvalsh(A + B, subset_by_index=[0, 0])[0])
    k = numerical_rank(B)
    if low < mu - tol:
        return RankLemmaVerdict("precondition-failed", -1, k, low, float(mu))
    below = int(np.count_nonzero(la.eigvalsh(A) < mu - tol))
    return RankLemmaVerdict("PASS" if below <= k else "FAIL", below, k, low, float(mu))
