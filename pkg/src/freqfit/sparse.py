"""Sparse helpers: symmetry checks and an SPD factorization with a PD test."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

SYMMETRY_RTOL = 1e-12


def asymmetry(A) -> float:
    """Return max |A - A^T| / max |A| (0 for an all-zero matrix)."""
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return 0.0
    D = A - A.T
    return (abs(D).max() if D.nnz else 0.0) / scale


class SPDFactor:
    """Symmetric factorization of a sparse matrix that is known to be SPD.

    SuperLU is run with a symmetric fill-reducing ordering and no row
    pivoting, so the factorization is an LDL^T in disguise: the matrix is
    positive definite iff every pivot on the diagonal of U is positive.
    """

    def __init__(self, A, x=None):
        A = sp.csc_matrix(A, dtype=float)
        n = A.shape[0]
        self.n = n
        if n <= 64:
            # Dense Cholesky is both cheaper and a sharper PD test at this size.
            dense = A.toarray()
            try:
                self._chol = np.linalg.cholesky(dense)
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite("matrix is not positive definite", x=x) from None
            self._lu = None
            return
        self._chol = None
        try:
            lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:  # exactly singular
            raise NotPositiveDefinite(f"factorization failed: {exc}", x=x) from None
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefinite("factorization needed off-diagonal pivots", x=x)
        pivots = lu.U.diagonal()
        scale = np.max(np.abs(A.diagonal())) if n else 1.0
        if not np.all(pivots > scale * n * np.finfo(float).eps):
            raise NotPositiveDefinite("non-positive pivot in factorization", x=x)
        self._lu = lu

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(b)
        L = self._chol
        y = solve_triangular(L, b, lower=True, check_finite=False)
        return solve_triangular(L.T, y, lower=False, check_finite=False)


def factorize_spd(A, x=None) -> SPDFactor:
    """Factorize ``A`` or raise :class:`NotPositiveDefinite`."""
    return SPDFactor(A, x=x)


def is_positive_definite(A) -> bool:
    try:
        factorize_spd(A)
    except NotPositiveDefinite:
        return False
    return True
