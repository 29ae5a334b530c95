"""Generalized SVD of a matrix pair and the truncated-GSVD Gauss-Newton step.

For ``A`` (``r x n``) and ``L`` (``p x n``) with ``[A; L]`` of full column rank,

    A = U diag(c) Z^{-1},    L = V diag(s) Z^{-1},    c**2 + s**2 = 1,

with ``c`` sorted in nondecreasing order.  Directions in the null space of
``L`` have ``s = 0, c = 1`` and therefore sit at the end.  ``U`` and ``V``
are stored with ``n`` columns; a column is zero where the matching ``c`` or
``s`` vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular, svd

from .errors import CommonNullspace, TruncationOutOfRange

RANK_TOL = 1e-12


@dataclass(frozen=True)
class GsvdFactors:
    U: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    Zinv: np.ndarray
    c: np.ndarray
    s: np.ndarray
    p: int  # numerical rank of L; indices >= p form its null-space block

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def kappa(self) -> int:
        """Numerical rank of ``A``."""
        return int(np.count_nonzero(self.c > RANK_TOL))

    @property
    def max_truncation(self) -> int:
        """Largest admissible truncation index for :func:`tgsvd_step`."""
        return int(np.count_nonzero(self.c[: self.p] > RANK_TOL))

    def ratios(self) -> np.ndarray:
        """Generalized singular values ``c / s`` (``inf`` on the null-space block)."""
        with np.errstate(divide="ignore"):
            return self.c / self.s


def gsvd(A, L) -> GsvdFactors:
    """GSVD via a QR factorisation of ``[A; L]`` followed by an SVD of the top block.

    Raises
    ------
    CommonNullspace
        If ``[A; L]`` is rank deficient, i.e. ``A`` and ``L`` share a null vector.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    r, n = A.shape
    if L.shape[1] != n:
        raise ValueError("A and L must have the same number of columns")
    stack = np.vstack([A, L])
    if stack.shape[0] < n:
        raise CommonNullspace("[A; L] has fewer rows than columns")
    Q, R = qr(stack, mode="economic")
    sv = svd(R, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise CommonNullspace("[A; L] is rank deficient")
    Q1, Q2 = Q[:r], Q[r:]

    U0, c0, W0t = svd(Q1, full_matrices=True)
    k = c0.size
    c = np.zeros(n)
    c[n - k :] = np.minimum(c0[::-1], 1.0)
    W = W0t.T[:, ::-1]
    U = np.zeros((r, n))
    U[:, n - k :] = U0[:, :k][:, ::-1]
    U[:, c == 0] = 0.0

    # the last n - rank(L) directions have c = 1 up to rounding
    p = int(np.linalg.matrix_rank(L))
    Q2W = Q2 @ W
    s = np.linalg.norm(Q2W, axis=0)
    s[p:] = 0.0
    V = np.zeros((L.shape[0], n))
    V[:, :p] = Q2W[:, :p] / s[:p]

    Zinv = W.T @ R
    Z = solve_triangular(R, W)
    return GsvdFactors(U, V, Z, Zinv, c, s, p)


def tgsvd_step(f: GsvdFactors, r, ell: int) -> np.ndarray:
    """Truncated-GSVD solution of ``min ||r + A q||`` that keeps ``ell`` components.

    The ``ell`` largest generalized singular values outside the null space
    of ``L`` are retained together with the whole null-space block:

        q = -sum_{i in kept} (u_i^T r / c_i) z_i

    With ``L = I`` this reduces to the truncated-SVD solution with ``ell``
    terms.
    """
    r = np.asarray(r, dtype=float)
    p = f.p
    if not 1 <= ell <= f.max_truncation:
        raise TruncationOutOfRange(f"ell={ell} outside [1, {f.max_truncation}]")
    kept = np.r_[p - ell : f.n]
    coef = (f.U[:, kept].T @ r) / f.c[kept]
    return -(f.Z[:, kept] @ coef)
