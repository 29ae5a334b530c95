"""Discrete Laplacians, derivative operators and the cosine-transform diagonalisation.

Images are ``n x N`` (depth x soundings) and are vectorised column by
column, so that ``D = L_N kron I_n + I_N kron L_n`` acts on ``vec(X)`` as
``vec(L_n X + X L_N^T)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.fft import dctn, idctn

from .errors import BadOrder, DimensionMismatch, SizeTooSmall

BCS = ("zero", "reflexive")


def vec(X) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, n: int, N: int) -> np.ndarray:
    return np.asarray(x).reshape((n, N), order="F")


def build_lap1d(n: int, bc: str = "zero") -> sparse.csr_matrix:
    """Tridiagonal ``[-1, 2, -1]`` stencil; corner entries are 2 (zero BC) or 1 (reflexive BC)."""
    if bc not in BCS:
        raise ValueError(f"bc must be one of {BCS}")
    if n < 2:
        raise SizeTooSmall("need at least two grid points")
    main = np.full(n, 2.0)
    if bc == "reflexive":
        main[[0, -1]] = 1.0
    off = -np.ones(n - 1)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr")


def _axis(n: int, bc: str):
    # a single grid line has no neighbours along that direction
    if n == 1 and bc in BCS:
        return sparse.csr_matrix([[0.0 if bc == "reflexive" else 2.0]])
    return build_lap1d(n, bc)


@dataclass(frozen=True)
class Lap2D:
    """Matrix-free ``D = L kron I + I kron L`` on an ``n x N`` grid."""

    n: int
    N: int
    bc: str = "reflexive"

    def __post_init__(self):
        object.__setattr__(self, "_Ln", _axis(self.n, self.bc))
        object.__setattr__(self, "_LN", _axis(self.N, self.bc))

    @property
    def size(self) -> int:
        return self.n * self.N

    def apply_grid(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n, self.N):
            raise DimensionMismatch(f"expected a {self.n}x{self.N} grid, got {X.shape}")
        return self._Ln @ X + (self._LN @ X.T).T

    def dense(self) -> np.ndarray:
        In, IN = sparse.identity(self.n), sparse.identity(self.N)
        return (sparse.kron(self._LN, In) + sparse.kron(IN, self._Ln)).toarray()


def apply_lap2d(D: Lap2D, x) -> np.ndarray:
    """``D @ x`` for a vectorised image ``x`` of length ``n N``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (D.size,):
        raise DimensionMismatch(f"expected a vector of length {D.size}, got {x.shape}")
    return vec(D.apply_grid(unvec(x, D.n, D.N)))


def dct_spectrum(n: int, N: int) -> np.ndarray:
    """Eigenvalues of the reflexive-BC ``D`` as an ``n x N`` grid matching :func:`dct2_forward`."""
    if n < 1 or N < 1:
        raise SizeTooSmall("empty grid")
    a = 4.0 * np.sin(np.arange(n) * np.pi / (2 * n)) ** 2
    b = 4.0 * np.sin(np.arange(N) * np.pi / (2 * N)) ** 2
    return a[:, None] + b[None, :]


def dct2_forward(X) -> np.ndarray:
    """Orthonormal 2-D DCT-II."""
    return dctn(np.asarray(X, dtype=float), type=2, norm="ortho")


def dct2_inverse(Y) -> np.ndarray:
    return idctn(np.asarray(Y, dtype=float), type=2, norm="ortho")


def build_deriv(p: int, n: int) -> np.ndarray:
    """Forward-difference operator of order ``p`` with shape ``(n - p, n)``; identity for ``p = 0``."""
    if p not in (0, 1, 2):
        raise BadOrder("derivative order must be 0, 1 or 2")
    if n <= p:
        raise SizeTooSmall(f"need more than {p} points for a derivative of order {p}")
    stencil = {0: [1.0], 1: [-1.0, 1.0], 2: [1.0, -2.0, 1.0]}[p]
    L = np.zeros((n - p, n))
    for k, c in enumerate(stencil):
        L[np.arange(n - p), np.arange(n - p) + k] = c
    return L
