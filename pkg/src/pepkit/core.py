"""Dense symmetric linear algebra shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used across the package.

    eig_tol bounds the negative eigenvalue accepted as PSD, sdp_rel_tol is the
    relative stopping tolerance of the conic solver and identity_tol bounds the
    residual of the certificate identities.
    """

    eig_tol: float = 1e-10
    sdp_rel_tol: float = 1e-7
    identity_tol: float = 1e-9

    def __post_init__(self):
        for name in ("eig_tol", "sdp_rel_tol", "identity_tol"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")


DEFAULT_TOL = Tolerances()


def as_sym(M, tol: float = 1e-9) -> np.ndarray:
    """Validate a square symmetric finite matrix and return its symmetrized copy."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def eig_bounds(M) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(as_sym(M))
    return float(w[0]), float(w[-1])


def is_psd(M, tol: float = DEFAULT_TOL.eig_tol) -> bool:
    """True when the smallest eigenvalue is at least ``-tol`` (scaled by the norm)."""
    M = as_sym(M)
    scale = max(1.0, float(np.max(np.abs(M))))
    return bool(np.linalg.eigvalsh(M)[0] >= -tol * scale)


def sym_power(M, p: float) -> np.ndarray:
    """Matrix power of a symmetric positive definite matrix via eigendecomposition."""
    w, V = np.linalg.eigh(as_sym(M))
    if w[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return (V * w**p) @ V.T


def svec(M) -> np.ndarray:
    """Stack the lower triangle column by column with off-diagonals scaled by sqrt(2).

    The scaling makes ``svec(A) @ svec(B) == trace(A @ B)``.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    out = np.empty(n * (n + 1) // 2)
    k = 0
    for j in range(n):
        out[k] = M[j, j]
        out[k + 1 : k + n - j] = np.sqrt(2.0) * M[j + 1 :, j]
        k += n - j
    return out


def smat(v) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    M = np.empty((n, n))
    k = 0
    for j in range(n):
        M[j, j] = v[k]
        M[j + 1 :, j] = v[k + 1 : k + n - j] / np.sqrt(2.0)
        M[j, j + 1 :] = M[j + 1 :, j]
        k += n - j
    return M


class MetricOperator:
    """A positive definite matrix ``B`` defining ``<u, v>_B = u^T B v``.

    The eigendecomposition is computed once and reused for solves and roots.
    """

    def __init__(self, B, tol: float = DEFAULT_TOL.eig_tol):
        B = as_sym(B)
        w, V = np.linalg.eigh(B)
        if w[0] <= tol * max(1.0, w[-1]):
            raise ValueError(f"metric is not positive definite (min eigenvalue {w[0]:.3e})")
        self.matrix = B
        self._w = w
        self._V = V

    @classmethod
    def identity(cls, n: int) -> "MetricOperator":
        return cls(np.eye(n))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def inner(self, u, v) -> float:
        return float(np.asarray(u) @ self.matrix @ np.asarray(v))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def solve(self, v) -> np.ndarray:
        """Return ``B^{-1} v``."""
        return self._V @ ((self._V.T @ np.asarray(v, dtype=float)) / self._w)

    def dual_norm(self, g) -> float:
        """Norm of a covector, ``sqrt(g^T B^{-1} g)``."""
        return float(np.sqrt(max(np.asarray(g) @ self.solve(g), 0.0)))

    @cached_property
    def sqrt(self) -> np.ndarray:
        return (self._V * np.sqrt(self._w)) @ self._V.T

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        return (self._V / np.sqrt(self._w)) @ self._V.T

    @cached_property
    def inverse(self) -> np.ndarray:
        return (self._V / self._w) @ self._V.T


def inner(metric: MetricOperator | None, u, v) -> float:
    """``<u, v>_B``, with ``None`` meaning the Euclidean inner product."""
    if metric is None:
        return float(np.asarray(u) @ np.asarray(v))
    return metric.inner(u, v)
