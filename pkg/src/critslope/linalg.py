"""Dense symmetric linear algebra underlying the slope-optimization solvers.

Everything here works on plain float64 numpy arrays.  Matrices are small
(n up to a few hundred), so full eigendecompositions are used throughout;
robustness near multiple eigenvalues matters more than speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigensolverError",
    "EigenPair",
    "ActivationRange",
    "as_square_matrix",
    "symmetrize",
    "rightmost_eigenpair",
    "mu2",
    "spectral_norm",
    "normalize_activation",
]


class EigensolverError(RuntimeError):
    """The dense symmetric eigensolver failed to converge."""


def as_square_matrix(a) -> np.ndarray:
    """Validate and return ``a`` as a finite float64 n-by-n array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


@dataclass(frozen=True)
class EigenPair:
    """Rightmost eigenpair of a symmetric matrix.

    ``gap`` is the distance to the second-rightmost eigenvalue (inf for
    1-by-1 matrices); ``near_multiple`` is set when the gap falls below
    the warning threshold and the eigenvector is therefore ill determined.
    """

    value: float
    vector: np.ndarray
    gap: float
    near_multiple: bool = False


@dataclass(frozen=True)
class ActivationRange:
    """Slope range [m_lower, m_upper] of an activation derivative."""

    m_lower: float
    m_upper: float

    def __post_init__(self):
        if self.m_upper <= 0:
            raise ValueError(f"m_upper must be positive, got {self.m_upper}")
        if not 0 <= self.m_lower < self.m_upper:
            raise ValueError(
                f"need 0 <= m_lower < m_upper, got [{self.m_lower}, {self.m_upper}]"
            )

    @property
    def normalized_floor(self) -> float:
        return self.m_lower / self.m_upper

    @property
    def scale(self) -> float:
        return self.m_upper


def symmetrize(b) -> np.ndarray:
    """Symmetric part (B + B^T)/2, exactly symmetric entrywise.

    Floating-point addition commutes, so B + B^T is bitwise symmetric and
    the halving preserves that.
    """
    b = as_square_matrix(b)
    return 0.5 * (b + b.T)


def _gap_warn(s: np.ndarray) -> float:
    return 1e-8 * (1.0 + np.linalg.norm(s, "fro"))


def rightmost_eigenpair(s) -> EigenPair:
    """Largest eigenvalue and unit eigenvector of a symmetric matrix.

    The eigenvector sign is fixed so its first nonzero component is
    positive, which keeps traces and warm starts deterministic.
    """
    s = as_square_matrix(s)
    try:
        w, v = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigensolver failed: {exc}") from exc
    x = v[:, -1].copy()
    nz = np.nonzero(x)[0]
    if nz.size and x[nz[0]] < 0:
        x = -x
    gap = float(w[-1] - w[-2]) if w.size > 1 else np.inf
    return EigenPair(
        value=float(w[-1]),
        vector=x,
        gap=gap,
        near_multiple=bool(gap <= _gap_warn(s)),
    )


def mu2(b) -> float:
    """Logarithmic 2-norm: largest eigenvalue of the symmetric part."""
    return rightmost_eigenpair(symmetrize(b)).value


def spectral_norm(a) -> float:
    """Spectral norm, computed as sqrt of the largest eigenvalue of A^T A."""
    a = as_square_matrix(a)
    top = rightmost_eigenpair(symmetrize(a.T @ a)).value
    return float(np.sqrt(max(top, 0.0)))


def normalize_activation(rng: ActivationRange, a) -> tuple[np.ndarray, float, float]:
    """Rescale an activation slope range onto [m, 1].

    Returns ``(a, floor, scale)``: downstream solvers work on diagonal
    entries in [floor, 1] and reported logarithmic norms are multiplied
    back by ``scale`` (positive homogeneity of logarithmic norms).
    """
    a = as_square_matrix(a)
    return a, rng.normalized_floor, rng.scale
