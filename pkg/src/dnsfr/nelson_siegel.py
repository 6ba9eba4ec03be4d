"""Nelson-Siegel yield curve loadings.

The three-factor loading row at maturity ``tau`` (in months) is

    (1, (1 - exp(-lam*tau)) / (lam*tau), (1 - exp(-lam*tau)) / (lam*tau) - exp(-lam*tau))

giving level, slope and curvature weights.  The decay rate ``lam`` is a
fixed configuration constant, not an estimated parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .market_data import MaturityGrid

# Monthly decay rate that places the curvature loading peak near 30 months.
DEFAULT_DECAY = 0.0609


def loading_row(tau: float, lam: float = DEFAULT_DECAY) -> np.ndarray:
    """Return the (level, slope, curvature) loading row for one maturity.

    ``tau`` is a maturity in months, ``lam`` the monthly decay rate.  Both
    must be strictly positive.
    """
    if not tau > 0.0:
        raise ValueError(f"maturity must be positive, got {tau}")
    if not lam > 0.0:
        raise ValueError(f"decay rate must be positive, got {lam}")
    x = lam * tau
    slope = -np.expm1(-x) / x
    return np.array([1.0, slope, slope - np.exp(-x)])


@dataclass(frozen=True)
class NsLoadingMatrix:
    """Loading rows stacked over a maturity grid (one row per tenor)."""

    matrix: np.ndarray
    lam: float
    grid: MaturityGrid = field(repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape != (len(self.grid), 3):
            raise ValueError(f"loading matrix must be {len(self.grid)}x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("loading matrix has non-finite entries")
        object.__setattr__(self, "matrix", m)


def loading_matrix(grid: MaturityGrid, lam: float = DEFAULT_DECAY) -> NsLoadingMatrix:
    """Build the N x 3 loading matrix for a maturity grid."""
    rows = np.vstack([loading_row(tau, lam) for tau in grid.tenors])
    return NsLoadingMatrix(matrix=rows, lam=lam, grid=grid)
