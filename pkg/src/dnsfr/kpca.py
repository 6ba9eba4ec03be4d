"""Kernel principal components of a reference yield panel.

Samples are the maturities: each per-tenor time series is one point, so
the Gram matrix of a panel with N tenors is N x N regardless of sample
length.  Components come from the plain (uncentered) eigendecomposition
of the RBF Gram matrix; factor series are unit-weight discretized
projections of the observed curves onto the eigenvectors.

The kernel width is chosen by a grid search that scores each candidate
gamma by how well fixed-point preimages of the retained projection
reconstruct the training samples.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .market_data import MaturityGrid, YieldPanel

logger = logging.getLogger(__name__)

GAMMA_GRID_DEFAULT = np.arange(1, 1001) / 1000.0
PREIMAGE_MAX_ITER = 500
PREIMAGE_TOL = 1e-8
# Components with eigenvalues at or below this fraction of the leading
# eigenvalue are numerical noise and cannot be retained.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel k(x, y) = exp(-gamma * ||x - y||^2)."""

    gamma: float

    def __post_init__(self) -> None:
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def from_bandwidth(cls, sigma: float) -> "KernelConfig":
        """Build from the bandwidth parametrization gamma = 1 / (2 sigma^2)."""
        return cls(gamma=1.0 / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class FactorPanel:
    """Projection scores over time: one row per date, one column per component."""

    dates: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != len(self.dates):
            raise ValueError(f"factor values must be {len(self.dates)}xQ, got {values.shape}")
        object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))
        object.__setattr__(self, "values", values)

    @property
    def n_components(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class KpcaModel:
    """Retained eigenstructure of a reference panel's Gram matrix.

    ``z`` holds orthonormal eigenvectors (columns, descending eigenvalue),
    ``a`` = z * sqrt(eigenvalues) the in-sample scores, ``w`` = z /
    sqrt(eigenvalues) the out-of-sample projection weights.
    """

    eigenvalues: np.ndarray
    z: np.ndarray
    a: np.ndarray
    w: np.ndarray
    config: KernelConfig | None = None
    training_panel: YieldPanel | None = field(default=None, repr=False)

    @property
    def n_components(self) -> int:
        return int(self.eigenvalues.shape[0])

    def training_samples(self) -> np.ndarray:
        """Per-maturity series as rows (N x T)."""
        if self.training_panel is None:
            raise ValueError("model was fitted from a bare Gram matrix, no training panel")
        return self.training_panel.values.T

    def to_json_dict(self) -> dict:
        out = {
            "eigenvalues": self.eigenvalues.tolist(),
            "z": self.z.tolist(),
            "a": self.a.tolist(),
        }
        if self.config is not None:
            out["gamma"] = self.config.gamma
        return out

    def save_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)


def rbf_kernel(x: np.ndarray, y: np.ndarray, config: KernelConfig) -> float:
    """Evaluate exp(-gamma * ||x - y||^2) for two equal-length vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"kernel arguments must be equal-length vectors, got {x.shape}, {y.shape}")
    d = x - y
    return float(np.exp(-config.gamma * np.dot(d, d)))


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances between rows of x and rows of y."""
    xx = np.sum(x * x, axis=1)[:, None]
    yy = np.sum(y * y, axis=1)[None, :]
    return np.maximum(xx + yy - 2.0 * (x @ y.T), 0.0)


def kernel_matrix(panel: YieldPanel, config: KernelConfig) -> np.ndarray:
    """Gram matrix over maturities: K[i, j] = k(series_i, series_j)."""
    if not panel.is_complete():
        raise ValueError("kernel matrix needs a complete panel (no missing cells)")
    samples = panel.values.T
    k = np.exp(-config.gamma * _sq_dists(samples, samples))
    return 0.5 * (k + k.T)


def fit_kpca(
    k: np.ndarray,
    q: int,
    config: KernelConfig | None = None,
    training_panel: YieldPanel | None = None,
) -> KpcaModel:
    """Retain the top ``q`` eigenpairs of a symmetric Gram matrix.

    Eigenvalues come out in descending order; each eigenvector is signed
    so its largest-magnitude entry is positive.  Components whose
    eigenvalue is at or below RANK_RTOL times the leading eigenvalue do
    not count toward the usable rank.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"Gram matrix must be square, got {k.shape}")
    scale = np.max(np.abs(k)) or 1.0
    if np.max(np.abs(k - k.T)) > 1e-10 * scale:
        raise ValueError("Gram matrix is not symmetric")
    if q < 1:
        raise ValueError(f"component count must be >= 1, got {q}")

    eigvals, eigvecs = np.linalg.eigh(0.5 * (k + k.T))
    order = np.argsort(eigvals, kind="stable")[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    usable = int(np.sum(eigvals > RANK_RTOL * max(eigvals[0], 0.0)))
    if q > usable:
        raise ValueError(f"q={q} exceeds usable rank {usable} of the Gram matrix")

    lam = eigvals[:q].copy()
    z = eigvecs[:, :q].copy()
    for col in range(q):
        pivot = int(np.argmax(np.abs(z[:, col])))
        if z[pivot, col] < 0:
            z[:, col] = -z[:, col]
    root = np.sqrt(lam)
    return KpcaModel(
        eigenvalues=lam,
        z=z,
        a=z * root[None, :],
        w=z / root[None, :],
        config=config,
        training_panel=training_panel,
    )


def fit_reference_model(panel: YieldPanel, q: int, config: KernelConfig) -> KpcaModel:
    """Convenience wrapper: Gram matrix plus eigendecomposition in one step."""
    return fit_kpca(kernel_matrix(panel, config), q, config=config, training_panel=panel)


def retained_energy(k: np.ndarray, q: int) -> float:
    """Fraction of the Gram matrix trace captured by the top q eigenvalues."""
    eigvals = np.sort(np.linalg.eigvalsh(0.5 * (k + k.T)))[::-1]
    total = float(np.trace(k))
    if total <= 0:
        raise ValueError("Gram matrix must have positive trace")
    return float(np.sum(eigvals[:q]) / total)


def project_out_of_sample(model: KpcaModel, new_sample: np.ndarray) -> np.ndarray:
    """Scores of a new per-maturity series against the trained components.

    score_q = sum_i w[i, q] * k(new_sample, training_sample_i).  Feeding a
    training sample back reproduces the matching row of ``a`` up to
    eigensolver precision.
    """
    if model.config is None:
        raise ValueError("model carries no kernel config, cannot project")
    samples = model.training_samples()
    new_sample = np.asarray(new_sample, dtype=float)
    if new_sample.shape != (samples.shape[1],):
        raise ValueError(f"sample length {new_sample.shape} != training length {samples.shape[1]}")
    d = samples - new_sample[None, :]
    kvec = np.exp(-model.config.gamma * np.sum(d * d, axis=1))
    return model.w.T @ kvec


def extract_factors(model: KpcaModel, panel: YieldPanel) -> FactorPanel:
    """Unit-weight discretized projections U = Y @ z for every date in ``panel``.

    The panel must be complete and on the training panel's maturity grid.
    """
    if model.training_panel is not None and panel.grid != model.training_panel.grid:
        raise ValueError("panel grid differs from the training panel grid")
    if not panel.is_complete():
        raise ValueError("factor extraction needs a complete panel")
    if panel.values.shape[1] != model.z.shape[0]:
        raise ValueError("panel width does not match eigenvector length")
    return FactorPanel(dates=panel.dates, values=panel.values @ model.z)


def reconstruct_functional_coefficients(gamma_mat: np.ndarray, model: KpcaModel) -> np.ndarray:
    """Regression coefficient curves on the maturity grid.

    Row i of the result tabulates sum_q gamma_mat[i, q] * z[j, q] over
    grid points j, i.e. the functional coefficient attached to response
    tenor i evaluated at each reference maturity.
    """
    gamma_mat = np.asarray(gamma_mat, dtype=float)
    if gamma_mat.ndim != 2 or gamma_mat.shape[1] != model.n_components:
        raise ValueError(f"coefficient matrix must be Nx{model.n_components}, got {gamma_mat.shape}")
    return gamma_mat @ model.z.T


def _preimages(
    samples: np.ndarray,
    expansion: np.ndarray,
    gamma: float,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-point RBF preimages for a batch of expansion coefficient rows.

    Row i of ``expansion`` holds coefficients g such that the feature
    point being inverted is sum_j g[j] * phi(samples[j]).  Iteration
    starts at the matching training sample and stops on relative change
    below ``tol`` or after ``max_iter`` sweeps.  Returns (preimages,
    diverged flags); a row diverges when its kernel-weight denominator
    collapses to zero or goes non-finite.
    """
    z = samples.copy()
    active = np.ones(samples.shape[0], dtype=bool)
    diverged = np.zeros(samples.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        kzx = np.exp(-gamma * _sq_dists(z[active], samples))
        weights = expansion[active] * kzx
        denom = weights.sum(axis=1)
        bad = ~np.isfinite(denom) | (np.abs(denom) < 1e-290)
        z_new = np.divide(
            weights @ samples,
            denom[:, None],
            out=np.zeros((int(active.sum()), samples.shape[1])),
            where=~bad[:, None],
        )
        bad |= ~np.isfinite(z_new).all(axis=1)
        step = np.linalg.norm(z_new - z[active], axis=1)
        base = np.maximum(np.linalg.norm(z[active], axis=1), 1e-300)
        settled = step / base < tol

        idx = np.flatnonzero(active)
        z[idx[~bad]] = z_new[~bad]
        diverged[idx[bad]] = True
        active[idx[bad | settled]] = False
    return z, diverged


def preimage_error(panel: YieldPanel, q: int, config: KernelConfig,
                   max_iter: int = PREIMAGE_MAX_ITER, tol: float = PREIMAGE_TOL) -> float:
    """Mean squared preimage reconstruction error of the training samples.

    Each training sample is projected onto the retained components and
    mapped back through the fixed-point preimage; the score is the mean
    of ||sample - preimage||^2 over samples, or +inf when any preimage
    diverges.
    """
    samples = panel.values.T
    k = kernel_matrix(panel, config)
    try:
        model = fit_kpca(k, q, config=config, training_panel=panel)
    except ValueError:
        return np.inf
    expansion = model.a @ model.w.T
    pre, diverged = _preimages(samples, expansion, config.gamma, max_iter, tol)
    if diverged.any():
        return np.inf
    return float(np.mean(np.sum((samples - pre) ** 2, axis=1)))


def _argmin_smaller_tie(values: np.ndarray) -> int:
    """Index of the minimum; exact ties resolve to the earliest entry."""
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def grid_search_gamma(
    panel: YieldPanel,
    q: int,
    gammas: np.ndarray | None = None,
    max_iter: int = PREIMAGE_MAX_ITER,
    tol: float = PREIMAGE_TOL,
) -> KernelConfig:
    """Pick the kernel width minimizing mean preimage reconstruction error.

    Scans ``gammas`` (default 0.001 to 1.000 in steps of 0.001) in
    ascending order; exact ties break toward the smaller gamma.  Raises
    if the grid is empty or no candidate produces a usable (finite)
    error.
    """
    if gammas is None:
        gammas = GAMMA_GRID_DEFAULT
    gammas = np.sort(np.asarray(gammas, dtype=float))
    if gammas.size == 0:
        raise ValueError("empty gamma grid")
    if not panel.is_complete():
        raise ValueError("gamma search needs a complete panel")

    errors = np.empty(gammas.size)
    for i, g in enumerate(gammas):
        errors[i] = preimage_error(panel, q, KernelConfig(gamma=float(g)), max_iter, tol)
    if not np.isfinite(errors).any():
        raise ValueError("all preimage iterations diverged, no usable gamma on the grid")
    best = _argmin_smaller_tie(errors)
    logger.debug("gamma grid search: best=%g error=%g", gammas[best], errors[best])
    return KernelConfig(gamma=float(gammas[best]))
