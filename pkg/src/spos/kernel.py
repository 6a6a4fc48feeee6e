"""RBF interaction kernel ``K(delta) = exp(-|delta|^2 / (2 eta^2))``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth policy: a fixed ``eta`` or the median heuristic (``bandwidth=None``)."""

    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InvalidArgumentError(f"fixed bandwidth must be positive, got {self.bandwidth}")

    @property
    def mode(self) -> str:
        return "median_heuristic" if self.bandwidth is None else "fixed"

    def resolve(self, positions: np.ndarray) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return median_bandwidth(positions)


def _check_eta(eta: float) -> None:
    if not eta > 0:
        raise InvalidArgumentError(f"bandwidth must be positive, got {eta}")


def kernel_value(delta, eta: float) -> float:
    _check_eta(eta)
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    return float(np.exp(-np.dot(delta, delta) / (2.0 * eta**2)))


def kernel_gradient(delta, eta: float) -> np.ndarray:
    """Gradient of ``K`` with respect to its difference argument."""
    _check_eta(eta)
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    return -(delta / eta**2) * kernel_value(delta, eta)


def median_bandwidth(positions) -> float:
    """Median heuristic ``eta^2 = med^2 / (2 ln M)``; falls back to 1.0 when degenerate."""
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if m < 1:
        raise InvalidArgumentError("median bandwidth needs at least one particle")
    if m < 2:
        return 1.0
    med = float(np.median(pdist(x)))
    if med <= 0.0 or not np.isfinite(med):
        return 1.0
    return float(np.sqrt(med**2 / (2.0 * np.log(m))))


def pairwise_terms(rows: np.ndarray, positions: np.ndarray, eta: float):
    """Kernel matrix and kernel-gradient sums for a block of rows.

    For each row particle ``i`` and every particle ``j`` returns
    ``K[i, j] = K(x_i - x_j)`` and ``repulsion[i] = sum_j grad K(x_j - x_i)``,
    the SVGD term that pushes ``x_i`` away from its neighbours.
    """
    diff = rows[:, None, :] - positions[None, :, :]
    sq = np.einsum("ijd,ijd->ij", diff, diff)
    kmat = np.exp(-sq / (2.0 * eta**2))
    repulsion = (kmat[:, :, None] * diff).sum(axis=1) / eta**2
    return kmat, repulsion
