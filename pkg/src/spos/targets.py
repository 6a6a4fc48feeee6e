"""Decomposable potential-energy targets.

Every target is a potential ``U(theta) = sum_j F_j``-style decomposition: the
model exposes the per-datum gradients ``F_j``, their sum ``F = grad U``, and
optionally ``U`` itself. Samplers only ever consume gradients.

Term indices are 0-based throughout (``0 <= j < num_terms``).
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgumentError, UnsupportedTargetError

MULTIMODE_COEFFICIENTS = (-0.47, -0.83, -0.71, -0.02, 0.24, 0.01, 0.27, -0.37, 0.87, -0.37)


class OracleCounter:
    """Thread-safe tally of gradient-oracle usage."""

    def __init__(self):
        self._lock = threading.Lock()
        self.full_gradient = 0
        self.term_gradient = 0

    def add(self, full: int = 0, term: int = 0) -> None:
        with self._lock:
            self.full_gradient += full
            self.term_gradient += term

    def reset(self) -> None:
        with self._lock:
            self.full_gradient = 0
            self.term_gradient = 0

    def as_dict(self) -> dict:
        return {"full_gradient": self.full_gradient, "term_gradient": self.term_gradient}


class PotentialModel:
    """A target density ``exp(-U)`` whose gradient splits into ``num_terms`` pieces.

    The base class wraps plain callables; built-in targets subclass it and
    override the vectorized hooks ``_term_gradients``, ``_full_gradient`` and
    ``_potential``.

    Args:
        dim: Parameter dimension.
        num_terms: Number of data terms N.
        term_gradient: ``(j, theta) -> array[dim]`` computing ``F_j(theta)``.
        potential: Optional ``theta -> float`` computing ``U`` up to a constant.
    """

    def __init__(
        self,
        dim: int,
        num_terms: int,
        term_gradient: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
        potential: Optional[Callable[[np.ndarray], float]] = None,
    ):
        if int(dim) < 1:
            raise InvalidArgumentError(f"dim must be positive, got {dim}")
        if int(num_terms) < 1:
            raise InvalidArgumentError(f"num_terms must be positive, got {num_terms}")
        self.dim = int(dim)
        self.num_terms = int(num_terms)
        self._term_fn = term_gradient
        self._potential_fn = potential
        self.counts = OracleCounter()

    # -- hooks -----------------------------------------------------------

    def _term_gradients(self, thetas: np.ndarray, indices: np.ndarray) -> np.ndarray:
        if self._term_fn is None:
            raise NotImplementedError
        out = np.empty(indices.shape + (self.dim,))
        for m in range(thetas.shape[0]):
            for b in range(indices.shape[1]):
                out[m, b] = self._term_fn(int(indices[m, b]), thetas[m])
        return out

    def _full_gradient(self, thetas: np.ndarray) -> np.ndarray:
        idx = np.broadcast_to(np.arange(self.num_terms), (thetas.shape[0], self.num_terms))
        return self._term_gradients(thetas, idx).sum(axis=1)

    def _potential(self, thetas: np.ndarray) -> np.ndarray:
        if self._potential_fn is None:
            raise UnsupportedTargetError(f"{type(self).__name__} has no potential oracle")
        return np.array([float(self._potential_fn(t)) for t in thetas])

    @property
    def has_potential(self) -> bool:
        return self._potential_fn is not None

    # -- public oracles --------------------------------------------------

    def _check_theta(self, theta) -> tuple[np.ndarray, bool]:
        arr = np.asarray(theta, dtype=float)
        single = arr.ndim <= 1
        if arr.ndim == 0:
            arr = arr.reshape(1)
        arr2 = np.atleast_2d(arr)
        if arr2.ndim != 2 or arr2.shape[1] != self.dim:
            raise InvalidArgumentError(
                f"expected theta with trailing dimension {self.dim}, got shape {np.shape(theta)}"
            )
        if not np.all(np.isfinite(arr2)):
            raise InvalidArgumentError("theta contains non-finite entries")
        return arr2, single

    def _check_indices(self, indices) -> np.ndarray:
        idx = np.asarray(indices)
        if idx.size == 0:
            raise InvalidArgumentError("batch must contain at least one index")
        if not np.issubdtype(idx.dtype, np.integer):
            raise InvalidArgumentError("batch indices must be integers")
        if idx.min() < 0 or idx.max() >= self.num_terms:
            raise InvalidArgumentError(
                f"batch index out of range [0, {self.num_terms}): {idx.min()}..{idx.max()}"
            )
        return idx

    def full_gradient(self, theta) -> np.ndarray:
        """``F(theta) = sum_j F_j(theta)`` for one point or a stack of points."""
        thetas, single = self._check_theta(theta)
        self.counts.add(full=thetas.shape[0])
        out = self._full_gradient(thetas)
        return out[0] if single else out

    def term_gradient(self, j: int, theta) -> np.ndarray:
        thetas, _ = self._check_theta(theta)
        if thetas.shape[0] != 1:
            raise InvalidArgumentError("term_gradient takes a single point")
        idx = self._check_indices(np.array([[j]]))
        self.counts.add(term=1)
        return self._term_gradients(thetas, idx)[0, 0]

    def term_gradients(self, thetas, indices) -> np.ndarray:
        """Per-term gradients ``F_{indices[m, b]}(thetas[m])``, shape ``(M, B, dim)``."""
        thetas, _ = self._check_theta(thetas)
        idx = self._check_indices(indices)
        if idx.ndim != 2 or idx.shape[0] != thetas.shape[0]:
            raise InvalidArgumentError(
                f"indices must have shape (M, B) with M={thetas.shape[0]}, got {idx.shape}"
            )
        self.counts.add(term=idx.size)
        return self._term_gradients(thetas, idx)

    def stochastic_gradient(self, theta, batch) -> np.ndarray:
        """Minibatch estimate ``(N/B) * sum_{j in batch} F_j(theta)``.

        ``batch`` is a 1-D multiset shared by all points, or an ``(M, B)``
        array giving each point its own batch.
        """
        thetas, single = self._check_theta(theta)
        idx = np.asarray(batch)
        if idx.ndim == 1:
            idx = np.broadcast_to(idx, (thetas.shape[0], idx.shape[0]))
        grads = self.term_gradients(thetas, idx)
        out = grads.sum(axis=1) * (self.num_terms / idx.shape[1])
        return out[0] if single else out

    def potential(self, theta):
        """``U(theta)`` up to an additive constant."""
        if not self.has_potential:
            raise UnsupportedTargetError(f"{type(self).__name__} has no potential oracle")
        thetas, single = self._check_theta(theta)
        out = self._potential(thetas)
        return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Gaussian


@dataclass(frozen=True)
class GaussianTargetParams:
    mean: np.ndarray
    covariance: np.ndarray
    split_count: int = 1

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InvalidArgumentError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise InvalidArgumentError("covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InvalidArgumentError("covariance is not positive definite") from None
        if int(self.split_count) < 1:
            raise InvalidArgumentError("split_count must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


class GaussianTarget(PotentialModel):
    """``N(mean, cov)`` with the potential split into ``split_count`` equal terms."""

    def __init__(self, params: GaussianTargetParams):
        super().__init__(params.mean.size, params.split_count)
        self.params = params
        self.mean = params.mean
        self.covariance = params.covariance
        self.precision = np.linalg.inv(params.covariance)
        self.precision = 0.5 * (self.precision + self.precision.T)

    @property
    def has_potential(self) -> bool:
        return True

    def _full_gradient(self, thetas):
        return (thetas - self.mean) @ self.precision

    def _term_gradients(self, thetas, indices):
        per_term = self._full_gradient(thetas) / self.num_terms
        return np.broadcast_to(per_term[:, None, :], indices.shape + (self.dim,)).copy()

    def _potential(self, thetas):
        diff = thetas - self.mean
        return 0.5 * np.einsum("md,de,me->m", diff, self.precision, diff)

    def lipschitz_constants(self) -> tuple[float, float]:
        """Strong-convexity and smoothness constants ``(m_F, L_F)`` of ``F``."""
        eig = np.linalg.eigvalsh(self.precision)
        return float(eig[0]), float(eig[-1])


def make_gaussian(mean, covariance, split_count: int = 1) -> GaussianTarget:
    return GaussianTarget(GaussianTargetParams(mean, covariance, split_count))


def standard_gaussian(dim: int = 1, split_count: int = 1) -> GaussianTarget:
    return make_gaussian(np.zeros(dim), np.eye(dim), split_count)


# ---------------------------------------------------------------------------
# 1-D multimode target


@dataclass(frozen=True)
class MultimodeParams:
    coefficients: tuple = MULTIMODE_COEFFICIENTS

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) != 10:
            raise InvalidArgumentError(f"expected 10 coefficients, got {len(coeffs)}")
        object.__setattr__(self, "coefficients", coeffs)


def _multimode_exponent(coeffs: np.ndarray, theta: np.ndarray):
    """Exponent ``s`` with ``U = exp(s)``, and its derivative."""
    i = np.arange(1, coeffs.size + 1)
    freq = 0.25 * np.pi * i
    phase = freq * (theta[..., None] + 4.0)
    s = 0.75 * theta**2 - 1.5 * (coeffs * np.sin(phase)).sum(axis=-1)
    ds = 1.5 * theta - 1.5 * (coeffs * freq * np.cos(phase)).sum(axis=-1)
    return s, ds


def multimode_potential(params: MultimodeParams, theta: float) -> float:
    """``U(theta) = exp(3/4 theta^2 - 3/2 sum_i c_i sin(pi i (theta + 4) / 4))``."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise InvalidArgumentError("theta must be finite")
    s, _ = _multimode_exponent(np.asarray(params.coefficients), np.asarray(theta))
    return float(np.exp(s))


class MultimodeTarget(PotentialModel):
    """Scalar density ``exp(-U)`` with several separated modes (1-D only)."""

    def __init__(self, params: MultimodeParams | None = None):
        super().__init__(1, 1)
        self.params = params or MultimodeParams()
        self._coeffs = np.asarray(self.params.coefficients)

    @property
    def has_potential(self) -> bool:
        return True

    def _full_gradient(self, thetas):
        with np.errstate(over="ignore"):
            s, ds = _multimode_exponent(self._coeffs, thetas[:, 0])
            return (np.exp(s) * ds)[:, None]

    def _term_gradients(self, thetas, indices):
        return np.broadcast_to(self._full_gradient(thetas)[:, None, :], indices.shape + (1,)).copy()

    def _potential(self, thetas):
        with np.errstate(over="ignore"):
            return np.exp(_multimode_exponent(self._coeffs, thetas[:, 0])[0])


# ---------------------------------------------------------------------------
# 1-D Gaussian mixture


class MixtureTarget(PotentialModel):
    """1-D Gaussian mixture ``sum_k w_k N(mean_k, std_k^2)``."""

    def __init__(self, weights: Sequence[float], means: Sequence[float], stds: Sequence[float]):
        super().__init__(1, 1)
        w = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        if not (w.shape == self.means.shape == self.stds.shape) or w.ndim != 1 or w.size == 0:
            raise InvalidArgumentError("mixture weights, means and stds must be equal-length vectors")
        if np.any(w <= 0) or np.any(self.stds <= 0):
            raise InvalidArgumentError("mixture weights and stds must be positive")
        self.weights = w / w.sum()
        self._log_norm = np.log(self.weights) - np.log(self.stds) - 0.5 * np.log(2 * np.pi)

    @property
    def has_potential(self) -> bool:
        return True

    def _component_logpdf(self, x):
        z = (x[:, None] - self.means) / self.stds
        return self._log_norm - 0.5 * z**2, z

    def _potential(self, thetas):
        lp, _ = self._component_logpdf(thetas[:, 0])
        return -logsumexp(lp, axis=1)

    def _full_gradient(self, thetas):
        lp, z = self._component_logpdf(thetas[:, 0])
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        return (resp * z / self.stds).sum(axis=1)[:, None]

    def _term_gradients(self, thetas, indices):
        return np.broadcast_to(self._full_gradient(thetas)[:, None, :], indices.shape + (1,)).copy()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.weights.size, size=size, p=self.weights)
        return rng.normal(self.means[comp], self.stds[comp])


# ---------------------------------------------------------------------------
# Bayesian linear regression


@dataclass(frozen=True)
class RegressionDataset:
    design: np.ndarray
    responses: np.ndarray
    noise_std: float = 1.0
    prior_std: float = 1.0
    covariate_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.atleast_1d(np.asarray(self.responses, dtype=float))
        if X.shape[0] == 0 or y.size == 0:
            raise InvalidArgumentError("regression dataset is empty")
        if X.shape[0] != y.size:
            raise InvalidArgumentError(f"design has {X.shape[0]} rows but {y.size} responses")
        if not self.noise_std > 0 or not self.prior_std > 0:
            raise InvalidArgumentError("noise_std and prior_std must be positive")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError("regression dataset contains non-finite values")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "responses", y)


class BayesLinReg(PotentialModel):
    """Gaussian-likelihood linear regression with isotropic Gaussian prior.

    Each term carries one datum's likelihood gradient plus ``1/N`` of the
    prior gradient, so minibatch sums stay unbiased for the full posterior.
    """

    def __init__(self, data: RegressionDataset):
        super().__init__(data.design.shape[1], data.design.shape[0])
        self.data = data
        self._X = data.design
        self._y = data.responses
        self._inv_noise_var = 1.0 / data.noise_std**2
        self._inv_prior_var = 1.0 / data.prior_std**2

    @property
    def has_potential(self) -> bool:
        return True

    def _term_gradients(self, thetas, indices):
        Xb = self._X[indices]
        resid = self._y[indices] - np.einsum("mbd,md->mb", Xb, thetas)
        prior = thetas * (self._inv_prior_var / self.num_terms)
        return -Xb * (resid * self._inv_noise_var)[..., None] + prior[:, None, :]

    def _full_gradient(self, thetas):
        resid = self._y - thetas @ self._X.T
        return -(resid @ self._X) * self._inv_noise_var + thetas * self._inv_prior_var

    def _potential(self, thetas):
        resid = self._y - thetas @ self._X.T
        return 0.5 * self._inv_noise_var * (resid**2).sum(axis=1) + 0.5 * self._inv_prior_var * (
            thetas**2
        ).sum(axis=1)


def make_bayes_linreg(data: RegressionDataset) -> BayesLinReg:
    return BayesLinReg(data)


def analytic_posterior(data: RegressionDataset) -> tuple[np.ndarray, np.ndarray]:
    """Exact conjugate posterior ``(mean, covariance)`` for ``BayesLinReg``."""
    X, y = data.design, data.responses
    precision = np.eye(X.shape[1]) / data.prior_std**2 + X.T @ X / data.noise_std**2
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("posterior precision is singular") from exc
    eye = np.eye(X.shape[1])
    inv_chol = np.linalg.solve(chol, eye)
    cov = inv_chol.T @ inv_chol
    mean = cov @ (X.T @ y) / data.noise_std**2
    return mean, cov


def synthetic_regression(
    num_points: int, dim: int, seed: int, noise_std: float = 1.0, prior_std: float = 1.0
) -> RegressionDataset:
    """Draw ``y = X w + noise`` with ``X, w`` standard normal."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((num_points, dim))
    w = rng.standard_normal(dim) * prior_std
    y = X @ w + noise_std * rng.standard_normal(num_points)
    return RegressionDataset(X, y, noise_std, prior_std)


def load_regression_csv(path, noise_std: float, prior_std: float) -> RegressionDataset:
    """Read a headed CSV with covariate columns and a ``y`` response column."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidArgumentError(f"{path}: empty file") from None
        if "y" not in header:
            raise InvalidArgumentError(f"{path}: no 'y' column in header {header}")
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    try:
        table = np.array([[float(cell) for cell in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from None
    if table.size == 0:
        raise InvalidArgumentError(f"{path}: no data rows")
    if table.shape[1] != len(header):
        raise InvalidArgumentError(f"{path}: rows have {table.shape[1]} cells, header has {len(header)}")
    y_col = header.index("y")
    covariates = [k for k in range(len(header)) if k != y_col]
    return RegressionDataset(
        table[:, covariates],
        table[:, y_col],
        noise_std,
        prior_std,
        covariate_names=tuple(header[k] for k in covariates),
    )
