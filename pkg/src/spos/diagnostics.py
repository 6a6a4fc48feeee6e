"""Sampler diagnostics: exact 1-D Wasserstein-1, moments, and mode coverage."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidArgumentError, UnsupportedTargetError
from .samplers import METRICS_STREAM, ParticleEnsemble, step_generator
from .targets import BayesLinReg, GaussianTarget, MixtureTarget, MultimodeTarget, PotentialModel, analytic_posterior

log = logging.getLogger(__name__)

FLOAT_FMT = ".17g"

# A reference sampler maps (coordinate, rng, size) to exact i.i.d. marginal draws.
ReferenceSampler = Callable[[int, np.random.Generator, int], np.ndarray]


def _positions(ensemble) -> np.ndarray:
    x = np.asarray(getattr(ensemble, "positions", ensemble), dtype=float)
    return x[:, None] if x.ndim == 1 else x


# ---------------------------------------------------------------------------
# Wasserstein-1


def w1_1d(samples_a, samples_b) -> float:
    """Exact W1 between two equal-size 1-D empirical measures (sorted matching)."""
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("w1_1d needs non-empty samples")
    if a.size != b.size:
        raise InvalidArgumentError(f"w1_1d needs equal sample sizes, got {a.size} and {b.size}")
    return float(np.mean(np.abs(a - b)))


def w1_vs_reference(samples, reference_sampler: Callable, rng: np.random.Generator, repeats: int = 1) -> float:
    """Median over ``repeats`` of W1 against fresh exact reference batches of the same size.

    ``reference_sampler(rng, m)`` returns ``m`` exact draws.
    """
    if repeats < 1:
        raise InvalidArgumentError("repeats must be >= 1")
    samples = np.asarray(samples, dtype=float).ravel()
    values = [w1_1d(samples, reference_sampler(rng, samples.size)) for _ in range(repeats)]
    return float(np.median(values))


def grid_inverse_cdf_sampler(log_density: Callable, lo: float = -8.0, hi: float = 8.0, points: int = 20001):
    """Inverse-CDF sampler for a 1-D density tabulated on a uniform grid."""
    grid = np.linspace(lo, hi, points)
    logp = np.asarray(log_density(grid), dtype=float)
    p = np.exp(logp - np.max(logp))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.interp(rng.random(size), cdf[keep], grid[keep])

    return sample


def reference_for(model: PotentialModel) -> ReferenceSampler:
    """Exact marginal sampler for the built-in targets."""
    if isinstance(model, GaussianTarget):
        mean, cov = model.mean, model.covariance
    elif isinstance(model, BayesLinReg):
        mean, cov = analytic_posterior(model.data)
    elif isinstance(model, MixtureTarget):
        return lambda coord, rng, size: model.sample(rng, size)
    elif isinstance(model, MultimodeTarget):
        with np.errstate(over="ignore"):
            draw = grid_inverse_cdf_sampler(lambda g: -model.potential(g[:, None]))
        return lambda coord, rng, size: draw(rng, size)
    else:
        raise UnsupportedTargetError(f"no exact reference sampler for {type(model).__name__}")
    std = np.sqrt(np.diag(cov))
    return lambda coord, rng, size: rng.normal(mean[coord], std[coord], size)


# ---------------------------------------------------------------------------
# Modes


@dataclass(frozen=True)
class ModeSet:
    locations: tuple
    radius: float

    def __post_init__(self):
        locs = tuple(float(x) for x in self.locations)
        if not self.radius > 0:
            raise InvalidArgumentError("mode capture radius must be positive")
        gaps = np.diff(locs)
        if np.any(gaps <= 0):
            raise InvalidArgumentError("mode locations must be strictly increasing")
        if np.any(gaps <= 2 * self.radius):
            raise InvalidArgumentError(f"modes closer than twice the radius {self.radius}")
        object.__setattr__(self, "locations", locs)

    def __len__(self):
        return len(self.locations)


def find_modes_grid(
    model: PotentialModel, lo: float, hi: float, resolution: int, radius: Optional[float] = None
) -> ModeSet:
    """Interior local maxima of ``exp(-U)`` above 1% of the grid peak, golden-section refined."""
    if model.dim != 1:
        raise UnsupportedTargetError("mode search is only defined for 1-D targets")
    if not model.has_potential:
        raise UnsupportedTargetError("mode search needs a potential oracle")
    if not lo < hi or resolution < 3:
        raise InvalidArgumentError("need lo < hi and resolution >= 3")
    grid = np.linspace(lo, hi, resolution)
    cell = grid[1] - grid[0]
    with np.errstate(over="ignore"):
        u = np.asarray(model.potential(grid[:, None]), dtype=float)
    rel = np.exp(-(u - np.min(u)))
    interior = np.arange(1, resolution - 1)
    peak = (rel[interior] > rel[interior - 1]) & (rel[interior] > rel[interior + 1]) & (rel[interior] > 0.01)
    found = []
    for i in interior[peak]:
        res = minimize_scalar(
            lambda t: float(model.potential(np.array([[t]]))[0]),
            bracket=(grid[i - 1], grid[i], grid[i + 1]),
            method="golden",
        )
        x = float(res.x) if grid[i - 1] <= res.x <= grid[i + 1] else float(grid[i])
        found.append(x)
    if radius is None:
        radius = 3 * cell
        if len(found) > 1:
            radius = min(radius, 0.499 * float(np.min(np.diff(found))))
    return ModeSet(tuple(found), radius)


def mode_coverage(ensemble, modes: ModeSet) -> int:
    """Number of modes with at least one particle inside the capture radius."""
    x = _positions(ensemble)
    if x.shape[1] != 1:
        raise UnsupportedTargetError("mode coverage is only defined for 1-D ensembles")
    if len(modes) == 0:
        raise InvalidArgumentError("mode set is empty")
    locs = np.asarray(modes.locations)
    dist = np.abs(x[:, 0][:, None] - locs[None, :])
    return int(np.sum(np.any(dist <= modes.radius, axis=0)))


# ---------------------------------------------------------------------------
# Moments


class Moments(NamedTuple):
    mean: np.ndarray
    covariance: Optional[np.ndarray]  # None when fewer than two particles


def sample_moments(ensemble) -> Moments:
    x = _positions(ensemble)
    mean = x.mean(axis=0)
    if x.shape[0] < 2:
        return Moments(mean, None)
    return Moments(mean, np.atleast_2d(np.cov(x, rowvar=False, ddof=1)))


# ---------------------------------------------------------------------------
# Traces


@dataclass
class DiagnosticsConfig:
    """What ``run`` records.

    Snapshots are taken at the start, every ``snapshot_every`` steps and at
    the end. Metrics (per-coordinate mean/variance, plus W1 against
    ``reference`` when given) are computed at snapshot steps divisible by
    ``metrics_every`` and at the end; ``None`` disables them.
    """

    snapshot_every: int = 1
    metrics_every: Optional[int] = None
    reference: Optional[ReferenceSampler] = None
    w1_repeats: int = 1

    def __post_init__(self):
        if self.snapshot_every < 1:
            raise InvalidArgumentError("snapshot_every must be >= 1")
        if self.metrics_every is not None and self.metrics_every < 1:
            raise InvalidArgumentError("metrics_every must be >= 1")

    def wants_metrics(self, step: int, final: bool) -> bool:
        if self.metrics_every is None:
            return False
        return final or step % self.metrics_every == 0


def step_metrics(positions: np.ndarray, cfg: DiagnosticsConfig, seed: int, step: int) -> dict:
    out = {}
    mean = positions.mean(axis=0)
    var = positions.var(axis=0, ddof=1) if positions.shape[0] > 1 else np.zeros_like(mean)
    for c in range(positions.shape[1]):
        out[f"mean_{c}"] = float(mean[c])
        out[f"var_{c}"] = float(var[c])
    if cfg.reference is not None:
        rng = step_generator(seed, step, METRICS_STREAM)
        for c in range(positions.shape[1]):
            ref = lambda r, m, c=c: cfg.reference(c, r, m)
            out[f"w1_{c}"] = w1_vs_reference(positions[:, c], ref, rng, cfg.w1_repeats)
    return out


@dataclass
class RunTrace:
    snapshots: list
    metrics: list = field(default_factory=list)
    wall_time: float = 0.0
    config_echo: dict = field(default_factory=dict)
    final: Optional[ParticleEnsemble] = None
    oracle_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        steps = [s for s, _ in self.snapshots]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise InvalidArgumentError("snapshot steps must be strictly increasing")
        if not {s for s, _ in self.metrics} <= set(steps):
            raise InvalidArgumentError("metrics recorded at a step without a snapshot")

    def to_csv(self) -> str:
        """Trace as CSV text: ``step,particle,dim_0,...``, one row per particle per snapshot."""
        dim = self.snapshots[0][1].shape[1]
        buf = io.StringIO()
        buf.write(",".join(["step", "particle"] + [f"dim_{c}" for c in range(dim)]) + "\n")
        for step, pos in self.snapshots:
            for i, row in enumerate(pos):
                buf.write(f"{step},{i}," + ",".join(format(float(v), FLOAT_FMT) for v in row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def metric_series(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        steps = np.array([s for s, m in self.metrics if name in m])
        values = np.array([m[name] for s, m in self.metrics if name in m])
        return steps, values
