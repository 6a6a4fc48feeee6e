"""Particle updates for SGLD, SVGD and SPOS, and the run loop shared by all samplers.

Randomness
----------
All draws come from per-step generators derived from the master seed:
``SeedSequence(seed, spawn_key=(step, stream))``. Within a step the update
stream first draws every particle's batch (an ``(M, B)`` block, row ``i``
belongs to particle ``i``) and then the ``(M, d)`` Gaussian noise block. Row
ownership is fixed before any work is split, so the result does not depend on
how many worker threads process the rows.
"""

from __future__ import annotations

import enum
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, InvalidArgumentError
from .kernel import KernelConfig, pairwise_terms
from .targets import PotentialModel

log = logging.getLogger(__name__)

UPDATE_STREAM = 0
SNAPSHOT_STREAM = 1
INIT_STREAM = 2
METRICS_STREAM = 3

# Rows are always processed in fixed-size chunks; threads only decide how many
# chunks run at once, so floating-point results are independent of --threads.
ROW_CHUNK = 64


class Kind(str, enum.Enum):
    SGLD = "SGLD"
    SVGD = "SVGD"
    SPOS = "SPOS"
    SAGA_POS = "SAGA-POS"
    SVRG_POS = "SVRG-POS"
    SVRG_POS_PLUS = "SVRG-POS+"


VR_KINDS = (Kind.SAGA_POS, Kind.SVRG_POS, Kind.SVRG_POS_PLUS)


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler hyperparameters.

    ``step_size`` is ``h0``; with ``step_decay = gamma > 0`` the step at
    iteration ``k`` is ``h0 * (k + 1) ** -gamma``. ``noise_scale`` and
    ``langevin_drift`` are test hooks that scale the injected noise and
    switch off the ``-h G / beta`` drift of SPOS.
    """

    kind: Kind = Kind.SPOS
    step_size: float = 1e-2
    step_decay: float = 0.0
    beta: float = 1.0
    batch_size: int = 1
    total_steps: int = 1000
    seed: int = 0
    epoch_length: int = 10
    snapshot_batch: int = 1
    svrg_option: str = "II"
    noise_scale: float = 1.0
    langevin_drift: bool = True
    shared_batch: bool = False
    saga_memory_budget: int = 1 << 30
    saga_audit_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        checks = [
            (self.step_size > 0, "step_size must be positive"),
            (self.step_decay >= 0, "step_decay must be non-negative"),
            (self.beta > 0, "beta must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.total_steps >= 0, "total_steps must be >= 0"),
            (self.epoch_length >= 1, "epoch_length must be >= 1"),
            (self.snapshot_batch >= 1, "snapshot_batch must be >= 1"),
            (self.svrg_option in ("I", "II"), "svrg_option must be 'I' or 'II'"),
            (0.0 <= self.noise_scale <= 1.0, "noise_scale must lie in [0, 1]"),
            (self.saga_audit_every >= 1, "saga_audit_every must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidArgumentError(msg)

    def step_size_at(self, k: int) -> float:
        if self.step_decay == 0.0:
            return self.step_size
        return self.step_size * (k + 1) ** (-self.step_decay)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    step: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise InvalidArgumentError(f"positions must be an (M, d) array with M >= 1, got {pos.shape}")
        self.positions = pos

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.step)


def step_generator(seed: int, step: int, stream: int = UPDATE_STREAM) -> np.random.Generator:
    """Generator owned by one (step, stream) pair of a run."""
    ss = np.random.SeedSequence(int(seed) % (1 << 64), spawn_key=(int(step), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def init_ensemble(num_particles: int, dim: int, seed: int, mean=0.0, scale: float = 1.0) -> ParticleEnsemble:
    """Draw ``num_particles`` i.i.d. from ``N(mean, scale^2 I)``."""
    if num_particles < 1 or dim < 1:
        raise InvalidArgumentError("need at least one particle of positive dimension")
    if not scale >= 0:
        raise InvalidArgumentError("init scale must be non-negative")
    rng = step_generator(seed, 0, INIT_STREAM)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))
    return ParticleEnsemble(mean + scale * rng.standard_normal((num_particles, dim)))


def sample_batch(num_terms: int, batch_size: int, rng: np.random.Generator, particles: Optional[int] = None):
    """Uniform draws with replacement from ``{0, ..., num_terms - 1}``.

    Returns shape ``(batch_size,)``, or ``(particles, batch_size)`` with one
    independent batch per row.
    """
    if num_terms < 1:
        raise InvalidArgumentError("num_terms must be positive")
    if batch_size < 1:
        raise InvalidArgumentError("batch_size must be positive")
    shape = (batch_size,) if particles is None else (particles, batch_size)
    return rng.integers(0, num_terms, size=shape)


def draw_batches(model: PotentialModel, cfg: SamplerConfig, rng, num_particles: int) -> np.ndarray:
    if cfg.shared_batch:
        return np.broadcast_to(sample_batch(model.num_terms, cfg.batch_size, rng), (num_particles, cfg.batch_size))
    return sample_batch(model.num_terms, cfg.batch_size, rng, num_particles)


class RowExecutor:
    """Runs a row-wise function over fixed chunks, optionally on a thread pool."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def map_rows(self, fn: Callable[[int, int], object], n: int):
        bounds = [(lo, min(lo + ROW_CHUNK, n)) for lo in range(0, n, ROW_CHUNK)]
        if self._pool is None or len(bounds) == 1:
            parts = [fn(lo, hi) for lo, hi in bounds]
        else:
            parts = list(self._pool.map(lambda b: fn(*b), bounds))
        if isinstance(parts[0], tuple):
            return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
        return np.concatenate(parts, axis=0)


_SERIAL = RowExecutor(1)


def minibatch_gradients(model, positions, batches, executor: RowExecutor = _SERIAL) -> np.ndarray:
    """Per-particle ``(N/B) sum_{j in batch_i} F_j(theta_i)``."""
    scale = model.num_terms / batches.shape[1]
    return executor.map_rows(
        lambda lo, hi: model.term_gradients(positions[lo:hi], batches[lo:hi]).sum(axis=1) * scale,
        positions.shape[0],
    )


def _check_finite(positions: np.ndarray, step: int) -> None:
    bad = ~np.all(np.isfinite(positions), axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)), step)


def _noise_coefficient(h: float, cfg: SamplerConfig) -> float:
    return np.sqrt(2.0 * h / cfg.beta) * cfg.noise_scale


def interaction(positions: np.ndarray, grads: np.ndarray, eta: float, executor: RowExecutor = _SERIAL) -> np.ndarray:
    """``(1/M) sum_j [-K(x_i - x_j) G_j + grad K(x_j - x_i)]`` for every ``i``."""
    m = positions.shape[0]

    def rows(lo, hi):
        kmat, repulsion = pairwise_terms(positions[lo:hi], positions, eta)
        return (repulsion - kmat @ grads) / m

    return executor.map_rows(rows, m)


def apply_spos_update(
    ensemble: ParticleEnsemble,
    grads: np.ndarray,
    noise: np.ndarray,
    cfg: SamplerConfig,
    kernel_cfg: KernelConfig,
    executor: RowExecutor = _SERIAL,
) -> ParticleEnsemble:
    """SPOS move given this step's gradient estimates and standard-normal noise."""
    x = ensemble.positions
    h = cfg.step_size_at(ensemble.step)
    eta = kernel_cfg.resolve(x)
    new = x + h * interaction(x, grads, eta, executor)
    if cfg.langevin_drift:
        new -= (h / cfg.beta) * grads
    coef = _noise_coefficient(h, cfg)
    if coef != 0.0:
        new += coef * noise
    _check_finite(new, ensemble.step)
    return ParticleEnsemble(new, ensemble.step + 1)


def _require_kind(cfg: SamplerConfig, *kinds: Kind) -> None:
    if cfg.kind not in kinds:
        raise InvalidArgumentError(f"config kind {cfg.kind.value} not valid here; expected {[k.value for k in kinds]}")


def sgld_step(
    ensemble: ParticleEnsemble,
    model: PotentialModel,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    executor: RowExecutor = _SERIAL,
) -> ParticleEnsemble:
    """Independent Langevin moves ``x - h G / beta + sqrt(2 h / beta) xi``."""
    _require_kind(cfg, Kind.SGLD)
    x = ensemble.positions
    batches = draw_batches(model, cfg, rng, x.shape[0])
    noise = rng.standard_normal(x.shape)
    h = cfg.step_size_at(ensemble.step)
    grads = minibatch_gradients(model, x, batches, executor)
    new = x - (h / cfg.beta) * grads
    coef = _noise_coefficient(h, cfg)
    if coef != 0.0:
        new = new + coef * noise
    _check_finite(new, ensemble.step)
    return ParticleEnsemble(new, ensemble.step + 1)


def svgd_step(
    ensemble: ParticleEnsemble,
    model: PotentialModel,
    cfg: SamplerConfig,
    kernel_cfg: KernelConfig,
    rng: np.random.Generator,
    executor: RowExecutor = _SERIAL,
) -> ParticleEnsemble:
    """Deterministic kernelized descent with repulsion; no injected noise."""
    _require_kind(cfg, Kind.SVGD)
    x = ensemble.positions
    batches = draw_batches(model, cfg, rng, x.shape[0])
    grads = minibatch_gradients(model, x, batches, executor)
    h = cfg.step_size_at(ensemble.step)
    eta = kernel_cfg.resolve(x)
    new = x + h * interaction(x, grads, eta, executor)
    _check_finite(new, ensemble.step)
    return ParticleEnsemble(new, ensemble.step + 1)


def spos_step(
    ensemble: ParticleEnsemble,
    model: PotentialModel,
    cfg: SamplerConfig,
    kernel_cfg: KernelConfig,
    rng: np.random.Generator,
    executor: RowExecutor = _SERIAL,
) -> ParticleEnsemble:
    """One SPOS move: Langevin drift and noise on top of the SVGD interaction.

    Each particle draws one batch; its gradient is reused in every
    interaction term that references it.
    """
    _require_kind(cfg, Kind.SPOS)
    x = ensemble.positions
    batches = draw_batches(model, cfg, rng, x.shape[0])
    noise = rng.standard_normal(x.shape)
    grads = minibatch_gradients(model, x, batches, executor)
    return apply_spos_update(ensemble, grads, noise, cfg, kernel_cfg, executor)


class _PlainStepper:
    def __init__(self, model, cfg, kernel_cfg, executor):
        self.model, self.cfg, self.kernel_cfg, self.executor = model, cfg, kernel_cfg, executor

    def step(self, ensemble: ParticleEnsemble) -> ParticleEnsemble:
        rng = step_generator(self.cfg.seed, ensemble.step)
        if self.cfg.kind is Kind.SGLD:
            return sgld_step(ensemble, self.model, self.cfg, rng, self.executor)
        if self.cfg.kind is Kind.SVGD:
            return svgd_step(ensemble, self.model, self.cfg, self.kernel_cfg, rng, self.executor)
        return spos_step(ensemble, self.model, self.cfg, self.kernel_cfg, rng, self.executor)


def make_stepper(model, cfg: SamplerConfig, kernel_cfg: KernelConfig, executor: RowExecutor, initial: ParticleEnsemble):
    if cfg.kind in VR_KINDS:
        from .variance_reduction import make_vr_stepper

        return make_vr_stepper(model, cfg, kernel_cfg, executor, initial)
    return _PlainStepper(model, cfg, kernel_cfg, executor)


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("SAMPLER_THREADS", "1") or 1)
    if threads < 1:
        raise InvalidArgumentError("threads must be >= 1")
    return threads


def run(
    initial: ParticleEnsemble,
    model: PotentialModel,
    cfg: SamplerConfig,
    kernel_cfg: KernelConfig = KernelConfig(),
    diagnostics=None,
    threads: Optional[int] = None,
):
    """Apply ``cfg.total_steps`` updates and record a :class:`~spos.diagnostics.RunTrace`."""
    from .diagnostics import DiagnosticsConfig, RunTrace, step_metrics

    diagnostics = diagnostics or DiagnosticsConfig()
    if initial.dim != model.dim:
        raise InvalidArgumentError(f"ensemble dimension {initial.dim} != model dimension {model.dim}")
    total = cfg.total_steps
    ensemble = initial.copy()
    start_counts = model.counts.as_dict()
    snapshots = [(ensemble.step, ensemble.positions.copy())]
    metrics = []

    def record_metrics(ens):
        if diagnostics.wants_metrics(ens.step, ens.step == initial.step + total):
            metrics.append((ens.step, step_metrics(ens.positions, diagnostics, cfg.seed, ens.step)))

    record_metrics(ensemble)
    t0 = time.perf_counter()
    # overflow is reported as DivergenceError by the finiteness check
    with RowExecutor(resolve_threads(threads)) as executor, np.errstate(over="ignore", invalid="ignore"):
        stepper = make_stepper(model, cfg, kernel_cfg, executor, ensemble)
        for _ in range(total):
            ensemble = stepper.step(ensemble)
            done = ensemble.step - initial.step
            if done % diagnostics.snapshot_every == 0 or done == total:
                snapshots.append((ensemble.step, ensemble.positions.copy()))
                record_metrics(ensemble)
    wall = time.perf_counter() - t0
    end_counts = model.counts.as_dict()
    return RunTrace(
        snapshots=snapshots,
        metrics=metrics,
        wall_time=wall,
        config_echo={"sampler": cfg.as_dict(), "kernel": {"bandwidth": kernel_cfg.bandwidth}},
        final=ensemble,
        oracle_counts={k: end_counts[k] - start_counts[k] for k in end_counts},
    )
