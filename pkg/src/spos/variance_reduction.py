"""Variance-reduced gradient estimators feeding the SPOS particle update.

* SAGA-POS keeps a per-particle table of the most recent ``F_j`` values.
* SVRG-POS anchors each particle at a snapshot ``theta~`` with exact gradient
  ``G~ = F(theta~)``, refreshed every ``epoch_length`` steps (Option II), or at
  a randomly chosen recent iterate that also replaces the live particle
  (Option I).
* SVRG-POS+ replaces the exact snapshot gradient by a size-``b`` minibatch
  estimate, so it never evaluates a full gradient.

The single-particle functions (``saga_estimate``, ``svrg_estimate``...) take a
1-D batch; the steppers use their vectorized counterparts.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, StateError
from .kernel import KernelConfig
from .samplers import (
    SNAPSHOT_STREAM,
    Kind,
    ParticleEnsemble,
    RowExecutor,
    SamplerConfig,
    apply_spos_update,
    draw_batches,
    sample_batch,
    step_generator,
)
from .targets import PotentialModel

log = logging.getLogger(__name__)


def _all_terms(model: PotentialModel, m: int) -> np.ndarray:
    return np.broadcast_to(np.arange(model.num_terms), (m, model.num_terms))


# ---------------------------------------------------------------------------
# SAGA


@dataclass
class SagaState:
    gradient_table: Optional[np.ndarray] = None  # (M, N, d)
    table_sum: Optional[np.ndarray] = None  # (M, d)

    @classmethod
    def initialize(cls, model: PotentialModel, positions, memory_budget: int = 1 << 30) -> "SagaState":
        """Fill the table with ``F_j(theta_0^(i))`` for every particle and term."""
        x = np.atleast_2d(np.asarray(positions, dtype=float))
        nbytes = x.shape[0] * model.num_terms * model.dim * 8
        if nbytes > memory_budget:
            raise InvalidArgumentError(
                f"SAGA table needs {nbytes} bytes (M={x.shape[0]}, N={model.num_terms}, d={model.dim}), "
                f"over the {memory_budget}-byte budget"
            )
        table = model.term_gradients(x, _all_terms(model, x.shape[0]))
        return cls(table, table.sum(axis=1))

    def _require(self):
        if self.gradient_table is None or self.table_sum is None:
            raise StateError("SAGA gradient table is not initialized")

    def audit(self, rtol: float = 1e-9) -> None:
        """Check the cached row sums against a recomputation, then resync them."""
        self._require()
        fresh = self.gradient_table.sum(axis=1)
        err = np.abs(fresh - self.table_sum)
        if np.any(err > rtol * (1.0 + np.abs(fresh))):
            raise StateError(f"SAGA cached sums drifted by up to {err.max():.3e}")
        self.table_sum = fresh


def saga_estimates_from(state: SagaState, fresh: np.ndarray, batches: np.ndarray, num_terms: int) -> np.ndarray:
    """Vectorized SAGA estimate given fresh term gradients ``fresh[i, b] = F_{batch[i,b]}(theta_i)``."""
    state._require()
    rows = np.arange(batches.shape[0])[:, None]
    stale = state.gradient_table[rows, batches]
    return state.table_sum + (num_terms / batches.shape[1]) * (fresh - stale).sum(axis=1)


def saga_commit_from(state: SagaState, fresh: np.ndarray, batches: np.ndarray) -> None:
    """Write ``fresh`` into the table once per distinct (particle, term) pair."""
    state._require()
    m, b = batches.shape
    order = np.argsort(batches, axis=1, kind="stable")
    sorted_idx = np.take_along_axis(batches, order, axis=1)
    sorted_fresh = np.take_along_axis(fresh, order[..., None], axis=1)
    first = np.ones((m, b), dtype=bool)
    first[:, 1:] = sorted_idx[:, 1:] != sorted_idx[:, :-1]
    rows = np.broadcast_to(np.arange(m)[:, None], (m, b))[first]
    cols = sorted_idx[first]
    new = sorted_fresh[first]
    delta = new - state.gradient_table[rows, cols]
    np.add.at(state.table_sum, rows, delta)
    state.gradient_table[rows, cols] = new


def saga_estimate(state: SagaState, i: int, theta, batch, model: PotentialModel) -> np.ndarray:
    """``sum_j g_ij + (N/B) sum_{j in batch} (F_j(theta) - g_ij)``; leaves the table untouched."""
    state._require()
    batch = np.asarray(batch)[None, :]
    fresh = model.term_gradients(np.atleast_2d(theta), batch)
    sub = SagaState(state.gradient_table[i : i + 1], state.table_sum[i : i + 1])
    return saga_estimates_from(sub, fresh, batch, model.num_terms)[0]


def saga_commit(state: SagaState, i: int, theta, batch, model: PotentialModel) -> None:
    """Set ``g_ij <- F_j(theta)`` for each distinct ``j`` in ``batch``.

    ``theta`` is the pre-update position the step evaluated its gradients at.
    """
    state._require()
    batch = np.asarray(batch)[None, :]
    fresh = model.term_gradients(np.atleast_2d(theta), batch)
    sub = SagaState(state.gradient_table[i : i + 1], state.table_sum[i : i + 1].copy())
    saga_commit_from(sub, fresh, batch)
    state.table_sum[i] = sub.table_sum[0]


# ---------------------------------------------------------------------------
# SVRG


@dataclass
class SvrgState:
    snapshot_positions: Optional[np.ndarray] = None
    snapshot_gradients: Optional[np.ndarray] = None
    option: str = "II"
    epoch_length: int = 10

    def _require(self):
        if self.snapshot_positions is None or self.snapshot_gradients is None:
            raise StateError("SVRG snapshot has not been taken")


@dataclass
class SvrgPlusState:
    snapshot_positions: Optional[np.ndarray] = None
    snapshot_gradients: Optional[np.ndarray] = None
    epoch_length: int = 10
    snapshot_batch: int = 1

    def __post_init__(self):
        if self.snapshot_batch < 1:
            raise InvalidArgumentError("snapshot batch size b must be >= 1")

    def _require(self):
        if self.snapshot_positions is None or self.snapshot_gradients is None:
            raise StateError("SVRG+ snapshot has not been taken")


@dataclass
class History:
    """Ring buffer of the last ``capacity`` ensembles, keyed by step."""

    capacity: int
    items: deque = field(default_factory=deque)

    def push(self, step: int, positions: np.ndarray) -> None:
        if self.items and self.items[-1][0] == step:
            self.items.pop()
        self.items.append((step, positions.copy()))
        while len(self.items) > self.capacity:
            self.items.popleft()

    def get(self, step: int) -> np.ndarray:
        for s, pos in self.items:
            if s == step:
                return pos
        raise StateError(f"step {step} is not in the history buffer")


def svrg_snapshot(
    state: SvrgState,
    ensemble: ParticleEnsemble,
    history: Optional[History],
    model: PotentialModel,
    rng: np.random.Generator,
) -> ParticleEnsemble:
    """Refresh the SVRG anchor at the current step and return the live ensemble.

    Option II anchors at the current positions. Option I draws a lag ``l``
    from ``{0, ..., epoch_length - 1}``, anchors at the step ``k - l``
    positions and moves the live particles back there.
    """
    k = ensemble.step
    if state.option == "II":
        anchor = ensemble.positions.copy()
    else:
        lag = int(rng.integers(0, state.epoch_length))
        oldest = history.items[0][0] if history is not None and history.items else k
        if lag > k - oldest:
            log.info("SVRG option I: lag %d reaches before recorded step %d; clamped", lag, oldest)
            lag = k - oldest
        anchor = ensemble.positions.copy() if lag == 0 else history.get(k - lag).copy()
    state.snapshot_positions = anchor
    state.snapshot_gradients = model.full_gradient(anchor)
    if state.option == "I":
        ensemble = ParticleEnsemble(anchor.copy(), k)
        if history is not None:
            history.push(k, ensemble.positions)
    return ensemble


def svrg_plus_snapshot(
    state: SvrgPlusState, ensemble: ParticleEnsemble, model: PotentialModel, rng: np.random.Generator, shared: bool = False
) -> None:
    """Anchor at the current positions with a size-``b`` minibatch gradient estimate."""
    if state.snapshot_batch < 1:
        raise InvalidArgumentError("snapshot batch size b must be >= 1")
    x = ensemble.positions
    m = x.shape[0]
    if shared:
        draws = np.broadcast_to(sample_batch(model.num_terms, state.snapshot_batch, rng), (m, state.snapshot_batch))
    else:
        draws = sample_batch(model.num_terms, state.snapshot_batch, rng, m)
    state.snapshot_positions = x.copy()
    state.snapshot_gradients = model.term_gradients(x, draws).sum(axis=1) * (model.num_terms / state.snapshot_batch)


def svrg_estimates(state, thetas: np.ndarray, batches: np.ndarray, model: PotentialModel) -> np.ndarray:
    """Vectorized ``G~ + (N/B) sum_{j in batch} (F_j(theta) - F_j(theta~))``."""
    state._require()
    current = model.term_gradients(thetas, batches)
    anchored = model.term_gradients(state.snapshot_positions, batches)
    return state.snapshot_gradients + (model.num_terms / batches.shape[1]) * (current - anchored).sum(axis=1)


def svrg_estimate(state, i: int, theta, batch, model: PotentialModel) -> np.ndarray:
    state._require()
    sub = SvrgState(state.snapshot_positions[i : i + 1], state.snapshot_gradients[i : i + 1])
    return svrg_estimates(sub, np.atleast_2d(theta), np.asarray(batch)[None, :], model)[0]


# ---------------------------------------------------------------------------
# Steppers


class _VrStepper:
    def __init__(self, model, cfg: SamplerConfig, kernel_cfg: KernelConfig, executor: RowExecutor):
        self.model, self.cfg, self.kernel_cfg, self.executor = model, cfg, kernel_cfg, executor

    def _draws(self, ensemble):
        rng = step_generator(self.cfg.seed, ensemble.step)
        batches = draw_batches(self.model, self.cfg, rng, ensemble.size)
        noise = rng.standard_normal(ensemble.positions.shape)
        return batches, noise

    def _estimates(self, x, batches):
        st = self.state

        def rows(lo, hi):
            sub = SvrgState(st.snapshot_positions[lo:hi], st.snapshot_gradients[lo:hi])
            return svrg_estimates(sub, x[lo:hi], batches[lo:hi], self.model)

        return self.executor.map_rows(rows, x.shape[0])


class SagaPosStepper(_VrStepper):
    def __init__(self, model, cfg, kernel_cfg, executor, initial: ParticleEnsemble):
        super().__init__(model, cfg, kernel_cfg, executor)
        self.state = SagaState.initialize(model, initial.positions, cfg.saga_memory_budget)
        self._steps = 0

    def step(self, ensemble):
        batches, noise = self._draws(ensemble)
        x = ensemble.positions
        fresh = self.executor.map_rows(lambda lo, hi: self.model.term_gradients(x[lo:hi], batches[lo:hi]), ensemble.size)
        grads = saga_estimates_from(self.state, fresh, batches, self.model.num_terms)
        new = apply_spos_update(ensemble, grads, noise, self.cfg, self.kernel_cfg, self.executor)
        saga_commit_from(self.state, fresh, batches)
        self._steps += 1
        if self._steps % self.cfg.saga_audit_every == 0:
            self.state.audit()
        return new


class SvrgPosStepper(_VrStepper):
    def __init__(self, model, cfg, kernel_cfg, executor, initial: ParticleEnsemble):
        super().__init__(model, cfg, kernel_cfg, executor)
        self.state = SvrgState(option=cfg.svrg_option, epoch_length=cfg.epoch_length)
        self.history = History(cfg.epoch_length) if cfg.svrg_option == "I" else None
        if self.history is not None:
            self.history.push(initial.step, initial.positions)

    def step(self, ensemble):
        if ensemble.step % self.cfg.epoch_length == 0 or self.state.snapshot_positions is None:
            rng = step_generator(self.cfg.seed, ensemble.step, SNAPSHOT_STREAM)
            ensemble = svrg_snapshot(self.state, ensemble, self.history, self.model, rng)
        batches, noise = self._draws(ensemble)
        grads = self._estimates(ensemble.positions, batches)
        new = apply_spos_update(ensemble, grads, noise, self.cfg, self.kernel_cfg, self.executor)
        if self.history is not None:
            self.history.push(new.step, new.positions)
        return new


class SvrgPosPlusStepper(_VrStepper):
    def __init__(self, model, cfg, kernel_cfg, executor, initial: ParticleEnsemble):
        super().__init__(model, cfg, kernel_cfg, executor)
        self.state = SvrgPlusState(epoch_length=cfg.epoch_length, snapshot_batch=cfg.snapshot_batch)

    def step(self, ensemble):
        if ensemble.step % self.cfg.epoch_length == 0 or self.state.snapshot_positions is None:
            rng = step_generator(self.cfg.seed, ensemble.step, SNAPSHOT_STREAM)
            svrg_plus_snapshot(self.state, ensemble, self.model, rng, self.cfg.shared_batch)
        batches, noise = self._draws(ensemble)
        grads = self._estimates(ensemble.positions, batches)
        return apply_spos_update(ensemble, grads, noise, self.cfg, self.kernel_cfg, self.executor)


def make_vr_stepper(model, cfg: SamplerConfig, kernel_cfg, executor, initial):
    cls = {
        Kind.SAGA_POS: SagaPosStepper,
        Kind.SVRG_POS: SvrgPosStepper,
        Kind.SVRG_POS_PLUS: SvrgPosPlusStepper,
    }[cfg.kind]
    return cls(model, cfg, kernel_cfg, executor, initial)
