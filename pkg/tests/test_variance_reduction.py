import itertools

import numpy as np
import pytest

from spos.errors import InvalidArgumentError, StateError
from spos.kernel import KernelConfig
from spos.samplers import Kind, ParticleEnsemble, RowExecutor, SamplerConfig, init_ensemble, run, step_generator
from spos.targets import PotentialModel, make_bayes_linreg, make_gaussian, synthetic_regression
from spos.variance_reduction import (
    History,
    SagaPosStepper,
    SagaState,
    SvrgPlusState,
    SvrgState,
    saga_commit,
    saga_estimate,
    svrg_estimate,
    svrg_plus_snapshot,
    svrg_snapshot,
)


class ScriptedRng:
    """Stands in for a generator whose ``integers`` call returns a fixed value."""

    def __init__(self, value):
        self.value = value

    def integers(self, lo, hi, size=None):
        assert lo <= self.value < hi
        return self.value


@pytest.fixture
def reg3():
    return make_bayes_linreg(synthetic_regression(3, 2, seed=4))


def identical_terms(n=4, d=2):
    return PotentialModel(d, n, term_gradient=lambda j, th: 0.25 * np.asarray(th) ** 3 - 1.0)


def plain(model, theta, batch):
    return model.stochastic_gradient(theta, np.asarray(batch))


def batches(n, b):
    return [np.array(c) for c in itertools.product(range(n), repeat=b)]


# -- SAGA ------------------------------------------------------------------


def test_saga_exact_at_initialization(reg3):
    theta0 = np.array([[0.3, -0.4], [1.0, 2.0]])
    state = SagaState.initialize(reg3, theta0)
    for i in range(2):
        for batch in ([0], [2, 2], [0, 1, 2, 1]):
            np.testing.assert_allclose(saga_estimate(state, i, theta0[i], batch, reg3), reg3.full_gradient(theta0[i]), rtol=0, atol=1e-12)


def test_saga_identical_terms():
    model = identical_terms()
    state = SagaState.initialize(model, np.array([[0.1, 0.2]]))
    theta = np.array([1.5, -0.7])
    for batch in ([0], [3, 1], [2, 2, 2]):
        np.testing.assert_allclose(saga_estimate(state, 0, theta, batch, model), model.full_gradient(theta), rtol=1e-13)


def test_saga_conditional_mean_identity(reg3):
    state = SagaState.initialize(reg3, np.array([[0.0, 0.0]]))
    # perturb the cached sum so the identity is not trivially F(theta)
    state.table_sum[0] += np.array([0.5, -0.25])
    theta = np.array([0.8, -1.1])
    mean = np.mean([saga_estimate(state, 0, theta, [j], reg3) for j in range(3)], axis=0)
    table_total = state.gradient_table[0].sum(axis=0)
    expected = reg3.full_gradient(theta) + (state.table_sum[0] - table_total)
    np.testing.assert_allclose(mean, expected, rtol=0, atol=1e-12)


def test_saga_estimate_does_not_mutate(reg3):
    state = SagaState.initialize(reg3, np.zeros((1, 2)))
    table, total = state.gradient_table.copy(), state.table_sum.copy()
    saga_estimate(state, 0, np.ones(2), [0, 2], reg3)
    np.testing.assert_array_equal(state.gradient_table, table)
    np.testing.assert_array_equal(state.table_sum, total)


def test_saga_commit_full_refresh(reg3):
    state = SagaState.initialize(reg3, np.zeros((2, 2)))
    theta = np.array([0.7, 0.2])
    saga_commit(state, 1, theta, [2, 0, 1], reg3)
    fresh = SagaState.initialize(reg3, theta[None, :])
    np.testing.assert_allclose(state.gradient_table[1], fresh.gradient_table[0], rtol=1e-14)
    np.testing.assert_allclose(state.table_sum[1], fresh.table_sum[0], rtol=1e-12)


def test_saga_commit_leaves_other_entries(reg3):
    state = SagaState.initialize(reg3, np.zeros((2, 2)))
    before = state.gradient_table.copy()
    saga_commit(state, 0, np.array([1.0, 1.0]), [1], reg3)
    changed = np.zeros((2, 3), dtype=bool)
    changed[0, 1] = True
    assert np.array_equal(state.gradient_table[~changed], before[~changed])
    assert not np.array_equal(state.gradient_table[0, 1], before[0, 1])


def test_saga_commit_duplicates_single_write(reg3):
    theta = np.array([-0.3, 0.9])
    a = SagaState.initialize(reg3, np.zeros((1, 2)))
    b = SagaState.initialize(reg3, np.zeros((1, 2)))
    saga_commit(a, 0, theta, [2, 2, 0, 2], reg3)
    saga_commit(b, 0, theta, sorted({2, 0}), reg3)
    np.testing.assert_array_equal(a.gradient_table, b.gradient_table)
    np.testing.assert_allclose(a.table_sum, b.table_sum, rtol=1e-14)
    a.audit()


def test_saga_uninitialized_state():
    with pytest.raises(StateError):
        saga_estimate(SagaState(), 0, np.zeros(1), [0], identical_terms(d=1))
    with pytest.raises(StateError):
        SagaState().audit()


def test_saga_audit_detects_drift(reg3):
    state = SagaState.initialize(reg3, np.zeros((1, 2)))
    state.table_sum[0, 0] += 1e-3
    with pytest.raises(StateError):
        state.audit()


def test_saga_memory_budget(reg3):
    with pytest.raises(InvalidArgumentError, match="budget"):
        SagaState.initialize(reg3, np.zeros((10, 2)), memory_budget=100)


def test_saga_table_consistent_after_run():
    model = make_gaussian(np.zeros(2), np.eye(2), split_count=6)
    cfg = SamplerConfig(kind=Kind.SAGA_POS, step_size=0.02, batch_size=3, total_steps=100, saga_audit_every=1000)
    init = init_ensemble(5, 2, 0)
    with RowExecutor(1) as ex:
        stepper = SagaPosStepper(model, cfg, KernelConfig(), ex, init)
        ens = init
        for _ in range(100):
            ens = stepper.step(ens)
    np.testing.assert_allclose(stepper.state.table_sum, stepper.state.gradient_table.sum(axis=1), rtol=1e-9, atol=1e-12)
    stepper.state.audit()


# -- SVRG ------------------------------------------------------------------


def test_svrg_option_ii_snapshot(reg3):
    ens = ParticleEnsemble(np.array([[0.2, 0.1], [-1.0, 0.5]]))
    state = SvrgState(option="II", epoch_length=3)
    out = svrg_snapshot(state, ens, None, reg3, step_generator(0, 0))
    np.testing.assert_array_equal(state.snapshot_positions, ens.positions)
    np.testing.assert_allclose(state.snapshot_gradients, reg3.full_gradient(ens.positions), rtol=1e-10)
    np.testing.assert_array_equal(out.positions, ens.positions)


def test_svrg_exact_at_anchor(reg3):
    ens = ParticleEnsemble(np.array([[0.2, 0.1], [-1.0, 0.5]]))
    state = SvrgState(option="II")
    svrg_snapshot(state, ens, None, reg3, step_generator(0, 0))
    for i in range(2):
        for batch in ([0], [1, 1], [2, 0, 1]):
            est = svrg_estimate(state, i, ens.positions[i], batch, reg3)
            np.testing.assert_allclose(est, reg3.full_gradient(ens.positions[i]), rtol=0, atol=1e-12)


def test_svrg_identical_terms():
    model = identical_terms()
    state = SvrgState(option="II")
    svrg_snapshot(state, ParticleEnsemble([[0.3, 0.3]]), None, model, step_generator(0, 0))
    theta = np.array([-2.0, 1.0])
    for batch in ([1], [0, 3]):
        np.testing.assert_allclose(svrg_estimate(state, 0, theta, batch, model), model.full_gradient(theta), rtol=1e-13)


def test_svrg_missing_snapshot():
    with pytest.raises(StateError):
        svrg_estimate(SvrgState(), 0, np.zeros(1), [0], identical_terms(d=1))
    with pytest.raises(StateError):
        svrg_estimate(SvrgPlusState(), 0, np.zeros(1), [0], identical_terms(d=1))


def test_option_i_scripted_lag():
    model = make_gaussian(np.zeros(1), np.eye(1))
    history = History(3)
    for k in range(6):
        history.push(k, np.full((2, 1), float(k)))
    state = SvrgState(option="I", epoch_length=3)
    live = ParticleEnsemble(np.full((2, 1), 6.0), step=6)
    history.push(6, live.positions)
    out = svrg_snapshot(state, live, history, model, ScriptedRng(2))
    np.testing.assert_array_equal(state.snapshot_positions, history.get(4))
    np.testing.assert_array_equal(out.positions, np.full((2, 1), 4.0))
    assert out.step == 6
    np.testing.assert_allclose(state.snapshot_gradients, model.full_gradient(np.full((2, 1), 4.0)))


def test_option_i_zero_lag_matches_option_ii(reg3):
    ens = ParticleEnsemble(np.array([[0.4, -0.2]]), step=3)
    hist = History(3)
    hist.push(3, ens.positions)
    one, two = SvrgState(option="I", epoch_length=3), SvrgState(option="II", epoch_length=3)
    a = svrg_snapshot(one, ens, hist, reg3, ScriptedRng(0))
    b = svrg_snapshot(two, ens, None, reg3, ScriptedRng(0))
    np.testing.assert_array_equal(one.snapshot_positions, two.snapshot_positions)
    np.testing.assert_array_equal(one.snapshot_gradients, two.snapshot_gradients)
    np.testing.assert_array_equal(a.positions, b.positions)


def test_option_i_clamps_lag_to_history():
    model = make_gaussian(np.zeros(1), np.eye(1))
    hist = History(4)
    hist.push(0, np.zeros((1, 1)))
    hist.push(1, np.ones((1, 1)))
    state = SvrgState(option="I", epoch_length=4)
    out = svrg_snapshot(state, ParticleEnsemble(np.ones((1, 1)), step=1), hist, model, ScriptedRng(3))
    np.testing.assert_array_equal(out.positions, np.zeros((1, 1)))


def test_history_ring():
    h = History(2)
    for k in range(4):
        h.push(k, np.array([[k]]))
    assert [s for s, _ in h.items] == [2, 3]
    with pytest.raises(StateError):
        h.get(1)


def test_option_i_run_resets_live_particles():
    model = make_gaussian(np.zeros(1), np.eye(1), split_count=3)
    cfg = SamplerConfig(kind=Kind.SVRG_POS, svrg_option="I", epoch_length=3, total_steps=9, step_size=0.05, seed=2)
    trace = run(init_ensemble(4, 1, 2), model, cfg)
    assert trace.final.step == 9
    assert trace.oracle_counts["full_gradient"] == 4 * 3


# -- SVRG+ -----------------------------------------------------------------


def test_svrg_plus_full_batch_identical_terms():
    model = identical_terms()
    state = SvrgPlusState(snapshot_batch=4)
    ens = ParticleEnsemble(np.array([[0.5, -0.5], [1.0, 2.0]]))
    svrg_plus_snapshot(state, ens, model, step_generator(1, 0))
    np.testing.assert_allclose(state.snapshot_gradients, model.full_gradient(ens.positions), rtol=1e-13)


def test_svrg_plus_single_term():
    model = make_gaussian(np.array([1.0]), np.eye(1))
    for b in (1, 5):
        state = SvrgPlusState(snapshot_batch=b)
        ens = ParticleEnsemble([[0.3], [2.0]])
        svrg_plus_snapshot(state, ens, model, step_generator(0, 0))
        np.testing.assert_allclose(state.snapshot_gradients, model.full_gradient(ens.positions), rtol=1e-14)


def test_svrg_plus_rejects_zero_batch():
    with pytest.raises(InvalidArgumentError):
        SvrgPlusState(snapshot_batch=0)


def test_svrg_plus_snapshot_unbiased(reg3):
    theta = np.array([0.4, -0.6])
    n = 20_000
    state = SvrgPlusState(snapshot_batch=1)
    ens = ParticleEnsemble(np.broadcast_to(theta, (n, 2)).copy())
    svrg_plus_snapshot(state, ens, reg3, step_generator(5, 0))
    g = state.snapshot_gradients
    se = g.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(g.mean(axis=0) - reg3.full_gradient(theta)) <= 3 * se)


def test_svrg_plus_never_calls_full_gradient():
    model = make_gaussian(np.zeros(2), np.eye(2), split_count=5)
    cfg = SamplerConfig(kind=Kind.SVRG_POS_PLUS, step_size=0.01, batch_size=2, snapshot_batch=3, epoch_length=7, total_steps=1000)
    model.counts.reset()
    trace = run(init_ensemble(4, 2, 0), model, cfg, diagnostics=None)
    assert trace.oracle_counts["full_gradient"] == 0
    assert model.counts.full_gradient == 0
    assert trace.oracle_counts["term_gradient"] > 0


# -- enumeration -----------------------------------------------------------


@pytest.mark.parametrize("b", [1, 2])
def test_unbiased_by_enumeration(reg3, b):
    theta0 = np.array([[0.1, -0.3]])
    theta = np.array([0.9, 0.2])
    target = reg3.full_gradient(theta)

    saga = SagaState.initialize(reg3, theta0)
    svrg = SvrgState(option="II")
    svrg_snapshot(svrg, ParticleEnsemble(theta0), None, reg3, step_generator(0, 0))
    plus = SvrgPlusState(snapshot_batch=b)
    # the SVRG+ estimator is unbiased jointly over J and I; enumerate both
    plus_means = []
    for jb in batches(3, b):
        plus.snapshot_positions = theta0.copy()
        plus.snapshot_gradients = reg3.stochastic_gradient(theta0, jb[None, :])
        plus_means.append(np.mean([svrg_estimate(plus, 0, theta, batch, reg3) for batch in batches(3, b)], axis=0))

    for est in (
        [plain(reg3, theta, batch) for batch in batches(3, b)],
        [saga_estimate(saga, 0, theta, batch, reg3) for batch in batches(3, b)],
        [svrg_estimate(svrg, 0, theta, batch, reg3) for batch in batches(3, b)],
        plus_means,
    ):
        np.testing.assert_allclose(np.mean(est, axis=0), target, rtol=0, atol=1e-12)


def test_svrg_variance_below_plain_near_anchor(reg3):
    anchor = np.array([[0.2, -0.5]])
    theta = anchor[0] + np.array([0.006, -0.007])
    assert np.linalg.norm(theta - anchor[0]) < 0.01
    svrg = SvrgState(option="II")
    svrg_snapshot(svrg, ParticleEnsemble(anchor), None, reg3, step_generator(0, 0))
    single = batches(3, 1)
    var_plain = np.var([plain(reg3, theta, b) for b in single], axis=0).sum()
    var_svrg = np.var([svrg_estimate(svrg, 0, theta, b, reg3) for b in single], axis=0).sum()
    assert var_svrg < var_plain


def test_stepper_snapshot_schedule():
    model = make_gaussian(np.zeros(1), np.eye(1), split_count=2)
    cfg = SamplerConfig(kind=Kind.SVRG_POS, epoch_length=4, total_steps=10, step_size=0.01)
    trace = run(init_ensemble(3, 1, 0), model, cfg)
    # snapshots at k = 0, 4, 8
    assert trace.oracle_counts["full_gradient"] == 3 * 3


def test_stepper_starts_mid_epoch():
    model = make_gaussian(np.zeros(1), np.eye(1), split_count=2)
    cfg = SamplerConfig(kind=Kind.SVRG_POS, epoch_length=4, total_steps=3, step_size=0.01)
    trace = run(ParticleEnsemble(np.zeros((2, 1)), step=5), model, cfg)
    assert trace.final.step == 8
    assert trace.oracle_counts["full_gradient"] == 2
