import numpy as np
import pytest

from grassrom.dataset import Dataset
from grassrom.densela import make_rng
from grassrom.dynsys import generate_trajectories, toy_exact_basis
from grassrom.exceptions import DimensionError, GradientDataRequired, NumericalError
from grassrom.grassmann import init_random
from grassrom.ridgenet import BowtieParams, NetParams, init_params, predict
from grassrom.trainer import (AdamState, TrainConfig, adam_step, alternating_fit, bowtie_fit,
                              fit_alternating, fit_bowtie, mean_sq_norm, read_trace_csv,
                              rel_error_dataset, rel_error_validation, split_dataset,
                              write_subspace_csv)
from oracles import scalar_forward


# -- ADAM -------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    theta = np.array([1.0, -2.0, 3.0])
    _, out = adam_step(AdamState.fresh(3), theta, np.zeros(3), 0.1)
    np.testing.assert_array_equal(out, theta)


def test_adam_first_step_closed_form():
    # fresh state: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    g = np.array([0.5, -3.0, 1e-3])
    theta = np.zeros(3)
    state, out = adam_step(AdamState.fresh(3), theta, g, 1e-3)
    expected = -1e-3 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out, expected, rtol=1e-12)
    assert np.all(np.abs(np.abs(out) - 1e-3) <= 1e-3 * 1e-5)
    assert state.t == 1
    np.testing.assert_allclose(state.m, 0.1 * g)
    np.testing.assert_allclose(state.v, 0.001 * g * g)


def test_adam_second_step_closed_form():
    g1, g2 = np.array([1.0, -1.0]), np.array([2.0, 0.5])
    s, th = adam_step(AdamState.fresh(2), np.zeros(2), g1, 0.01)
    s, th = adam_step(s, th, g2, 0.01)
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
    step2 = 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    step1 = 0.01 * g1 / (np.abs(g1) + 1e-8)
    np.testing.assert_allclose(th, -(step1 + step2), rtol=1e-12)


def test_adam_deterministic_and_pure():
    st = AdamState.fresh(4)
    theta, g = np.arange(4.0), np.array([0.1, 0.2, -0.3, 0.4])
    a = adam_step(st, theta, g, 0.01)
    b = adam_step(st, theta, g, 0.01)
    np.testing.assert_array_equal(a[1], b[1])
    assert st.t == 0 and not np.any(st.m)


def test_adam_errors():
    with pytest.raises(NumericalError):
        adam_step(AdamState.fresh(2), np.zeros(2), np.array([np.nan, 0.0]), 0.1)
    with pytest.raises(DimensionError):
        adam_step(AdamState.fresh(2), np.zeros(2), np.zeros(3), 0.1)


# -- config -----------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"k": 0}, {"h": 0}, {"outer_iters": 0}, {"batch_size": 0}, {"inner_iters": -1},
    {"lr": 0.0}, {"lambda_reg": -1e-3}, {"u_init": "svd"}, {"batch_unit": "epoch"},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# -- splitting ----------------------------------------------------------------

def _trajectory_stub(n_traj, stamps):
    M = n_traj * stamps
    x = np.arange(M, dtype=float)[:, None]
    return Dataset(x, x, trajectory_ids=np.repeat(np.arange(n_traj), stamps))


def test_split_full_scale_sizes():
    d = _trajectory_stub(500, 202)
    tr, va, rest = split_dataset(d, 150, 30, seed=0)
    assert (tr.n_samples, va.n_samples, rest.n_samples) == (30300, 6060, 64640)
    sets = [set(np.unique(s.trajectory_ids)) for s in (tr, va, rest)]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert len(sets[0] | sets[1] | sets[2]) == 500
    # whole trajectories only
    for s in (tr, va):
        assert np.all(np.bincount(s.trajectory_ids)[np.unique(s.trajectory_ids)] == 202)


def test_split_pointwise_cover_and_fractions(rng):
    d = Dataset(rng.standard_normal((100, 2)), rng.standard_normal(100))
    tr, va, rest = split_dataset(d, 50, 50, seed=3)
    assert rest.n_samples == 0
    both = np.vstack([tr.inputs, va.inputs])
    assert np.unique(both, axis=0).shape[0] == 100
    tr, va, rest = split_dataset(d, 0.8, 0.2, seed=3)
    assert (tr.n_samples, va.n_samples) == (80, 20)


def test_split_reproducible():
    d = _trajectory_stub(20, 3)
    a = split_dataset(d, 5, 5, seed=9)
    b = split_dataset(d, 5, 5, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.inputs, y.inputs)


@pytest.mark.parametrize("sizes", [(0, 1), (8, 3), (11, 0)])
def test_split_infeasible(sizes):
    with pytest.raises(ValueError):
        split_dataset(_trajectory_stub(10, 2), *sizes, seed=0)


# -- metrics ----------------------------------------------------------------

def _instance(seed, M=20, m=4, k=2, h=5, n=2):
    rng = make_rng(seed)
    p = init_params(k, h, n, rng)
    u = init_random(m, k, rng)
    x = rng.standard_normal((M, m))
    return p, u, x, rng


def test_rel_error_validation_perfect_and_zero_model():
    p, u, x, rng = _instance(0)
    perfect = Dataset(x, predict(p, u, x))
    assert rel_error_validation(p, u, perfect, perfect) <= 1e-15
    zero = NetParams(p.a1, p.b1, np.zeros_like(p.a2), np.zeros_like(p.b2))
    d = Dataset(x, rng.standard_normal((20, 2)))
    assert rel_error_validation(zero, u, d, d) == pytest.approx(1.0, abs=1e-15)


def test_rel_error_validation_scalar_oracle():
    p, u, x, rng = _instance(1, M=15)
    whole = Dataset(rng.standard_normal((40, 4)), rng.standard_normal((40, 2)))
    val = Dataset(x, rng.standard_normal((15, 2)))
    num = 0.0
    for xl, fl in zip(val.inputs, val.outputs):
        g = scalar_forward(p.a1, p.b1, p.a2, p.b2, [sum(u[i, j] * xl[i] for i in range(4))
                                                    for j in range(2)])
        num += sum((fl[i] - g[i]) ** 2 for i in range(2))
    den = sum(sum(v * v for v in row) for row in whole.outputs)
    expected = np.sqrt((num / 15) / (den / 40))
    assert rel_error_validation(p, u, val, whole) == pytest.approx(expected, rel=1e-12)
    # precomputed denominator gives the same number
    assert rel_error_validation(p, u, val, mean_sq_norm(whole.outputs)) == \
        rel_error_validation(p, u, val, whole)


def test_rel_error_validation_errors():
    p, u, x, _ = _instance(2)
    zeros = Dataset(x, np.zeros((20, 2)))
    with pytest.raises(ZeroDivisionError):
        rel_error_validation(p, u, zeros, zeros)


def test_rel_error_dataset():
    rng = make_rng(4)
    d = Dataset(rng.standard_normal((30, 3)), rng.standard_normal((30, 2)))
    assert rel_error_dataset(lambda x: d.outputs, d) == 0.0
    assert rel_error_dataset(lambda x: np.zeros((30, 2)), d) == pytest.approx(1.0, abs=1e-15)
    assert rel_error_dataset(lambda x: 1.03 * d.outputs, d) == pytest.approx(0.03, rel=1e-12)
    with pytest.raises(ZeroDivisionError):
        rel_error_dataset(lambda x: x, Dataset(d.inputs, np.zeros(30)))


# -- alternating scheme -------------------------------------------------------

@pytest.fixture(scope="module")
def small_toy():
    return generate_trajectories(12, n_stamps=25, seed=5)


def _cfg(**kw):
    base = dict(k=2, h=8, inner_iters=20, outer_iters=3, n_train=8, n_val=2, batch_size=4,
                seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_degenerate_loop_only_moves_basis(small_toy):
    cfg = _cfg(outer_iters=1, inner_iters=0)
    tr = alternating_fit(small_toy, cfg)
    assert tr.records == []
    assert len(tr.subspace_steps) == 1 and len(tr.bases) == 1
    step = tr.subspace_steps[0]
    assert step.objective_after <= step.objective_before
    # the network is the initialized one
    tr2 = alternating_fit(small_toy, cfg)
    np.testing.assert_array_equal(tr.params.flatten(), tr2.params.flatten())


def test_trace_accounting_and_learning_rates(small_toy):
    cfg = _cfg(lr=2e-3)
    tr = alternating_fit(small_toy, cfg)
    assert len(tr.records) == cfg.outer_iters * cfg.inner_iters
    assert [r.epoch for r in tr.records] == list(range(1, 61))
    assert [(r.outer, r.inner) for r in tr.records[19:21]] == [(1, 20), (2, 1)]
    assert tr.learning_rates == [2e-3 * 0.9 ** p for p in range(3)]
    assert len(tr.bases) == 3
    for b in tr.bases + [tr.basis]:
        assert np.max(np.abs(b.T @ b - np.eye(2))) <= 1e-10
    for s in tr.subspace_steps:
        assert s.objective_after <= s.objective_before
        assert s.max_ortho_error <= 1e-10


def test_alternating_deterministic(small_toy):
    a = alternating_fit(small_toy, _cfg())
    b = alternating_fit(small_toy, _cfg())
    np.testing.assert_array_equal(a.val_relerrors, b.val_relerrors)
    np.testing.assert_array_equal(a.basis, b.basis)


def test_initializers_share_split_and_network(small_toy):
    runs = {u: alternating_fit(small_toy, _cfg(u_init=u, outer_iters=1, inner_iters=0))
            for u in ("identity", "random", "active_subspace")}
    flats = [r.params.flatten() for r in runs.values()]
    np.testing.assert_array_equal(flats[0], flats[1])
    np.testing.assert_array_equal(flats[0], flats[2])
    np.testing.assert_array_equal(runs["identity"].bases[0], np.eye(3, 2))
    ang = runs["active_subspace"].bases[0].T @ toy_exact_basis()
    assert abs(abs(np.linalg.det(ang)) - 1.0) <= 1e-8


def test_active_subspace_init_needs_jacobians(small_toy):
    d = Dataset(small_toy.inputs, small_toy.outputs, trajectory_ids=small_toy.trajectory_ids)
    with pytest.raises(GradientDataRequired):
        alternating_fit(d, _cfg(u_init="active_subspace"))
    alternating_fit(d, _cfg(u_init="identity", outer_iters=1, inner_iters=1))


def test_desk_run_improves(small_toy):
    tr = alternating_fit(small_toy, _cfg(inner_iters=200, outer_iters=2))
    assert tr.final_val_relerror() < tr.val_relerrors[0] < tr.initial_val_relerror
    assert tr.min_val_relerror() <= tr.final_val_relerror()


def test_interpolation_case_reaches_tiny_objective():
    # targets produced by a network of the same architecture on a known basis
    rng = make_rng(0)
    true = init_params(1, 4, 1, rng)
    u = np.eye(2, 1)
    x = rng.uniform(-1, 1, (32, 2))
    d = Dataset(x, predict(true, u, x))
    cfg = TrainConfig(k=1, h=16, lambda_reg=0.0, lr=1e-2, inner_iters=1500, outer_iters=2,
                      batch_size=32, n_train=32, n_val=0, u_init="identity", seed=0)
    tr = alternating_fit(d, cfg)
    assert tr.train_objectives[-1] < 1e-6


def test_patience_stops_early(small_toy):
    tr = alternating_fit(small_toy, _cfg(lr=1.0, inner_iters=50, outer_iters=1, patience=2))
    assert len(tr.records) < 50


def test_nonfinite_objective_keeps_partial_trace(small_toy):
    cfg = _cfg(lr=1e200, inner_iters=50, outer_iters=1)
    with pytest.raises(NumericalError) as info:
        with np.errstate(all="ignore"):
            alternating_fit(small_toy, cfg)
    assert info.value.trace is not None


def test_trace_csv_roundtrip(tmp_path, small_toy):
    tr = alternating_fit(small_toy, _cfg(inner_iters=3, outer_iters=2))
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    assert path.read_text().splitlines()[0] == "outer,epoch,train_objective,val_relerror"
    back = read_trace_csv(path)
    assert [r.val_relerror for r in back] == list(tr.val_relerrors)
    assert [r.epoch for r in back] == [1, 2, 3, 4, 5, 6]
    sub = tmp_path / "subspace.csv"
    write_subspace_csv(tr, sub)
    assert len(sub.read_text().splitlines()) == 3


def test_sample_batching_without_ids(rng):
    x = rng.uniform(-1, 1, (30, 3))
    d = Dataset(x, np.sin(x @ np.array([1.0, 0.5, 0.0]))[:, None])
    tr = alternating_fit(d, TrainConfig(k=1, h=4, inner_iters=5, outer_iters=1, n_train=20,
                                        n_val=10, batch_size=100, u_init="random"))
    assert len(tr.records) == 5


# -- bowtie -------------------------------------------------------------------

def test_bowtie_accounting_and_determinism(small_toy):
    cfg = _cfg()
    a = bowtie_fit(small_toy, cfg)
    b = bowtie_fit(small_toy, cfg)
    assert len(a.records) == cfg.outer_iters * cfg.inner_iters
    assert a.learning_rates == [1e-3 * 0.9 ** p for p in range(3)]
    np.testing.assert_array_equal(a.val_relerrors, b.val_relerrors)


def test_bowtie_frozen_orthonormal_a0_matches_network_subproblem(small_toy):
    cfg = _cfg(outer_iters=1, inner_iters=10)
    train = small_toy.subset(np.arange(100))
    val = small_toy.subset(np.arange(100, 150))
    rng = make_rng(7)
    p = init_params(2, 8, 3, rng)
    u = init_random(3, 2, rng)
    denom = mean_sq_norm(small_toy.outputs)
    bow = fit_bowtie(train, val, denom, cfg, freeze_a0=True, rng_batches=make_rng(1),
                     params=BowtieParams(p.a1, p.b1, p.a2, p.b2, u.T.copy()))
    # constrained run with the subspace step disabled
    alt = fit_alternating(train, val, denom, TrainConfig(**{**cfg.to_dict(),
                                                            "subspace_max_iters": 1,
                                                            "subspace_tol": np.inf}),
                          basis=u, params=p.copy(), rng_batches=make_rng(1))
    np.testing.assert_array_equal(bow.params.a0, u.T)
    np.testing.assert_allclose(bow.val_relerrors, alt.val_relerrors, rtol=1e-10)
    np.testing.assert_allclose(bow.params.net().flatten(), alt.params.flatten(), rtol=1e-9,
                               atol=1e-12)
