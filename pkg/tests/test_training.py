import copy
import json
import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sropnet import tensor as tn
from sropnet.datagen import DatasetConfig, exact_solution_exp3, generate_dataset, make_rng
from sropnet.errors import ConfigError, NumericalError
from sropnet.model import SubnetSpec, TruthOracle, init_params, spec_for_dataset
from sropnet.tensor import ContractError, Tensor
from sropnet.training import (
    Batch,
    EvalReport,
    TrainConfig,
    amplitude_weights,
    baseline_interpolate,
    catmull_rom_1d,
    catmull_rom_2d,
    clip_gradients,
    data_loss,
    evaluate,
    learning_rate_at,
    linear_in_time,
    make_batch,
    physics_residual,
    relative_l2,
    sample_collocation,
    split_indices,
    train,
)


@pytest.fixture(scope="module")
def exp1_small():
    return generate_dataset(DatasetConfig("exp1", n_samples=6, seed=3))


@pytest.fixture(scope="module")
def exp3_small():
    return generate_dataset(DatasetConfig("exp3", n_samples=4, seed=5, n_queries=120, n_query_times=12))


def tiny_temporal(header, seed=0, **kw):
    spec = spec_for_dataset(
        header,
        K=4,
        branch=SubnetSpec(kind="lstm_mlp", lstm_hidden=4, widths=[8], time_upscale=True),
        trunk=SubnetSpec(widths=[8]),
        **kw,
    )
    return init_params(spec, make_rng(seed, 0))


def tiny_spacetime(header, seed=0):
    spec = spec_for_dataset(
        header,
        K=4,
        branch=SubnetSpec(kind="mlp", widths=[8]),
        sensor=SubnetSpec(kind="mlp", widths=[8]),
        trunk=SubnetSpec(widths=[8]),
    )
    return init_params(spec, make_rng(seed, 0))


def constant_model(c):
    return lambda batch: Tensor(np.full(batch.targets.shape, c))


def exp3_oracle(batch):
    """Closed-form exp3 solution evaluated at ``batch.y``."""
    a = batch.params[:, 0][:, None]
    b = batch.params[:, 1][:, None]
    return Tensor(exact_solution_exp3(a, b, batch.y[..., 0], batch.y[..., 1]))


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(lambda_data=0.0, lambda_physics=0.0),
        dict(lambda_data=-1.0, lambda_physics=1.0),
        dict(fd_step=0.0),
        dict(val_fraction=0.0),
        dict(val_fraction=1.0),
        dict(sample_weighting="bogus"),
        dict(lr_schedule="step"),
        dict(grad_clip=0.0),
        dict(batch_size=0),
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_split_is_disjoint_and_deterministic():
    tr, va = split_indices(50, 0.2, seed=4)
    assert len(va) == 10 and len(tr) == 40
    assert not set(tr) & set(va)
    tr2, va2 = split_indices(50, 0.2, seed=4)
    npt.assert_array_equal(tr, tr2)
    npt.assert_array_equal(va, va2)


# ---------------------------------------------------------------------------
# data loss
# ---------------------------------------------------------------------------


def test_data_loss_zero_for_exact_model(exp1_small):
    batch = make_batch(exp1_small, [0, 1, 2])
    assert data_loss(TruthOracle(), batch).item() == 0.0


def test_data_loss_constant_vs_constant():
    targets = np.full((2, 5), 0.25)
    batch = Batch(np.zeros((2, 3)), np.zeros((2, 1, 3)), np.zeros((2, 5, 2)), targets, np.zeros((2, 1)))
    assert data_loss(constant_model(1.0), batch).item() == pytest.approx(0.75**2, abs=1e-15)


def test_data_loss_matches_loop_oracle(exp1_small):
    model = tiny_temporal(exp1_small.header)
    batch = make_batch(exp1_small, [1, 4])
    got = data_loss(model, batch).item()
    from sropnet.model import forward

    pred = forward(model, batch.u_lr, batch.x, batch.y, batch.hr_initial).data
    total = 0.0
    count = 0
    for b in range(pred.shape[0]):
        for t in range(pred.shape[1]):
            for m in range(pred.shape[2]):
                total += (pred[b, t, m] - batch.targets[b, t, m]) ** 2
                count += 1
    assert abs(got - total / count) < 1e-12


def test_weighted_loss_scales_per_sample(exp1_small):
    batch = make_batch(exp1_small, [0, 1])
    model = constant_model(0.0)
    w = np.array([2.0, 0.0])
    got = data_loss(model, batch, w).item()
    expect = 2.0 * np.sum(batch.targets[0] ** 2) / batch.targets.size
    assert got == pytest.approx(expect, rel=1e-12)


def test_amplitude_weights_invert_mean_square(exp1_small):
    batch = make_batch(exp1_small, [0, 2])
    w = amplitude_weights(batch)
    for b in range(2):
        assert w[b] == pytest.approx(1.0 / np.mean(batch.u_lr[b] ** 2))


def test_empty_batch_rejected():
    batch = Batch(np.zeros((0, 3)), np.zeros((0, 1, 3)), np.zeros((0, 5, 2)), np.zeros((0, 5)), np.zeros((0, 1)))
    with pytest.raises(ContractError):
        data_loss(constant_model(0.0), batch)


# ---------------------------------------------------------------------------
# physics residual
# ---------------------------------------------------------------------------


def _exp3_collocation(ds, n=40, h=1e-2):
    rng = make_rng(8, 0)
    return sample_collocation(rng, n, ds.bounds, h, len(ds))


def test_residual_small_on_exact_solution(exp3_small):
    batch = make_batch(exp3_small, range(len(exp3_small)))
    col = _exp3_collocation(exp3_small)
    r = physics_residual(exp3_oracle, batch, col, 1e-3, exp3_small.header).item()
    assert r < 1e-3


def test_residual_second_order(exp3_small):
    batch = make_batch(exp3_small, range(len(exp3_small)))
    col = _exp3_collocation(exp3_small)
    rms = [
        math.sqrt(physics_residual(exp3_oracle, batch, col, h, exp3_small.header).item())
        for h in (1e-2, 5e-3, 2.5e-3)
    ]
    for coarse, fine in zip(rms, rms[1:]):
        assert 3.0 <= coarse / fine <= 5.0


def test_residual_zero_for_constant_model_without_forcing():
    ds = generate_dataset(DatasetConfig("diff2d", n_samples=1, seed=0))
    model = constant_model(0.5)
    batch = make_batch(ds, [0])
    col = sample_collocation(make_rng(0, 0), 10, ds.bounds[:2], 1e-3, 1)
    r = physics_residual(model, batch, col, 1e-3, ds.header).item()
    assert r == 0.0
    assert physics_residual(constant_model(0.0), batch, col, 1e-3, ds.header).item() == 0.0


def test_residual_rejects_points_near_boundary(exp3_small):
    batch = make_batch(exp3_small, [0])
    col = np.array([[[-1.0 + 5e-4, 1.0]]])
    with pytest.raises(ContractError):
        physics_residual(exp3_oracle, batch, col, 1e-3, exp3_small.header)


def test_residual_differentiable(exp3_small):
    model = tiny_spacetime(exp3_small.header)
    batch = make_batch(exp3_small, [0, 1])
    col = _exp3_collocation(exp3_small, n=5)[:2]
    loss = physics_residual(model, batch, col, 1e-2, exp3_small.header)
    loss.backward()
    assert all(np.any(p.grad != 0) for p in model.parameters())


def test_temporal_residual_runs(exp1_small):
    model = tiny_temporal(exp1_small.header)
    batch = make_batch(exp1_small, [0, 1])
    col = sample_collocation(make_rng(1, 0), 6, exp1_small.bounds[:1], 1e-2, 1)
    loss = physics_residual(model, batch, col, 1e-2, exp1_small.header)
    assert math.isfinite(loss.item())
    loss.backward()
    assert all(p.grad is not None for p in model.parameters())


# ---------------------------------------------------------------------------
# gradient flow
# ---------------------------------------------------------------------------


def test_every_subnet_receives_gradient(exp3_small):
    model = tiny_spacetime(exp3_small.header, seed=2)
    batch = make_batch(exp3_small, [0, 1, 2])
    data_loss(model, batch).backward()
    for name, p in model.tensors.items():
        assert np.any(p.grad != 0), name


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_overfit_single_sample(exp1_small):
    # sample 1 has the largest amplitude of the fixture
    one = exp1_small.subset([1])
    model = tiny_temporal(one.header, seed=1)
    cfg = TrainConfig(epochs=200, batch_size=1, learning_rate=1e-2)
    res = train(model, one, cfg)
    first = res.history[0][1]
    last = res.history[-1][1]
    assert last <= first / 10.0


def test_zero_learning_rate_freezes_everything(exp1_small):
    model = tiny_temporal(exp1_small.header)
    before = {k: v.data.copy() for k, v in model.tensors.items()}
    res = train(model, exp1_small, TrainConfig(epochs=3, batch_size=2, learning_rate=0.0))
    for k, v in res.params.tensors.items():
        npt.assert_array_equal(v.data, before[k])
    vals = [h[2] for h in res.history]
    assert vals == [vals[0]] * 3


def test_same_seed_same_history(exp1_small):
    cfg = TrainConfig(epochs=3, batch_size=2, seed=9)
    a = train(tiny_temporal(exp1_small.header), exp1_small, cfg)
    b = train(tiny_temporal(exp1_small.header), exp1_small, cfg)
    assert a.history == b.history


def test_best_checkpoint_is_restored(exp1_small):
    model = tiny_temporal(exp1_small.header)
    res = train(model, exp1_small, TrainConfig(epochs=4, batch_size=2, learning_rate=5e-2))
    best_val = min(h[2] for h in res.history)
    _, va = split_indices(len(exp1_small), 0.1, 0)
    from sropnet.training import evaluate_loss

    assert evaluate_loss(res.params, exp1_small, va) == pytest.approx(best_val, rel=1e-12)
    assert res.history[res.best_epoch - 1][2] == best_val


def test_history_csv_layout(exp1_small):
    res = train(tiny_temporal(exp1_small.header), exp1_small, TrainConfig(epochs=2, batch_size=3))
    lines = res.history_csv().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss"
    assert len(lines) == 3
    assert float(lines[2].split(",")[2]) == res.history[1][2]


def test_physics_term_trains(exp3_small):
    model = tiny_spacetime(exp3_small.header)
    cfg = TrainConfig(epochs=2, batch_size=2, lambda_physics=1e-3, n_collocation=4, fd_step=1e-2)
    res = train(model, exp3_small, cfg)
    assert all(math.isfinite(h[1]) for h in res.history)


def test_nan_loss_aborts_with_diagnostic(exp1_small):
    bad = copy.deepcopy(exp1_small.subset([0, 1, 2]))
    for rec in bad.records:
        rec.hr_targets[:] = np.nan
    with pytest.raises(NumericalError, match="epoch 1, batch 0"):
        train(tiny_temporal(bad.header), bad, TrainConfig(epochs=1, batch_size=3))


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(epochs=11, learning_rate=1e-3, lr_schedule="cosine", lr_min=1e-5)
    assert learning_rate_at(cfg, 1) == pytest.approx(1e-3)
    assert learning_rate_at(cfg, 6) == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert learning_rate_at(cfg, 11) == pytest.approx(1e-5)
    flat = TrainConfig(epochs=11, learning_rate=2e-3)
    assert all(learning_rate_at(flat, e) == 2e-3 for e in range(1, 12))


def test_clip_gradients_caps_global_norm():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    a.grad = np.array([3.0, 0.0])
    b.grad = np.array([4.0])
    norm = clip_gradients([a, b], 1.0)
    assert norm == pytest.approx(5.0)
    npt.assert_allclose(a.grad, [0.6, 0.0])
    npt.assert_allclose(b.grad, [0.8])
    clip_gradients([a, b], 10.0)
    npt.assert_allclose(b.grad, [0.8])


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def test_catmull_rom_reproduces_quadratics_inside():
    xs = np.linspace(-1.0, 1.0, 11)
    f = lambda x: 0.3 * x * x - 1.2 * x + 0.7
    q = np.linspace(xs[1], xs[-2], 37)
    npt.assert_allclose(catmull_rom_1d(f(xs), xs, q), f(q), atol=1e-10)


def test_catmull_rom_hits_nodes():
    xs = np.linspace(0.0, 2.0, 9)
    vals = np.sin(3 * xs)
    npt.assert_allclose(catmull_rom_1d(vals, xs, xs), vals, atol=1e-14)


def test_catmull_rom_2d_tensor_quadratic():
    a1 = np.linspace(0.0, 1.0, 8)
    a2 = np.linspace(0.0, 2.0, 8)
    f = lambda x, y: (x * x - x) * (0.5 * y * y + y - 1.0)
    X, Y = np.meshgrid(a1, a2, indexing="ij")
    rng = make_rng(0, 0)
    q = np.stack([rng.uniform(a1[1], a1[-2], 20), rng.uniform(a2[1], a2[-2], 20)], axis=-1)
    npt.assert_allclose(catmull_rom_2d(f(X, Y), a1, a2, q), f(q[:, 0], q[:, 1]), atol=1e-10)


def test_linear_in_time_endpoints_and_midpoint():
    frames = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = linear_in_time(frames, np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0, 2.0]))
    npt.assert_allclose(out, [[0, 1], [1, 2], [2, 3], [2, 3]])


@pytest.mark.parametrize("method,family", [("bicubic_grid", "exp1"), ("idw_scattered", "exp1"), ("idw_scattered", "exp3")])
def test_baselines_reproduce_constants(method, family):
    kw = dict(n_queries=60, n_query_times=6) if family == "exp3" else {}
    ds = generate_dataset(DatasetConfig(family, n_samples=1, seed=0, **kw))
    rec = ds.records[0]
    rec.lr_field = np.full_like(rec.lr_field, 0.37)
    out = baseline_interpolate(rec, method, ds.header)
    npt.assert_allclose(out, 0.37, atol=1e-12)
    assert out.shape == rec.hr_targets.shape


def test_idw_exact_at_sensor(exp3_small):
    rec = copy.deepcopy(exp3_small.records[0])
    rec.query_coords = rec.sensor_coords.T[:5].copy()
    out = baseline_interpolate(rec, "idw_scattered", exp3_small.header)
    npt.assert_array_equal(out, rec.lr_field[:5])


def test_bicubic_rejects_scattered(exp3_small):
    with pytest.raises(ContractError):
        baseline_interpolate(exp3_small.records[0], "bicubic_grid", exp3_small.header)


def test_baselines_deterministic(exp1_small):
    a = baseline_interpolate(exp1_small.records[2], "bicubic_grid", exp1_small.header)
    b = baseline_interpolate(exp1_small.records[2], "bicubic_grid", exp1_small.header)
    npt.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def test_truth_oracle_scores_zero(exp1_small):
    rep = evaluate(TruthOracle(), exp1_small)
    assert rep.relative_l2 == [0.0] * len(exp1_small)
    assert rep.aggregate["relative_l2"]["max"] == 0.0


def test_zero_model_scores_one(exp3_small):
    rep = evaluate(constant_model(0.0), exp3_small)
    npt.assert_allclose(rep.relative_l2, 1.0, rtol=0, atol=1e-15)


def test_report_json_round_trip(exp1_small):
    rep = evaluate(tiny_temporal(exp1_small.header), exp1_small, config={"note": "x"})
    back = EvalReport.from_json(rep.to_json())
    assert back == rep
    assert json.loads(rep.to_json())["config"] == {"note": "x"}
    assert "bicubic_grid" in rep.baselines


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 10_000))
def test_relative_l2_scale_invariant(scale, seed):
    rng = make_rng(seed, 0)
    truth = rng.normal(size=12) + 0.1
    pred = truth + rng.normal(size=12) * 0.1
    assert relative_l2(scale * pred, scale * truth) == pytest.approx(relative_l2(pred, truth), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_constant_loss_property(c, t):
    targets = np.full((3, 4), t)
    batch = Batch(np.ones((3, 2)), np.zeros((3, 1, 2)), np.zeros((3, 4, 2)), targets, np.zeros((3, 1)))
    assert data_loss(constant_model(c), batch).item() == pytest.approx((c - t) ** 2, abs=1e-12)
