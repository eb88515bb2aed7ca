import math

import numpy as np
import pytest

from pulsenet import autodiff as ad
from pulsenet import data, network as net, optimize as opt
from pulsenet import tensor as T
from pulsenet.errors import ContractError, FormatError, NumericError


def scalar_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


def test_sgd_cases():
    p = {"w": np.array([1.0])}
    assert opt.sgd_update(p, {"w": np.zeros(1)}, None, 0.1)[0]["w"][0] == 1.0
    assert math.isclose(opt.sgd_update(p, {"w": np.array([2.0])}, None, 0.1)[0]["w"][0], 0.8)
    g = {"w": np.array([1.0])}
    p1, s = opt.sgd_update(p, g, None, 0.1, 0.9)
    p2, _ = opt.sgd_update(p1, g, s, 0.1, 0.9)
    assert (p1["w"] - p2["w"])[0] > (p["w"] - p1["w"])[0]


def test_adam_zero_grad_and_first_step():
    p = {"w": np.array([0.5, -1.0])}
    new, st = opt.adam_update(p, {"w": np.zeros(2)}, None, 1e-3)
    assert np.array_equal(new["w"], p["w"]) and st.step == 1
    new, _ = opt.adam_update(p, {"w": np.array([3.0, -0.02])}, None, 1e-3)
    assert np.allclose(np.abs(new["w"] - p["w"]), 1e-3, rtol=1e-5)


def test_adam_matches_scalar_oracle():
    grads = np.random.default_rng(0).normal(size=(100, 3))
    params, state = {"w": np.array([0.3, -0.7, 1.1])}, None
    for g in grads:
        params, state = opt.adam_update(params, {"w": g}, state, 1e-2)
    want = [scalar_adam(p0, grads[:, i], 1e-2) for i, p0 in enumerate([0.3, -0.7, 1.1])]
    assert np.max(np.abs(params["w"] - want)) <= 1e-12


def test_shape_mismatch_rejected():
    with pytest.raises(ContractError):
        opt.adam_update({"w": np.ones(2)}, {"w": np.ones(3)}, None, 1e-3)


def small_problem(n=64, seed=0):
    spec = net.NetworkSpec((16,), (net.Linear(24), net.LIF(), net.Linear(3), net.LI()))
    ds = data.pack_dataset(data.synth_rate_coded(3, n, 20, 16, T.key(seed), 0.05, 0.6))
    return spec, ds


def test_train_step_equals_composition():
    spec, ds = small_problem()
    cfg = opt.TrainConfig(lr=1e-2, unroll=7)
    params = net.init(spec, T.key(1), dtype="f64")
    state = opt.TrainState(params, cfg.optimizer_obj().init(params))
    batch = (ds.x_packed[:16], ds.y[:16])
    new_state, loss, _ = opt.make_train_step(spec, cfg, ds.original_T)(state, batch)

    events = data.unpack_time(batch[0], ds.original_T, 1)
    (ref_loss, _), grads = ad.value_and_grad(opt.make_loss_fn(spec, cfg), has_aux=True)(
        params, events, batch[1])
    ref_params, _ = opt.adam_update(params, grads, None, 1e-2)
    assert abs(loss - ref_loss) <= 1e-10
    for a, b in zip(ad.tree_leaves(new_state.params), ad.tree_leaves(ref_params)):
        assert np.max(np.abs(a - b)) <= 1e-10


def test_zero_lr_keeps_params():
    spec, ds = small_problem()
    cfg = opt.TrainConfig(lr=0.0)
    params = net.init(spec, T.key(1))
    state = opt.TrainState(params, cfg.optimizer_obj().init(params))
    new, loss, _ = opt.make_train_step(spec, cfg, ds.original_T)(state, (ds.x_packed[:8], ds.y[:8]))
    assert np.isfinite(loss)
    assert all(np.array_equal(a, b) for a, b in zip(ad.tree_leaves(new.params),
                                                    ad.tree_leaves(params)))


def test_loss_decreases_on_fixed_batch():
    spec, ds = small_problem()
    cfg = opt.TrainConfig(lr=5e-3)
    params = net.init(spec, T.key(2))
    state = opt.TrainState(params, cfg.optimizer_obj().init(params))
    step = opt.make_train_step(spec, cfg, ds.original_T)
    batch = (ds.x_packed[:32], ds.y[:32])
    losses = []
    for _ in range(50):
        state, loss, _ = step(state, batch)
        losses.append(loss)
    assert losses[-1] < 0.5 * losses[0]


def test_non_finite_loss_raises():
    spec, ds = small_problem()
    cfg = opt.TrainConfig()
    params = net.init(spec, T.key(0))
    # the spike threshold swallows NaN upstream, so poison the readout weights
    params["linear_2"]["w"] = params["linear_2"]["w"] * np.nan
    state = opt.TrainState(params, cfg.optimizer_obj().init(params))
    with pytest.raises(NumericError):
        opt.make_train_step(spec, cfg, ds.original_T)(state, (ds.x_packed[:8], ds.y[:8]))


def test_train_epochs_zero_and_determinism():
    spec, ds = small_problem()
    init = net.init(spec, T.split(T.key(5))[0])
    p0, m0 = opt.train(spec, opt.TrainConfig(epochs=0, seed=5), ds)
    assert m0 == [] and all(np.array_equal(a, b) for a, b in
                            zip(ad.tree_leaves(p0), ad.tree_leaves(init)))
    cfg = opt.TrainConfig(epochs=3, batch_size=16, seed=5, augment_shift=2)
    pa, ma = opt.train(spec, cfg, ds)
    pb, mb = opt.train(spec, cfg, ds)
    assert [(r["loss"], r["acc"]) for r in ma] == [(r["loss"], r["acc"]) for r in mb]
    assert all(np.array_equal(a, b) for a, b in zip(ad.tree_leaves(pa), ad.tree_leaves(pb)))


def test_regularized_and_rate_losses_train():
    spec = net.NetworkSpec((16,), (net.Linear(24), net.LIF(), net.ActivityMonitor(),
                                   net.Linear(3), net.LIF()))
    _, ds = small_problem()
    cfg = opt.TrainConfig(epochs=2, batch_size=16, loss="spike_rate_mse", rate_hi=0.6,
                          rate_lo=0.05, reg_f_min=0.01, reg_f_max=0.5, reg_lam_low=1.0,
                          reg_lam_high=1.0, optimizer="sgd", lr=0.05, momentum=0.9)
    _, metrics = opt.train(spec, cfg, ds)
    assert len(metrics) == 2 and all(np.isfinite(r["loss"]) for r in metrics)


def test_evaluate_counts_every_example():
    spec, ds = small_problem(n=50)
    params = net.init(spec, T.key(0))
    acc = opt.evaluate(spec, params, ds, batch_size=16)
    assert 0.0 <= acc <= 1.0 and acc * 50 == round(acc * 50)


def test_checkpoint_roundtrip(tmp_path):
    spec, _ = small_problem()
    params = net.init(spec, T.key(0))
    state = opt.Optimizer().init(params)
    path = tmp_path / "c.npz"
    opt.save_checkpoint(path, params, state, "epochs = 3\n")
    p, s, text = opt.load_checkpoint(path)
    assert text == "epochs = 3\n" and s.step == 0 and list(p) == list(params)
    assert all(np.array_equal(a, b) for a, b in zip(ad.tree_leaves(p), ad.tree_leaves(params)))
    path.write_bytes(b"junk")
    with pytest.raises(FormatError):
        opt.load_checkpoint(path)
