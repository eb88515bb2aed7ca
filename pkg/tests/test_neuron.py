import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsenet import autodiff as ad
from pulsenet import neuron as nr
from pulsenet import surrogate as sg
from pulsenet import tensor as T
from pulsenet.errors import ArgumentError, ContractError


def scalar_lif(beta, theta, xs, V0=0.0):
    """Plain-float recurrence, one neuron."""
    b = min(max(beta, 0.0), 1.0)
    V, spikes, volts = V0, [], []
    for x in xs:
        s = 1.0 if V - theta >= 0.0 else 0.0
        V = b * V + x - s * theta
        spikes.append(s)
        volts.append(V)
    return spikes, volts


def test_hand_case():
    p = nr.LIFParams(np.float64(0.5))
    s, V = nr.lif_step(p, np.array([0.0]), np.array([1.2]))
    assert s[0] == 1.0 and np.isclose(V[0], -0.4, rtol=0, atol=1e-15)


def test_quiescent():
    s, V = nr.lif_step(nr.LIFParams(0.9), np.zeros(3), np.zeros(3))
    assert not s.any() and not V.any()


def test_constant_drive_trajectory():
    p = nr.LIFParams(np.float64(0.9))
    V = np.zeros(1)
    volts, spikes = [], []
    for _ in range(4):
        s, V = nr.lif_step(p, np.array([0.5]), V)
        spikes.append(s[0])
        volts.append(V[0])
    assert spikes == [0.0, 0.0, 0.0, 1.0]
    assert np.allclose(volts, [0.5, 0.95, 1.355, 0.7195], rtol=0, atol=1e-12)


def test_li_cases():
    V, out = nr.li_step(nr.LIFParams(0.0), np.array([3.0]), np.array([7.0]))
    assert V[0] == 3.0 and out is V
    V = np.zeros(1)
    for _ in range(10):
        V, _ = nr.li_step(nr.LIFParams(1.0), np.array([0.25]), V)
    assert V[0] == 2.5
    trace, _ = nr.li_scan(nr.LIFParams(np.float64(0.8)), np.full((1, 500, 1), 0.3))
    assert np.isclose(trace[0, -1, 0], 0.3 / 0.2, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(0.2, 2.0), st.integers(0, 2**31 - 1))
def test_step_matches_scalar_oracle(beta, theta, seed):
    xs = np.random.default_rng(seed).normal(0.3, 0.6, size=40)
    p = nr.LIFParams(np.float64(beta), theta)
    ref_s, ref_v = scalar_lif(beta, theta, xs)
    V = np.zeros(1)
    for t, x in enumerate(xs):
        s, V = nr.lif_step(p, np.array([x]), V)
        assert s[0] == ref_s[t] and V[0] == ref_v[t]


def test_beta_is_clipped():
    for raw, eff in [(-0.3, 0.0), (1.7, 1.0), (0.4, 0.4)]:
        _, V = nr.lif_step(nr.LIFParams(np.float64(raw)), np.zeros(1), np.array([0.5]))
        assert V[0] == eff * 0.5


def test_scan_matches_composed_steps():
    rng = np.random.default_rng(1)
    x = rng.normal(0.4, 0.8, size=(3, 25, 4))
    beta = rng.uniform(0.1, 0.9, size=4)
    p = nr.LIFParams(beta, 1.0, sg.arctan())
    spikes, VT = nr.lif_scan(p, x)
    V = np.zeros((3, 4))
    for t in range(25):
        s, V = nr.lif_step(p, x[:, t], V)
        assert np.array_equal(s, spikes[:, t])
    assert np.array_equal(V, VT)


def test_scan_gradients_match_composed_steps():
    rng = np.random.default_rng(2)
    x0 = rng.normal(0.4, 0.8, size=(2, 15, 3))
    w = rng.normal(size=(2, 15, 3))
    act = sg.superspike(5.0)

    def fused(p):
        s, V = nr.lif_scan(nr.LIFParams(p["b"], 1.0, act), p["x"])
        tr, _ = nr.li_scan(nr.LIFParams(p["b"]), s)
        return (tr * w).sum() + (V * V).sum()

    def stepped(p):
        V = np.zeros((2, 3))
        L = np.zeros((2, 3))
        total = 0.0
        for t in range(15):
            s, V = nr.lif_step(nr.LIFParams(p["b"], 1.0, act), p["x"][:, t], V)
            L, _ = nr.li_step(nr.LIFParams(p["b"]), s, L)
            total = total + (L * w[:, t]).sum()
        return total + (V * V).sum()

    params = {"x": x0, "b": rng.uniform(0.2, 0.8, size=3)}
    va, ga = ad.value_and_grad(fused)(params)
    vb, gb = ad.value_and_grad(stepped)(params)
    assert np.isclose(va, vb, rtol=1e-12)
    assert np.max(np.abs(ga["x"] - gb["x"])) < 1e-12
    assert np.max(np.abs(ga["b"] - gb["b"])) < 1e-10


def test_beta_gradient_zero_outside_unit_interval():
    x = np.full((1, 5, 2), 0.3)
    g = ad.grad(lambda b: nr.li_scan(nr.LIFParams(b), x)[0].sum())(np.array([-0.2, 1.3]))
    assert np.array_equal(g, [0.0, 0.0])


def test_init_modes():
    k = T.key(0)
    assert nr.init_lif(k, (64,), "fixed") == {}
    per = nr.init_lif(k, (64,), "per-neuron")["beta"]
    assert per.shape == (64,) and per.min() >= 0 and per.max() <= 1
    assert nr.init_lif(k, (12, 5, 5), "learnable-scalar")["beta"].size == 1
    with pytest.raises(ArgumentError):
        nr.init_lif(k, (3,), "bogus")


def test_init_state():
    assert np.array_equal(nr.init_state(1, (3,)), [[0, 0, 0]])
    z = nr.init_state(2, (12, 30, 30))
    assert z.shape == (2, 12, 30, 30) and not z.any()


def test_monitor_counts():
    rng = np.random.default_rng(0)
    trace = (rng.random((4, 64, 5)) < 0.3).astype(np.float32)
    trace[0, :, 0] = 1
    out, counts = nr.monitor_activity(trace)
    assert out is trace
    assert counts[0, 0] == 64
    assert np.array_equal(counts, trace.sum(axis=1))
    assert not nr.monitor_activity(np.zeros((1, 8, 2)))[1].any()
    with pytest.raises(ContractError):
        nr.monitor_activity(np.full((1, 2, 2), 0.5))
