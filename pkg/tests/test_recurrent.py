import numpy as np
import pytest

from thermodepth import autodiff as ad
from thermodepth.autodiff import Tensor
from thermodepth.recurrent import (ConvGRUParams, RecurrentState,
                                   ReservoirParams, convgru_step,
                                   init_convgru, init_convgru_state,
                                   init_reservoir, init_reservoir_state,
                                   reservoir_step)


def spectral_radius(m):
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def test_init_reservoir_contracts_and_signs():
    p = init_reservoir(seed=0, k=16, n=32, out_dim=8, dtype=np.float64)
    rho = spectral_radius(p.w.data)
    assert abs(rho - 0.9) < 1e-6
    n_exc = int(round(0.8 * 32))
    assert n_exc == 26
    assert np.all(p.w.data[:, :n_exc] >= 0)
    assert np.all(p.w.data[:, n_exc:] <= 0)
    assert not p.w.requires_grad and not p.w_in.requires_grad
    assert p.w_out.requires_grad


def test_init_reservoir_deterministic():
    a = init_reservoir(seed=5, k=8, n=16, out_dim=4)
    b = init_reservoir(seed=5, k=8, n=16, out_dim=4)
    assert np.array_equal(a.w.data, b.w.data)
    assert np.array_equal(a.w_in.data, b.w_in.data)
    assert np.array_equal(a.w_out.data, b.w_out.data)


def test_membrane_decay_with_zero_current():
    p = init_reservoir(seed=1, k=4, n=3, out_dim=2, dtype=np.float64)
    p.w_in.data[:] = 0.0
    p.w.data[:] = 0.0
    state = RecurrentState("reservoir", Tensor(np.ones((1, 3))))
    new, _ = reservoir_step(np.zeros(4), state, p)
    assert np.allclose(new.value.data, 0.9)  # V(1 - dt/tau) with dt/tau=0.1


def test_fixed_point_equals_rm_times_current():
    # dt/tau = 0.5: contraction 0.5 per step, 20 steps shrink 0.2 to 2e-7
    p = init_reservoir(seed=2, k=2, n=4, out_dim=2, dt=0.5, tau_m=1.0,
                       dtype=np.float64)
    p.w.data[:] = 0.0
    p.w_in.data[:] = 0.0
    p.w_in.data[:, 0] = 0.2  # constant current 0.2 per neuron from u=[1,0]
    u = np.array([1.0, 0.0])
    state = RecurrentState("reservoir", Tensor(np.full((1, 4), 0.4)))
    steps = int(10 * p.tau_m / p.dt)
    for _ in range(steps):
        state, _ = reservoir_step(u, state, p)
    assert np.max(np.abs(state.value.data - 0.2)) < 1e-6


def echo_state_gap(rho, seed=3, steps=200):
    p = init_reservoir(seed=seed, k=8, n=32, out_dim=4,
                       spectral_radius=rho, dt=0.5, tau_m=1.0,
                       dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    us = rng.standard_normal((steps, 8))
    s1 = RecurrentState("reservoir", Tensor(rng.standard_normal((1, 32))))
    s2 = RecurrentState("reservoir", Tensor(rng.standard_normal((1, 32))))
    for t in range(steps):
        s1, _ = reservoir_step(us[t], s1, p)
        s2, _ = reservoir_step(us[t], s2, p)
        if not np.all(np.isfinite(s1.value.data)):
            return np.inf
    return float(np.max(np.abs(s1.value.data - s2.value.data)))


def test_echo_state_property_and_contrast():
    assert echo_state_gap(0.9) < 1e-3
    failing = echo_state_gap(1.5)
    assert not (failing < 1e-3)


def test_fading_memory_with_computable_horizon():
    # default dt/tau = 0.1; horizon from the actual contraction factor
    p = init_reservoir(seed=6, k=4, n=32, out_dim=4, dtype=np.float64)
    alpha = p.dt / p.tau_m
    m = (1 - alpha) * np.eye(32) + alpha * p.r_m * p.w.data
    rate = spectral_radius(m)
    assert rate < 1
    delta0 = 1.0
    horizon = int(np.ceil(np.log(1e-6 / delta0) / np.log(rate))) + 200

    rng = np.random.default_rng(7)
    us = rng.standard_normal((horizon, 4))
    s1 = RecurrentState("reservoir", Tensor(np.zeros((1, 32))))
    pert = np.zeros((1, 32))
    pert[0, 0] = delta0
    s2 = RecurrentState("reservoir", Tensor(pert))
    for t in range(horizon):
        s1, _ = reservoir_step(us[t], s1, p)
        s2, _ = reservoir_step(us[t], s2, p)
    assert np.max(np.abs(s1.value.data - s2.value.data)) < 1e-6


def test_divergent_state_detected():
    p = init_reservoir(seed=8, k=2, n=4, out_dim=2)
    bad = RecurrentState("reservoir", Tensor(np.array([[np.nan, 0, 0, 0.0]])))
    with pytest.raises(FloatingPointError):
        reservoir_step(np.zeros(2), bad, p)


def test_reservoir_bptt_gradients_match_fd():
    p = init_reservoir(seed=9, k=6, n=10, out_dim=5, dtype=np.float64)
    rng = np.random.default_rng(9)
    us = rng.standard_normal((3, 6))

    def run(w_out_data, u_data):
        pp = ReservoirParams(
            w_in=p.w_in, w=p.w,
            w_out=Tensor(w_out_data, requires_grad=True),
            dt=p.dt, tau_m=p.tau_m)
        state = init_reservoir_state(pp, dtype=np.float64)
        leaves = [Tensor(u_data[t], requires_grad=True) for t in range(3)]
        acc = None
        for t in range(3):
            state, out = reservoir_step(leaves[t], state, pp)
            s = ad.sum_(out * Tensor(np.arange(1.0, 6.0)))
            acc = s if acc is None else acc + s
        return acc, pp.w_out, leaves

    loss, w_out_leaf, u_leaves = run(p.w_out.data.copy(), us)
    loss.backward()

    eps = 1e-6
    # a few W_out entries
    for fi in [0, 7, 23, 49]:
        wd = p.w_out.data.copy()
        wd.ravel()[fi] += eps
        fp = float(run(wd, us)[0].data)
        wd.ravel()[fi] -= 2 * eps
        fm = float(run(wd, us)[0].data)
        num = (fp - fm) / (2 * eps)
        ana = w_out_leaf.grad.ravel()[fi]
        assert abs(num - ana) / max(abs(num), abs(ana), 1e-8) < 1e-4
    # input gradient through time
    for t, fi in [(0, 2), (1, 4)]:
        ud = us.copy()
        ud[t].ravel()[fi] += eps
        fp = float(run(p.w_out.data.copy(), ud)[0].data)
        ud[t].ravel()[fi] -= 2 * eps
        fm = float(run(p.w_out.data.copy(), ud)[0].data)
        num = (fp - fm) / (2 * eps)
        ana = u_leaves[t].grad.ravel()[fi]
        assert abs(num - ana) / max(abs(num), abs(ana), 1e-8) < 1e-4


def test_fixed_matrices_get_no_gradient():
    p = init_reservoir(seed=10, k=4, n=6, out_dim=3, dtype=np.float64)
    state = init_reservoir_state(p, dtype=np.float64)
    state, out = reservoir_step(np.ones(4), state, p)
    ad.sum_(out).backward()
    assert p.w.grad is None and p.w_in.grad is None
    assert p.w_out.grad is not None


def test_reservoir_step_pure():
    p = init_reservoir(seed=11, k=4, n=6, out_dim=3)
    state = init_reservoir_state(p)
    u = np.ones(4, dtype=np.float32)
    s1, o1 = reservoir_step(u, state, p)
    s2, o2 = reservoir_step(u, state, p)
    assert np.array_equal(s1.value.data, s2.value.data)
    assert np.array_equal(o1.data, o2.data)


def test_spiking_mode_fires_and_resets():
    p = init_reservoir(seed=12, k=2, n=3, out_dim=2, dt=0.5, tau_m=1.0,
                       mode="spiking-surrogate", dtype=np.float64)
    p.w.data[:] = 0.0
    p.w_in.data[:] = 3.0  # drive hard over threshold
    state = RecurrentState("reservoir", Tensor(np.full((1, 3), 0.9)))
    new, _ = reservoir_step(np.ones(2), state, p)
    # V_pre = 0.9*0.5 + 0.5*6 = 3.45 >= threshold 1.0 -> reset to 0
    assert np.allclose(new.value.data, p.v_reset)


# ------------------------------------------------------------- ConvGRU

def test_convgru_zero_everything_stays_zero():
    p = init_convgru(seed=0, channels=4, dtype=np.float64)
    for name, t in p.tensors().items():
        t.data[:] = 0.0
    st = init_convgru_state(4, 5, 6, dtype=np.float64)
    x = Tensor(np.zeros((1, 4, 5, 6)))
    new, out = convgru_step(x, st, p)
    assert np.all(new.value.data == 0.0)


def test_convgru_update_gate_limits():
    rng = np.random.default_rng(3)
    p = init_convgru(seed=3, channels=3, dtype=np.float64)
    h0 = rng.standard_normal((1, 3, 4, 4))
    x = Tensor(rng.standard_normal((1, 3, 4, 4)))

    # z ~ 1: new state approx h_tilde
    p.bz.data[:] = 20.0
    st = RecurrentState("convgru", Tensor(h0.copy()))
    new, _ = convgru_step(x, st, p)
    hx = np.concatenate([h0, x.data], axis=1)
    # recompute h_tilde with the same params
    r = 1 / (1 + np.exp(-(_conv_np(hx, p.wr.data) + p.br.data[:, None, None])))
    rhx = np.concatenate([r * h0, x.data], axis=1)
    h_tilde = np.tanh(_conv_np(rhx, p.wh.data) + p.bh.data[:, None, None])
    assert np.max(np.abs(new.value.data - h_tilde)) < 1e-6

    # z ~ 0: new state equals old state
    p.bz.data[:] = -20.0
    st = RecurrentState("convgru", Tensor(h0.copy()))
    new, _ = convgru_step(x, st, p)
    assert np.max(np.abs(new.value.data - h0)) < 1e-6


def _conv_np(x, w):
    from thermodepth import autodiff as ad
    return ad.conv2d(Tensor(x), Tensor(w), padding=1).data[0]


def test_convgru_shape_mismatch_rejected():
    p = init_convgru(seed=4, channels=2)
    st = init_convgru_state(2, 4, 4)
    with pytest.raises(ValueError):
        convgru_step(Tensor(np.zeros((1, 2, 4, 5), np.float32)), st, p)


def test_convgru_gradients_match_fd():
    p = init_convgru(seed=5, channels=2, dtype=np.float64)
    rng = np.random.default_rng(5)
    xs = rng.standard_normal((2, 1, 2, 4, 4))
    probe = rng.standard_normal((1, 2, 4, 4))

    def run(params):
        st = init_convgru_state(2, 4, 4, dtype=np.float64)
        for t in range(2):
            st, out = convgru_step(Tensor(xs[t]), st, params)
        return ad.sum_(out * Tensor(probe))

    loss = run(p)
    loss.backward()
    eps = 1e-6
    for tname, tens in p.tensors().items():
        flat = tens.data.ravel()
        for fi in [0, flat.size // 2]:
            orig = flat[fi]
            flat[fi] = orig + eps
            fp = float(run(p).data)
            flat[fi] = orig - eps
            fm = float(run(p).data)
            flat[fi] = orig
            num = (fp - fm) / (2 * eps)
            ana = tens.grad.ravel()[fi]
            assert abs(num - ana) / max(abs(num), abs(ana), 1e-7) < 1e-4, tname
