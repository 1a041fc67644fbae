"""The two interchangeable recurrent bottleneck blocks.

The reservoir path is an echo-state network realized with leaky
integrate-and-fire dynamics: fixed random input weights W_in (N x K), a
fixed sign-structured recurrent matrix W (N x N, excitatory columns
nonnegative, inhibitory columns nonpositive, rescaled to a target spectral
radius), and a trainable linear readout W_out. The membrane update is the
Euler step V <- V + (dt/tau_m)(-V + R_m I) with I = W_in u + W r(V_prev).
In the default leaky-integrator mode r is the identity and everything is
differentiable; spiking-surrogate mode fires hard threshold spikes forward
and uses a fast-sigmoid surrogate slope backward, with a detached reset.

The ConvGRU path is the standard gated formulation with 3x3 convolutions
on the bottleneck grid. Both blocks expose pure step functions: same
(input, state, params) in, same state out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_STREAM_RESERVOIR = 5
_STREAM_CONVGRU = 6


@dataclass
class ReservoirParams:
    """Fixed reservoir matrices plus the trainable readout.

    W_in and W never receive gradients. f names the rate-form state
    nonlinearity of the classic ESN formulation; the leaky-integrator
    realization replaces it with membrane integration, so it is recorded
    for config completeness only. f_out is applied to the readout.
    """

    w_in: Tensor
    w: Tensor
    w_out: Tensor
    tau_m: float = 1.0
    r_m: float = 1.0
    dt: float = 0.1
    exc_fraction: float = 0.8
    spectral_radius_target: float = 0.9
    f: str = "sigmoid"
    f_out: str = "tanh"
    v_threshold: float = 1.0
    v_reset: float = 0.0
    mode: str = "leaky-integrator"

    def __post_init__(self):
        if self.tau_m <= 0 or self.dt <= 0:
            raise ValueError("tau_m and dt must be positive")
        if self.dt > self.tau_m:
            raise ValueError("dt must not exceed tau_m (Euler stability)")
        if self.mode not in ("leaky-integrator", "spiking-surrogate"):
            raise ValueError(f"unknown reservoir mode {self.mode!r}")

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.w_in.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_out.shape[0]


@dataclass
class RecurrentState:
    """Hidden state of the active recurrent block for one sequence."""

    kind: str  # convgru | reservoir | none
    value: Optional[Tensor] = None

    def __post_init__(self):
        if self.kind not in ("convgru", "reservoir", "none"):
            raise ValueError(f"unknown recurrent kind {self.kind!r}")


def init_reservoir(seed, k: int = 128, n: int = 32, out_dim: int = 64,
                   spectral_radius: float = 0.9, exc_fraction: float = 0.8,
                   tau_m: float = 1.0, r_m: float = 1.0, dt: float = 0.1,
                   mode: str = "leaky-integrator",
                   dtype=np.float32) -> ReservoirParams:
    """Draw the fixed matrices and scale W to the target spectral radius.

    round(exc_fraction * n) columns are made elementwise nonnegative
    (excitatory), the rest nonpositive. A degenerate draw with zero
    spectral radius is redrawn, at most 5 times.
    """
    rng = np.random.default_rng([seed, _STREAM_RESERVOIR])
    w_in = rng.normal(0.0, 1.0 / np.sqrt(k), (n, k))

    n_exc = int(round(exc_fraction * n))
    w = None
    for _ in range(5):
        cand = rng.normal(0.0, 1.0, (n, n))
        cand[:, :n_exc] = np.abs(cand[:, :n_exc])
        cand[:, n_exc:] = -np.abs(cand[:, n_exc:])
        rho = float(np.max(np.abs(np.linalg.eigvals(cand))))
        if rho > 0:
            w = cand * (spectral_radius / rho)
            break
    if w is None:
        raise ValueError("degenerate reservoir draw: zero spectral radius "
                         "after 5 attempts")

    w_out = rng.normal(0.0, 0.01, (out_dim, n))
    return ReservoirParams(
        w_in=Tensor(w_in.astype(dtype)),
        w=Tensor(w.astype(dtype)),
        w_out=Tensor(w_out.astype(dtype), requires_grad=True),
        tau_m=tau_m, r_m=r_m, dt=dt, exc_fraction=exc_fraction,
        spectral_radius_target=spectral_radius, mode=mode)


def init_reservoir_state(params: ReservoirParams, batch: int = 1,
                         dtype=None) -> RecurrentState:
    dtype = dtype or params.w.dtype
    return RecurrentState(kind="reservoir",
                          value=Tensor(np.zeros((batch, params.n), dtype)))


def reservoir_step(u, state: RecurrentState, params: ReservoirParams):
    """One membrane update; returns (new state, readout output).

    u is (B, K) or (K,); the state value is (B, N). Non-finite membrane
    potentials raise, catching divergence early.
    """
    squeeze = False
    if not isinstance(u, Tensor):
        u = Tensor(np.asarray(u))
    if u.ndim == 1:
        u = ad.reshape(u, 1, u.shape[0])
        squeeze = True
    v = state.value
    if v is None:
        raise ValueError("reservoir state is uninitialized")
    if not np.all(np.isfinite(v.data)):
        raise FloatingPointError("reservoir state diverged (non-finite)")
    if u.shape[1] != params.k:
        raise ValueError(f"input size {u.shape[1]} != K={params.k}")

    r = v if params.mode == "leaky-integrator" \
        else ad.spike_surrogate(v, params.v_threshold)
    current = u @ ad.transpose(params.w_in) + r @ ad.transpose(params.w)
    alpha = params.dt / params.tau_m
    v_new = v * (1.0 - alpha) + current * (alpha * params.r_m)
    if params.mode == "spiking-surrogate":
        fired = (v_new.data >= params.v_threshold).astype(v_new.dtype)
        # hard reset on the fired units; the reset path carries no gradient
        v_new = v_new * Tensor(1.0 - fired) + Tensor(fired * params.v_reset)

    out = v_new @ ad.transpose(params.w_out)
    if params.f_out == "tanh":
        out = ad.tanh(out)
    elif params.f_out != "identity":
        raise ValueError(f"unknown f_out {params.f_out!r}")
    if squeeze:
        out = ad.reshape(out, out.shape[1])
        return RecurrentState("reservoir", v_new), out
    return RecurrentState("reservoir", v_new), out


@dataclass
class ConvGRUParams:
    """Gate convolutions of the ConvGRU bottleneck (all trainable)."""

    wz: Tensor
    bz: Tensor
    wr: Tensor
    br: Tensor
    wh: Tensor
    bh: Tensor
    channels: int = field(default=0)

    def tensors(self) -> dict:
        return {"convgru.wz": self.wz, "convgru.bz": self.bz,
                "convgru.wr": self.wr, "convgru.br": self.br,
                "convgru.wh": self.wh, "convgru.bh": self.bh}


def init_convgru(seed, channels: int, dtype=np.float32) -> ConvGRUParams:
    rng = np.random.default_rng([seed, _STREAM_CONVGRU])
    std = np.sqrt(1.0 / (2 * channels * 9))

    def conv(out_ch):
        w = rng.normal(0, std, (out_ch, 2 * channels, 3, 3)).astype(dtype)
        return (Tensor(w, requires_grad=True),
                Tensor(np.zeros(out_ch, dtype), requires_grad=True))

    wz, bz = conv(channels)
    wr, br = conv(channels)
    wh, bh = conv(channels)
    return ConvGRUParams(wz=wz, bz=bz, wr=wr, br=br, wh=wh, bh=bh,
                         channels=channels)


def init_convgru_state(channels: int, height: int, width: int,
                       batch: int = 1, dtype=np.float32) -> RecurrentState:
    zeros = np.zeros((batch, channels, height, width), dtype)
    return RecurrentState(kind="convgru", value=Tensor(zeros))


def convgru_step(x: Tensor, state: RecurrentState, params: ConvGRUParams):
    """Gated update on the bottleneck grid; returns (new state, output)."""
    h = state.value
    if h is None:
        raise ValueError("convgru state is uninitialized")
    if h.shape != x.shape:
        raise ValueError(f"state shape {h.shape} != input {x.shape}")
    hx = ad.concat([h, x], axis=1)
    z = ad.sigmoid(ad.conv2d(hx, params.wz, params.bz, padding=1))
    r = ad.sigmoid(ad.conv2d(hx, params.wr, params.br, padding=1))
    rhx = ad.concat([r * h, x], axis=1)
    h_tilde = ad.tanh(ad.conv2d(rhx, params.wh, params.bh, padding=1))
    h_new = (-z + 1.0) * h + z * h_tilde
    return RecurrentState("convgru", h_new), h_new
