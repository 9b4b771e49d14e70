"""Discrete-time neuron kernels: LIF with soft reset, adaptation, LN traces.

All state variables decay by exp(-dt/tau) per step (exponential Euler, exact
for the homogeneous part), with spike and synaptic input added undecayed
within the same step. Spikes are unit impulses per 1-ms bin. Kernels are
pure functions of (state, input) and broadcast over any array shape; dtype
follows the state arrays, so the same code serves float32 batch simulation
and float64 oracle checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NeuronParams:
    """Membrane constants for one layer of LIF units with soft reset."""

    tau_m: float = 10.0  # ms
    v_th: float = 0.8    # 1.2 for the readout layer
    dt: float = 1.0      # ms
    i_bias: float = 0.0

    def __post_init__(self):
        if self.tau_m <= 0 or self.dt <= 0:
            raise ConfigError("tau_m and dt must be positive")
        if self.v_th <= 0:
            raise ConfigError("v_th must be positive")

    @property
    def beta(self) -> float:
        return math.exp(-self.dt / self.tau_m)


def lif_step(v_prev, i_total, params: NeuronParams):
    """One integrate-and-fire step.

    u_pre = beta*v_prev + i_total; a unit spikes when u_pre >= v_th (ties
    spike) and its potential is reduced by v_th, not zeroed. Returns
    (v_new, spike, u_pre); u_pre is exposed because the training backward
    evaluates the surrogate at u_pre - v_th. Non-finite inputs propagate.
    """
    u = np.asarray(params.beta * v_prev + i_total)
    spike = (u >= params.v_th).astype(u.dtype)
    v = u - params.v_th * spike
    return v, spike, u


@dataclass(frozen=True)
class SFAConfig:
    """Spike-triggered adaptation: per-spike increment, exponential decay."""

    tau_sfa: float = 50.0  # ms
    w_sfa: float = 0.0     # <= 0; the current is inhibitory by construction
    dt: float = 1.0

    def __post_init__(self):
        if self.tau_sfa <= 0 or self.dt <= 0:
            raise ConfigError("tau_sfa and dt must be positive")
        if self.w_sfa > 0:
            raise ConfigError(f"w_sfa must be <= 0, got {self.w_sfa}")

    @property
    def alpha(self) -> float:
        return math.exp(-self.dt / self.tau_sfa)


def sfa_update(a, spikes, config: SFAConfig):
    """Accumulator update A <- alpha*A + spikes (per neuron)."""
    return config.alpha * np.asarray(a) + spikes


def sfa_current(a, w_sfa: float):
    """Adaptation current w_sfa * A, elementwise and never positive."""
    if w_sfa > 0:
        raise ConfigError(f"w_sfa must be <= 0, got {w_sfa}")
    return w_sfa * np.asarray(a)


@dataclass(frozen=True)
class LIConfig:
    """Decay constant of the spike-triggered LN traces."""

    tau_trace: float = 5.0  # ms
    dt: float = 1.0

    def __post_init__(self):
        if self.tau_trace <= 0 or self.dt <= 0:
            raise ConfigError("tau_trace and dt must be positive")

    @property
    def alpha(self) -> float:
        return math.exp(-self.dt / self.tau_trace)


def li_trace_update(trace, ln_spikes, config: LIConfig):
    """Trace update T <- alpha*T + ln_spikes (per LN)."""
    return config.alpha * np.asarray(trace) + ln_spikes


def li_current(trace, w_ln_pn: np.ndarray):
    """Inhibitory current onto each PN: sum_k w_ln_pn[pn, k] * T[k].

    `trace` may carry leading batch dimensions; w_ln_pn is [n_pn, n_ln]
    with non-positive entries.
    """
    if np.any(w_ln_pn > 0):
        j, k = np.argwhere(w_ln_pn > 0)[0]
        raise ConfigError(f"w_ln_pn[{j},{k}] is positive")
    return np.asarray(trace) @ w_ln_pn.T


@dataclass(frozen=True)
class SurrogateParams:
    """Constants of the smooth stand-in for the Heaviside derivative."""

    k1: float = 1.0
    k2: float = 2.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError("k1 and k2 must be positive")


def surrogate_grad(u, params: SurrogateParams = SurrogateParams()):
    """k1 / (1 + (k2*u)^2): even in u, peak k1 at u = 0."""
    x = params.k2 * np.asarray(u)
    return params.k1 / (1.0 + x * x)
