"""Full-trial simulation of the olfactory circuit and rate calibration.

One trial is a silent baseline followed by a constant (or OU-perturbed) odor
drive. Within a timestep the layers update in the fixed order
ORN -> LN -> PN -> KC -> MBON with no synaptic delay: LNs and PNs consume
the current step's ORN spikes, PNs see the LN trace already updated with
this step's LN spikes, and so on down to the readout. Adaptation currents
use the accumulator state carried over from the previous step (a neuron
cannot be inhibited by a spike it has not fired yet).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .circuit import CircuitConfig, WeightSet
from .dynamics import LIConfig, NeuronParams, SFAConfig, lif_step
from .errors import CalibrationError, ConfigError
from .odor_data import DatasetConfig, OdorSample, ou_noise_matrix

MBON_V_TH = 1.2   # 1.5x the common 0.8 threshold; damps the dense KC drive

GAIN_GRID = tuple(round(1.0 + 0.05 * i, 2) for i in range(21))   # 1.00 .. 2.00
BIAS_GRID = tuple(round(0.01 * j, 2) for j in range(51))         # 0.00 .. 0.50


@dataclass(frozen=True)
class TrialProtocol:
    """Trial timing; the evaluation window equals the stimulus window."""

    t_baseline: float = 10.0  # ms
    t_stim: float = 30.0      # ms
    dt: float = 1.0           # ms

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        for name in ("t_baseline", "t_stim"):
            t = getattr(self, name)
            if t < 0 or abs(t / self.dt - round(t / self.dt)) > 1e-9:
                raise ConfigError(f"{name} must be a non-negative multiple of dt")
        if self.t_stim <= 0:
            raise ConfigError("stimulus window must be non-empty")

    @property
    def n_baseline(self) -> int:
        return round(self.t_baseline / self.dt)

    @property
    def n_stim(self) -> int:
        return round(self.t_stim / self.dt)

    @property
    def n_total(self) -> int:
        return self.n_baseline + self.n_stim


@dataclass
class TrialRecording:
    """Everything the trainer and metrics need from one trial.

    MBON traces cover the whole trial (baseline included) so the backward
    sweep can start from t = 0; `eval_start`/`eval_stop` delimit the rows
    that enter the readout average.
    """

    mbon_v: np.ndarray        # [n_total, n_mbon] post-reset potentials
    mbon_u: np.ndarray        # [n_total, n_mbon] pre-reset potentials
    mbon_spikes: np.ndarray   # [n_total, n_mbon] uint8
    kc_spikes: np.ndarray     # [n_total, n_kc] uint8
    spike_counts: dict[str, int]
    kc_coding_level: float    # fraction of KCs with >= 1 spike during stimulus
    eval_start: int
    eval_stop: int


class BatchResult:
    """Lean per-batch outputs; fields are None unless their record level asks."""

    __slots__ = ("mean_v", "kc_coding", "mbon_u", "mbon_v", "mbon_spikes",
                 "kc_spikes", "spike_counts", "pn_rate")

    def __init__(self):
        self.mean_v = None
        self.kc_coding = None
        self.mbon_u = None
        self.mbon_v = None
        self.mbon_spikes = None
        self.kc_spikes = None
        self.spike_counts = None
        self.pn_rate = None


def _resolve_mechanisms(config: CircuitConfig, dt: float):
    gain = config.resolved_gain()
    bias = config.resolved_bias()
    sfa = SFAConfig(dt=dt, w_sfa=config.sfa_weight) if config.enable_sfa else None
    li = LIConfig(dt=dt) if config.enable_li else None
    return gain, bias, sfa, li


def forward_batch(
    x: np.ndarray,
    weights: WeightSet,
    config: CircuitConfig,
    protocol: TrialProtocol,
    *,
    ou_noise: np.ndarray | None = None,
    record: str = "mean",
    dtype=np.float32,
    params: NeuronParams | None = None,
    mbon_params: NeuronParams | None = None,
) -> BatchResult:
    """Simulate a batch of trials from zero-initialized state.

    x: [batch, n_orn] static receptor intensities (already clipped).
    ou_noise: optional [batch, n_stim, n_orn] additive noise, re-clipped
    against zero together with x at every stimulus step.
    record: "mean" (readout average + coding level), "train" (adds full MBON
    traces and the KC raster), "full" (adds per-layer spike counts), or
    "pn_rate" (PN layer only, for calibration).
    """
    config.validate()
    if x.ndim != 2 or x.shape[1] != config.n_orn:
        raise ConfigError(f"batch shape {x.shape} incompatible with n_orn={config.n_orn}")
    if record not in ("mean", "train", "full", "pn_rate"):
        raise ConfigError(f"unknown record level {record!r}")

    p = params or NeuronParams(dt=protocol.dt)
    pm = mbon_params or NeuronParams(dt=protocol.dt, v_th=MBON_V_TH)
    gain, bias, sfa, li = _resolve_mechanisms(config, protocol.dt)

    B = x.shape[0]
    nb, T = protocol.n_baseline, protocol.n_total
    x = x.astype(dtype, copy=False)
    if ou_noise is not None:
        if ou_noise.shape != (B, protocol.n_stim, config.n_orn):
            raise ConfigError(f"ou_noise shape {ou_noise.shape} mismatches protocol/batch")
        ou_noise = ou_noise.astype(dtype, copy=False)

    w_orn_ln_t = weights.w_orn_ln.T.astype(dtype, copy=False)
    w_ln_pn_t = weights.w_ln_pn.T.astype(dtype, copy=False)
    if np.any(weights.w_ln_pn > 0):
        raise ConfigError("w_ln_pn has positive entries")
    dense_pn_kc = weights.dense_pn_kc(dtype)
    w_kc_mbon_t = weights.w_kc_mbon.T.astype(dtype, copy=False)

    v_orn = np.zeros((B, config.n_orn), dtype)
    v_ln = np.zeros((B, config.n_ln), dtype)
    v_pn = np.zeros((B, config.n_pn), dtype)
    v_kc = np.zeros((B, config.n_kc), dtype)
    v_mbon = np.zeros((B, config.n_mbon), dtype)
    a_pn = np.zeros((B, config.n_pn), dtype) if sfa else None
    a_ln = np.zeros((B, config.n_ln), dtype) if sfa else None
    a_kc = np.zeros((B, config.n_kc), dtype) if sfa else None
    trace = np.zeros((B, config.n_ln), dtype) if li else None

    out = BatchResult()
    heavy = record in ("train", "full")
    if heavy:
        out.mbon_u = np.empty((B, T, config.n_mbon), dtype)
        out.mbon_spikes = np.empty((B, T, config.n_mbon), np.uint8)
        out.kc_spikes = np.empty((B, T, config.n_kc), np.uint8)
        if record == "full":
            out.mbon_v = np.empty((B, T, config.n_mbon), dtype)
    if record == "full":
        counts = {name: 0 for name in ("orn", "ln", "pn", "kc", "mbon")}
    mean_acc = np.zeros((B, config.n_mbon), np.float64) if record != "pn_rate" else None
    kc_any = np.zeros((B, config.n_kc), bool) if record != "pn_rate" else None
    pn_spike_sum = 0.0

    zero_drive = np.zeros((B, config.n_orn), dtype)
    for t in range(T):
        if t < nb:
            i_orn = zero_drive
        else:
            drive = x if ou_noise is None else np.maximum(x + ou_noise[:, t - nb], dtype(0.0))
            i_orn = config.orn_gain * drive
        v_orn, s_orn, _ = lif_step(v_orn, i_orn, p)

        i_ln = s_orn @ w_orn_ln_t + bias
        if sfa:
            i_ln = i_ln + sfa.w_sfa * a_ln
        v_ln, s_ln, _ = lif_step(v_ln, i_ln, p)
        if sfa:
            a_ln = sfa.alpha * a_ln + s_ln
        if li:
            trace = li.alpha * trace + s_ln

        i_pn = (gain * weights.w_orn_pn_gain) * s_orn + bias
        if li:
            i_pn = i_pn + trace @ w_ln_pn_t
        if sfa:
            i_pn = i_pn + sfa.w_sfa * a_pn
        v_pn, s_pn, _ = lif_step(v_pn, i_pn, p)
        if sfa:
            a_pn = sfa.alpha * a_pn + s_pn
        if record == "pn_rate":
            if t >= nb:
                pn_spike_sum += float(s_pn.sum())
            continue

        i_kc = s_pn @ dense_pn_kc
        if sfa:
            i_kc = i_kc + sfa.w_sfa * a_kc
        v_kc, s_kc, _ = lif_step(v_kc, i_kc, p)
        if sfa:
            a_kc = sfa.alpha * a_kc + s_kc

        i_mbon = s_kc @ w_kc_mbon_t
        v_mbon, s_mbon, u_mbon = lif_step(v_mbon, i_mbon, pm)

        if t >= nb:
            mean_acc += v_mbon
            kc_any |= s_kc > 0
        if heavy:
            out.mbon_u[:, t] = u_mbon
            out.mbon_spikes[:, t] = s_mbon.astype(np.uint8)
            out.kc_spikes[:, t] = s_kc.astype(np.uint8)
            if record == "full":
                out.mbon_v[:, t] = v_mbon
        if record == "full":
            for name, s in (("orn", s_orn), ("ln", s_ln), ("pn", s_pn),
                            ("kc", s_kc), ("mbon", s_mbon)):
                counts[name] += int(s.sum())

    if record == "pn_rate":
        out.pn_rate = pn_spike_sum / (B * config.n_pn * protocol.n_stim)
        return out
    out.mean_v = (mean_acc / protocol.n_stim).astype(np.float64)
    out.kc_coding = kc_any.mean(axis=1)
    if record == "full":
        out.spike_counts = counts
    return out


def run_trial(
    sample: OdorSample,
    weights: WeightSet,
    config: CircuitConfig,
    protocol: TrialProtocol,
    *,
    dataset_config: DatasetConfig | None = None,
    dtype=np.float32,
    params: NeuronParams | None = None,
    mbon_params: NeuronParams | None = None,
) -> TrialRecording:
    """Simulate one sample with full recording.

    OU samples need `dataset_config` to realize their noise trajectory.
    """
    if sample.intensities.shape != (config.n_orn,):
        raise ConfigError(
            f"sample has {sample.intensities.shape[0]} channels, config expects {config.n_orn}"
        )
    ou = None
    if sample.noise_stream_key is not None:
        if dataset_config is None:
            raise ConfigError("OU sample requires dataset_config to realize noise")
        ou = ou_noise_matrix(
            sample.noise_stream_key, protocol.n_stim, config.n_orn,
            dataset_config.noise_intensity, dataset_config.ou_theta,
        )[None, :, :]
    res = forward_batch(
        sample.intensities[None, :], weights, config, protocol,
        ou_noise=ou, record="full", dtype=dtype,
        params=params, mbon_params=mbon_params,
    )
    return TrialRecording(
        mbon_v=res.mbon_v[0],
        mbon_u=res.mbon_u[0],
        mbon_spikes=res.mbon_spikes[0],
        kc_spikes=res.kc_spikes[0],
        spike_counts=res.spike_counts,
        kc_coding_level=float(res.kc_coding[0]),
        eval_start=protocol.n_baseline,
        eval_stop=protocol.n_total,
    )


def mean_mbon_potential(rec: TrialRecording) -> np.ndarray:
    """Arithmetic mean of the post-reset MBON potentials over the window."""
    if rec.eval_stop <= rec.eval_start:
        raise ConfigError("evaluation window is empty")
    return rec.mbon_v[rec.eval_start:rec.eval_stop].mean(axis=0)


def _pn_rate(
    x, weights, config, protocol, gain: float, bias: float, dtype
) -> float:
    cfg = replace(config, pn_li_compensation_gain=gain if config.enable_li else None,
                  pn_ln_sfa_bias=bias if config.enable_sfa else None)
    res = forward_batch(x, weights, cfg, protocol, record="pn_rate", dtype=dtype)
    return res.pn_rate


def calibrate_compensation(
    config: CircuitConfig,
    weights: WeightSet,
    calibration_batch: np.ndarray,
    protocol: TrialProtocol | None = None,
    *,
    tolerance: float = 0.05,
    dtype=np.float32,
) -> tuple[float, float]:
    """Smallest (gain, bias) on the fixed grids matching the baseline PN rate.

    The target is the mean PN firing rate over the stimulus window on
    `calibration_batch` with both mechanisms disabled; the search accepts
    the first candidate within `tolerance` (relative). Gain compensates LI
    only, bias compensates SFA only; with both enabled the product grid is
    scanned smallest-gain-first, then smallest-bias.
    """
    protocol = protocol or TrialProtocol()
    if not config.enable_li and not config.enable_sfa:
        return 1.0, 0.0
    base_cfg = replace(
        config, enable_li=False, enable_sfa=False,
        pn_li_compensation_gain=None, pn_ln_sfa_bias=None,
    )
    base = forward_batch(
        calibration_batch, weights, base_cfg, protocol, record="pn_rate", dtype=dtype
    ).pn_rate

    if not config.enable_li:
        gains = (1.0,)
    elif config.pn_li_compensation_gain is not None:
        gains = (config.pn_li_compensation_gain,)
    else:
        gains = GAIN_GRID
    if not config.enable_sfa:
        biases = (0.0,)
    elif config.pn_ln_sfa_bias is not None:
        biases = (config.pn_ln_sfa_bias,)
    else:
        biases = BIAS_GRID
    best = (math.inf, 1.0, 0.0)
    for g in gains:
        for b in biases:
            rate = _pn_rate(calibration_batch, weights, config, protocol, g, b, dtype)
            err = abs(rate - base)
            ok = err <= tolerance * base if base > 0 else rate == 0.0
            if ok:
                return g, b
            if err < best[0]:
                best = (err, g, b)
    raise CalibrationError(
        f"no grid point matches baseline PN rate {base:.6f} within "
        f"{tolerance:.0%}; best gain={best[1]}, bias={best[2]} "
        f"missed by {best[0]:.6f}"
    )


def calibrated_config(
    config: CircuitConfig,
    weights: WeightSet,
    calibration_batch: np.ndarray,
    protocol: TrialProtocol | None = None,
) -> CircuitConfig:
    """Fill in any unset compensation terms; no-op when already concrete."""
    need_gain = config.enable_li and config.pn_li_compensation_gain is None
    need_bias = config.enable_sfa and config.pn_ln_sfa_bias is None
    if not need_gain and not need_bias:
        return config
    gain, bias = calibrate_compensation(config, weights, calibration_batch, protocol)
    return config.with_compensation(
        gain if config.enable_li else None,
        bias if config.enable_sfa else None,
    )
