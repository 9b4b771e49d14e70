"""Training of the KC->MBON readout by surrogate-gradient BPTT.

The loss is a softmax cross-entropy on the time-averaged post-reset MBON
potentials over the evaluation window. Because only the KC->MBON weights
are learnable, upstream spike trains are constants and the backward pass is
an exact hand-derived reverse sweep of the MBON recurrence

    u[t] = beta * v[t-1] + W @ s_kc[t]
    s[t] = H(u[t] - v_th)
    v[t] = u[t] - v_th * s[t]

with d v[t] / d u[t] = 1 - v_th * s[t] * sigma'(u[t] - v_th). Gating the
reset derivative by the recorded spike keeps spike-free trials exactly
equal to the linear-recurrence gradient (checked against central finite
differences); at steps that actually spiked, the Heaviside kink is smoothed
by the arctan-style surrogate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .circuit import CircuitConfig, WeightSet, build_topology, validate_weights
from .dynamics import NeuronParams, SurrogateParams, surrogate_grad
from .errors import ConfigError, TrainingDivergedError
from .odor_data import OdorDataset
from .rng import stream
from .simulator import (
    MBON_V_TH,
    TrialProtocol,
    TrialRecording,
    calibrated_config,
    forward_batch,
)

EVAL_CHUNK = 256          # fixed eval chunking so worker count cannot change floats
CALIBRATION_SAMPLES = 128


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float = 1e-5
    scheduler_factor: float = 0.2
    scheduler_patience: int = 10
    convergence_window: int = 10
    convergence_threshold: float = 0.003
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ConfigError("scheduler_factor must be in (0, 1)")
        if self.scheduler_patience < 1:
            raise ConfigError("scheduler_patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0, 1)")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.convergence_window < 1:
            raise ConfigError("convergence_window must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, w: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(w), np.zeros_like(w), 0)

    def clone(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    convergence_epoch: int | None = None
    accuracy_gain_per_epoch: float = 0.0
    kc_coding_level: float = 0.0

    def epoch_rows(self) -> list[dict]:
        return [
            {
                "epoch": e,
                "train_loss": self.train_loss[e],
                "val_acc": self.val_acc[e],
                "test_acc": self.test_acc[e],
                "lr": self.lr[e],
            }
            for e in range(len(self.train_loss))
        ]


def softmax_xent(mean_v: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable cross-entropy loss and its gradient w.r.t. the mean potentials."""
    if not 0 <= label < mean_v.shape[-1]:
        raise ConfigError(f"label {label} out of range")
    z = np.asarray(mean_v, np.float64)
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    loss = -math.log(p[label])
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad


def softmax_xent_batch(
    mean_v: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and per-sample gradients (not batch-scaled)."""
    z = np.asarray(mean_v, np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    idx = np.arange(len(labels))
    loss = float(-np.log(p[idx, labels]).mean())
    grad = p
    grad[idx, labels] -= 1.0
    return loss, grad


def backward_through_time(
    mbon_u: np.ndarray,
    mbon_spikes: np.ndarray,
    kc_spikes: np.ndarray,
    grad_mean_v: np.ndarray,
    eval_start: int,
    eval_stop: int,
    params: NeuronParams,
    surrogate: SurrogateParams,
) -> np.ndarray:
    """Reverse sweep of the MBON recurrence; supports a leading batch axis.

    Returns the summed gradient over the batch axis, shaped like w_kc_mbon;
    divide by the batch size for the mean-gradient convention.
    """
    # float64 inputs get a float64 sweep (oracle checks); float32 recordings
    # stay in float32 for speed
    work = np.float64 if np.asarray(mbon_u).dtype == np.float64 else np.float32
    u = np.asarray(mbon_u, work)
    squeeze = u.ndim == 2
    if squeeze:
        u = u[None]
        mbon_spikes = np.asarray(mbon_spikes)[None]
        kc_spikes = np.asarray(kc_spikes)[None]
        grad_mean_v = np.asarray(grad_mean_v)[None]
    B, T, m = u.shape
    if not 0 <= eval_start < eval_stop <= T:
        raise ConfigError(f"bad evaluation window [{eval_start}, {eval_stop}) for T={T}")
    n_eval = eval_stop - eval_start
    inj = np.asarray(grad_mean_v, work) / n_eval
    beta = params.beta
    spk = np.asarray(mbon_spikes, work)

    lam_u = np.empty((B, T, m), work)
    carry = np.zeros((B, m), work)
    for t in range(T - 1, -1, -1):
        lam_v = beta * carry
        if eval_start <= t < eval_stop:
            lam_v = lam_v + inj
        dv_du = 1.0 - params.v_th * spk[:, t] * surrogate_grad(u[:, t] - params.v_th, surrogate)
        carry = lam_v * dv_du
        lam_u[:, t] = carry

    kc = np.asarray(kc_spikes, work)
    grad = lam_u.reshape(B * T, m).T @ kc.reshape(B * T, kc.shape[-1])
    return grad


def backward_kc_mbon(
    rec: TrialRecording,
    grad_wrt_mean_v: np.ndarray,
    params: NeuronParams | None = None,
    surrogate: SurrogateParams = SurrogateParams(),
) -> np.ndarray:
    """Gradient of the loss w.r.t. w_kc_mbon for one recorded trial."""
    for name in ("mbon_u", "mbon_spikes", "kc_spikes"):
        if getattr(rec, name, None) is None:
            raise ConfigError(f"recording lacks required field {name}")
    params = params or NeuronParams(v_th=MBON_V_TH)
    return backward_through_time(
        rec.mbon_u, rec.mbon_spikes, rec.kc_spikes, grad_wrt_mean_v,
        rec.eval_start, rec.eval_stop, params, surrogate,
    )


def adam_step(
    w: np.ndarray, grad: np.ndarray, state: AdamState, config: TrainConfig,
    lr: float | None = None,
) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam with coupled L2 (decay added to the gradient)."""
    if w.shape != grad.shape:
        raise ConfigError(f"weight shape {w.shape} != grad shape {grad.shape}")
    lr = config.lr if lr is None else lr
    g = grad + config.l2_lambda * w
    t = state.t + 1
    m = config.adam_beta1 * state.m + (1.0 - config.adam_beta1) * g
    v = config.adam_beta2 * state.v + (1.0 - config.adam_beta2) * (g * g)
    m_hat = m / (1.0 - config.adam_beta1 ** t)
    v_hat = v / (1.0 - config.adam_beta2 ** t)
    w_new = w - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return w_new.astype(w.dtype, copy=False), AdamState(
        m.astype(w.dtype, copy=False), v.astype(w.dtype, copy=False), t
    )


class PlateauScheduler:
    """Multiply the rate by `factor` after `patience` epochs without a new best."""

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = -math.inf
        self.stale = 0

    def step(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


def lr_plateau(history, initial_lr: float, config: TrainConfig) -> float:
    """Learning rate after replaying the whole accuracy history.

    `initial_lr` is the rate in effect when the recorded history began;
    each entry is processed in order with best-so-far tracking and a
    patience counter that resets on every reduction.
    """
    if len(history) == 0:
        raise ConfigError("history must be non-empty")
    sched = PlateauScheduler(initial_lr, config.scheduler_factor, config.scheduler_patience)
    for acc in history:
        lr = sched.step(acc)
    return lr


def convergence_epoch(test_accuracy_series, config: TrainConfig) -> int | None:
    """First epoch whose trailing mean accuracy improvement falls below threshold.

    Epoch e (0-based) converges when the mean of the `convergence_window`
    consecutive improvements ending at e is below `convergence_threshold`,
    i.e. (acc[e] - acc[e - n]) / n < threshold.
    """
    n = config.convergence_window
    series = list(test_accuracy_series)
    if len(series) < n + 1:
        raise ConfigError(f"series of length {len(series)} is shorter than window+1 = {n + 1}")
    for e in range(n, len(series)):
        if (series[e] - series[e - n]) / n < config.convergence_threshold:
            return e
    return None


def accuracy_gain_per_epoch(series, conv_epoch: int | None) -> float:
    """Mean per-epoch accuracy improvement up to convergence (or end of run)."""
    stop = conv_epoch if conv_epoch is not None else len(series) - 1
    if stop < 1:
        return 0.0
    return (series[stop] - series[0]) / stop


def _eval_chunks(n: int) -> list[np.ndarray]:
    rows = np.arange(n)
    return [rows[i:i + EVAL_CHUNK] for i in range(0, n, EVAL_CHUNK)]


def evaluate(
    dataset: OdorDataset,
    split: str,
    rows: np.ndarray,
    weights: WeightSet,
    config: CircuitConfig,
    protocol: TrialProtocol,
    workers: int = 1,
) -> tuple[float, float]:
    """(accuracy, mean KC coding level) over the given rows.

    Rows are processed in fixed chunks and reduced in submission order, so
    the result is independent of the worker count.
    """
    chunks = [rows[i:i + EVAL_CHUNK] for i in range(0, len(rows), EVAL_CHUNK)]

    def one(chunk):
        x, ou, y = dataset.realize_batch(split, chunk, protocol.n_stim)
        res = forward_batch(x, weights, config, protocol, ou_noise=ou, record="mean")
        pred = res.mean_v.argmax(axis=1)
        return int((pred == y).sum()), float(res.kc_coding.sum())

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, chunks))
    else:
        results = [one(c) for c in chunks]
    correct = sum(r[0] for r in results)
    coding = sum(r[1] for r in results)
    return correct / len(rows), coding / len(rows)


def train(
    dataset: OdorDataset,
    circuit_config: CircuitConfig,
    train_config: TrainConfig,
    protocol: TrialProtocol | None = None,
    *,
    workers: int = 1,
    surrogate: SurrogateParams = SurrogateParams(),
    log_fn=None,
) -> tuple[TrainReport, WeightSet]:
    """Run the full optimization loop; deterministic given configs and data.

    The validation split is a seed-keyed 10% slice of the training set.
    Mechanism compensation terms left unset are calibrated on the first
    training samples before the first epoch.
    """
    train_config.validate()
    protocol = protocol or TrialProtocol()
    if circuit_config.n_mbon != dataset.config.n_classes:
        raise ConfigError(
            f"n_mbon {circuit_config.n_mbon} != n_classes {dataset.config.n_classes}"
        )
    weights = build_topology(circuit_config)
    problems = validate_weights(weights, circuit_config)
    if problems:
        raise ConfigError("invalid topology: " + "; ".join(problems))

    calib = dataset.train_x[:CALIBRATION_SAMPLES]
    cfg = calibrated_config(circuit_config, weights, calib, protocol)

    n_train = dataset.train_x.shape[0]
    perm = stream(train_config.seed, "val-split").permutation(n_train)
    n_val = max(1, round(train_config.val_fraction * n_train))
    val_rows = np.sort(perm[:n_val])
    fit_rows = np.sort(perm[n_val:])
    test_rows = np.arange(dataset.test_x.shape[0])

    params = NeuronParams(dt=protocol.dt)
    mbon_p = NeuronParams(dt=protocol.dt, v_th=MBON_V_TH)
    sched = PlateauScheduler(
        train_config.lr, train_config.scheduler_factor, train_config.scheduler_patience
    )
    adam = AdamState.zeros_like(weights.w_kc_mbon)
    report = TrainReport()

    for epoch in range(train_config.epochs):
        lr = sched.lr
        order = fit_rows[stream(train_config.seed, "shuffle", epoch).permutation(len(fit_rows))]
        loss_sum = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            x, ou, y = dataset.realize_batch("train", batch, protocol.n_stim)
            res = forward_batch(
                x, weights, cfg, protocol, ou_noise=ou, record="train",
                params=params, mbon_params=mbon_p,
            )
            loss, g = softmax_xent_batch(res.mean_v, y)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}"
                )
            loss_sum += loss * len(batch)
            grad = backward_through_time(
                res.mbon_u, res.mbon_spikes, res.kc_spikes, g,
                protocol.n_baseline, protocol.n_total, mbon_p, surrogate,
            ) / len(batch)
            weights.w_kc_mbon, adam = adam_step(
                weights.w_kc_mbon, grad.astype(np.float32), adam, train_config, lr=lr
            )

        val_acc, _ = evaluate(dataset, "train", val_rows, weights, cfg, protocol, workers)
        test_acc, coding = evaluate(dataset, "test", test_rows, weights, cfg, protocol, workers)
        report.train_loss.append(loss_sum / len(order))
        report.val_acc.append(val_acc)
        report.test_acc.append(test_acc)
        report.lr.append(lr)
        report.kc_coding_level = coding
        if log_fn is not None:
            log_fn(report.epoch_rows()[-1])
        sched.step(val_acc)

    if len(report.test_acc) >= train_config.convergence_window + 1:
        report.convergence_epoch = convergence_epoch(report.test_acc, train_config)
    report.accuracy_gain_per_epoch = accuracy_gain_per_epoch(
        report.test_acc, report.convergence_epoch
    )
    return report, weights
