"""Network sizes, fixed connectivity, weight initialization, and checkpoints.

The circuit is ORN -> {PN, LN} -> KC -> MBON. ORNs map one-to-one onto PNs.
A small LN pool receives uniform excitation from all ORNs and inhibits every
PN; its weight magnitude is normalized by pool size so total inhibitory
drive is invariant to n_ln. Each KC samples a fixed number of distinct PNs
at a shared weight. Only the dense KC->MBON matrix is learnable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, FormatError
from .rng import stream
from .serial import config_fields, read_container, write_container

CKPT_VERSION = 1
_CKPT_MAGIC = "flyolf-checkpoint"

PRESETS = {"low": 1.0, "medium": 2.0, "high": 3.0}


@dataclass(frozen=True)
class CircuitConfig:
    """Layer sizes, fixed-weight magnitudes, and mechanism switches."""

    n_mbon: int
    n_orn: int = 50
    n_pn: int = 50
    n_ln: int = 20
    n_kc: int = 2000
    kc_fan_in: int = 6
    w_pn_kc: float = 0.3
    kc_mbon_init_max: float = 0.08
    enable_li: bool = False
    enable_sfa: bool = False
    li_strength_preset: str = "medium"
    sfa_strength_preset: str = "medium"
    w0_li: float = 0.1
    w0_sfa: float = 0.05
    orn_gain: float = 1.0
    pn_li_compensation_gain: float | None = None  # None: calibrate before use
    pn_ln_sfa_bias: float | None = None
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_mbon", "n_orn", "n_pn", "n_ln", "n_kc", "kc_fan_in"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.kc_fan_in > self.n_pn:
            raise ConfigError(
                f"kc_fan_in {self.kc_fan_in} exceeds n_pn {self.n_pn}"
            )
        if self.n_orn != self.n_pn:
            raise ConfigError("ORN->PN map is one-to-one; n_orn must equal n_pn")
        for name in ("w0_li", "w0_sfa"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("li_strength_preset", "sfa_strength_preset"):
            if getattr(self, name) not in PRESETS:
                raise ConfigError(f"{name} must be one of {sorted(PRESETS)}")
        if self.pn_li_compensation_gain is not None and self.pn_li_compensation_gain < 1.0:
            raise ConfigError("pn_li_compensation_gain must be >= 1")
        if self.pn_ln_sfa_bias is not None and self.pn_ln_sfa_bias < 0.0:
            raise ConfigError("pn_ln_sfa_bias must be >= 0")

    @property
    def li_weight(self) -> float:
        """LN->PN inhibition magnitude (before the 1/n_ln normalization)."""
        return PRESETS[self.li_strength_preset] * self.w0_li

    @property
    def sfa_weight(self) -> float:
        """Signed adaptation strength; 0 when the mechanism is off."""
        if not self.enable_sfa:
            return 0.0
        return -PRESETS[self.sfa_strength_preset] * self.w0_sfa

    def resolved_gain(self) -> float:
        if not self.enable_li:
            return 1.0
        if self.pn_li_compensation_gain is None:
            raise ConfigError("LI enabled but compensation gain not calibrated")
        return self.pn_li_compensation_gain

    def resolved_bias(self) -> float:
        if not self.enable_sfa:
            return 0.0
        if self.pn_ln_sfa_bias is None:
            raise ConfigError("SFA enabled but bias current not calibrated")
        return self.pn_ln_sfa_bias

    def with_compensation(self, gain: float, bias: float) -> "CircuitConfig":
        return replace(self, pn_li_compensation_gain=gain, pn_ln_sfa_bias=bias)


@dataclass
class WeightSet:
    """All synaptic weights; only w_kc_mbon is mutated (by the trainer)."""

    w_orn_pn_gain: float          # one-to-one ORN->PN scalar
    w_orn_ln: np.ndarray          # [n_ln, n_orn], >= 0
    w_ln_pn: np.ndarray           # [n_pn, n_ln], <= 0
    kc_inputs: np.ndarray         # [n_kc, kc_fan_in] distinct PN indices
    w_pn_kc: float                # shared PN->KC weight
    w_kc_mbon: np.ndarray         # [n_mbon, n_kc], learnable
    _dense_pn_kc: np.ndarray | None = field(default=None, repr=False)

    def dense_pn_kc(self, dtype=np.float32) -> np.ndarray:
        """[n_pn, n_kc] scatter of the shared fan-in weight, cached."""
        if self._dense_pn_kc is None or self._dense_pn_kc.dtype != np.dtype(dtype):
            n_kc, fan_in = self.kc_inputs.shape
            n_pn = self.w_ln_pn.shape[0]
            dense = np.zeros((n_pn, n_kc), dtype)
            cols = np.arange(n_kc)
            for j in range(fan_in):
                dense[self.kc_inputs[:, j], cols] = self.w_pn_kc
            self._dense_pn_kc = dense
        return self._dense_pn_kc


def build_topology(config: CircuitConfig) -> WeightSet:
    """Deterministic weights from the config seed; pure function."""
    config.validate()
    kc_inputs = np.empty((config.n_kc, config.kc_fan_in), np.int64)
    for i in range(config.n_kc):
        kc_inputs[i] = stream(config.seed, "kc-fanin", i).choice(
            config.n_pn, size=config.kc_fan_in, replace=False
        )
    w_kc_mbon = (
        stream(config.seed, "w-kc-mbon").random(
            (config.n_mbon, config.n_kc), dtype=np.float32
        )
        * np.float32(config.kc_mbon_init_max)
    )
    w_ln_pn = np.full(
        (config.n_pn, config.n_ln), -config.li_weight / config.n_ln, np.float64
    )
    w_orn_ln = np.full((config.n_ln, config.n_orn), 1.0 / config.n_orn, np.float64)
    return WeightSet(
        w_orn_pn_gain=1.0,
        w_orn_ln=w_orn_ln,
        w_ln_pn=w_ln_pn,
        kc_inputs=kc_inputs,
        w_pn_kc=config.w_pn_kc,
        w_kc_mbon=w_kc_mbon,
    )


def validate_weights(weights: WeightSet, config: CircuitConfig) -> list[str]:
    """Every violated structural invariant, with its location; empty if ok."""
    bad: list[str] = []
    if weights.w_ln_pn.shape != (config.n_pn, config.n_ln):
        bad.append(f"w_ln_pn shape {weights.w_ln_pn.shape} != ({config.n_pn}, {config.n_ln})")
    else:
        pos = np.argwhere(weights.w_ln_pn > 0)
        for j, k in pos[:10]:
            bad.append(f"w_ln_pn[{j},{k}] = {weights.w_ln_pn[j, k]} is positive")
    if weights.w_orn_ln.shape != (config.n_ln, config.n_orn):
        bad.append(f"w_orn_ln shape {weights.w_orn_ln.shape} != ({config.n_ln}, {config.n_orn})")
    elif np.any(weights.w_orn_ln < 0):
        j, k = np.argwhere(weights.w_orn_ln < 0)[0]
        bad.append(f"w_orn_ln[{j},{k}] is negative")
    if weights.kc_inputs.shape != (config.n_kc, config.kc_fan_in):
        bad.append(
            f"kc_inputs shape {weights.kc_inputs.shape} != ({config.n_kc}, {config.kc_fan_in})"
        )
    else:
        for i in range(config.n_kc):
            row = weights.kc_inputs[i]
            if len(set(row.tolist())) != config.kc_fan_in:
                bad.append(f"kc_inputs[{i}] has duplicate PN indices: {row.tolist()}")
            elif row.min() < 0 or row.max() >= config.n_pn:
                bad.append(f"kc_inputs[{i}] out of range [0, {config.n_pn})")
    if weights.w_kc_mbon.shape != (config.n_mbon, config.n_kc):
        bad.append(
            f"w_kc_mbon shape {weights.w_kc_mbon.shape} != ({config.n_mbon}, {config.n_kc})"
        )
    if config.sfa_weight > 0:
        bad.append(f"sfa weight {config.sfa_weight} is positive")
    return bad


_CFG_TYPES = {
    "n_mbon": int, "n_orn": int, "n_pn": int, "n_ln": int, "n_kc": int,
    "kc_fan_in": int, "w_pn_kc": float, "kc_mbon_init_max": float,
    "enable_li": lambda s: s == "True", "enable_sfa": lambda s: s == "True",
    "li_strength_preset": str, "sfa_strength_preset": str,
    "w0_li": float, "w0_sfa": float, "orn_gain": float,
    "pn_li_compensation_gain": float, "pn_ln_sfa_bias": float, "seed": int,
}


def save_checkpoint(path, config: CircuitConfig, w_kc_mbon: np.ndarray,
                    meta: dict[str, str] | None = None) -> None:
    """Learnable weights plus config; fixed weights regenerate from the seed."""
    fields = config_fields(config)
    for k, v in (meta or {}).items():
        fields[f"meta_{k}"] = str(v)
    write_container(
        path, _CKPT_MAGIC, CKPT_VERSION, fields,
        [("w_kc_mbon", w_kc_mbon.astype(np.float32, copy=False))],
    )


def load_checkpoint(path) -> tuple[CircuitConfig, np.ndarray, dict[str, str]]:
    fields, blocks, _ = read_container(path, _CKPT_MAGIC, CKPT_VERSION)
    meta = {k[len("meta_"):]: v for k, v in fields.items() if k.startswith("meta_")}
    kwargs = {}
    for name, conv in _CFG_TYPES.items():
        if name not in fields:
            raise FormatError(f"{path}: checkpoint missing config field {name}")
        raw = fields[name]
        kwargs[name] = None if raw == "none" else conv(raw)
    cfg = CircuitConfig(**kwargs)
    if "w_kc_mbon" not in blocks:
        raise FormatError(f"{path}: checkpoint missing weight block")
    return cfg, blocks["w_kc_mbon"], meta
