"""Synthetic odor datasets: uniform prototypes plus Gaussian or OU noise.

Each odor class is a fixed prototype vector of receptor intensities drawn
U(0,1). A Gaussian sample adds one static zero-mean noise vector and clips
at zero. An OU sample instead carries a 128-bit noise-stream key from which
a temporally correlated per-channel noise trajectory is realized lazily,
one vector per simulation timestep; the instantaneous receptor drive is
clip(prototype + Y(t)). All draws come from keyed counter-based streams, so
dataset content is a pure function of the config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import derive_key, stream, stream_from_key
from .serial import config_fields, read_container, write_container

FORMAT_VERSION = 1
_MAGIC = "flyolf-dataset"

OU_DT_MS = 1.0           # OU recursion step; matches the 1-ms simulation grid
DEFAULT_STIM_STEPS = 30  # default stimulus window for lazy per-step realization

NOISE_KINDS = ("gaussian", "ou")


@dataclass(frozen=True)
class DatasetConfig:
    """Everything that determines dataset content, including the seed."""

    n_classes: int
    n_orn: int = 50
    noise_kind: str = "gaussian"
    noise_intensity: float = 0.0   # sigma for gaussian, stationary std for ou
    ou_theta: float = 0.1          # per-ms mean reversion rate (ou only)
    n_train: int = 1
    n_test: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_orn < 1:
            raise ConfigError(f"n_orn must be >= 1, got {self.n_orn}")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {NOISE_KINDS}")
        if self.noise_intensity < 0:
            raise ConfigError("noise_intensity must be >= 0")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        if not 0.0 <= self.ou_theta * OU_DT_MS < 2.0:
            raise ConfigError(
                f"ou_theta*dt = {self.ou_theta * OU_DT_MS} outside [0, 2); "
                "the discrete recursion would not be stationary"
            )


@dataclass(frozen=True)
class OdorSample:
    """One labelled receptor-intensity vector.

    For OU samples `intensities` is the clean prototype and
    `noise_stream_key` identifies the lazily realized noise trajectory;
    Gaussian samples are pre-noised and carry no key.
    """

    class_id: int
    intensities: np.ndarray
    noise_stream_key: int | None = None


@dataclass(frozen=True)
class DatasetManifest:
    config: DatasetConfig
    format_version: int
    blocks: dict[str, tuple[int, int, tuple[int, ...]]]  # name -> (offset, nbytes, shape)


def make_prototypes(config: DatasetConfig) -> np.ndarray:
    """Prototype matrix [n_classes, n_orn], row c keyed by (seed, c)."""
    config.validate()
    out = np.empty((config.n_classes, config.n_orn), np.float32)
    for c in range(config.n_classes):
        out[c] = stream(config.seed, "prototype", c).random(config.n_orn, dtype=np.float32)
    return out


def sample_gaussian(
    prototype: np.ndarray, class_id: int, sample_index: int, config: DatasetConfig
) -> OdorSample:
    """Prototype plus one static N(0, sigma^2) vector, clipped at zero."""
    if config.noise_kind != "gaussian":
        raise ConfigError("sample_gaussian requires noise_kind='gaussian'")
    g = stream(config.seed, "gauss-noise", class_id, sample_index)
    z = g.standard_normal(config.n_orn, dtype=np.float32)
    x = np.maximum(prototype + config.noise_intensity * z, np.float32(0.0))
    return OdorSample(class_id, x)


def sample_ou(
    prototype: np.ndarray, class_id: int, sample_index: int, config: DatasetConfig
) -> OdorSample:
    """OU sample: clean prototype plus a key for the lazy noise trajectory."""
    if config.noise_kind != "ou":
        raise ConfigError("sample_ou requires noise_kind='ou'")
    key = derive_key(config.seed, "ou-noise", class_id, sample_index)
    return OdorSample(class_id, prototype.astype(np.float32).copy(), key)


def ou_noise_matrix(
    key: int,
    n_steps: int,
    n_orn: int,
    intensity: float,
    theta: float,
    dt: float = OU_DT_MS,
) -> np.ndarray:
    """Realize Y[t, channel] for one noise stream over `n_steps` steps.

    Discrete recursion Y[t+1] = (1 - theta*dt) Y[t] + sigma_step*sqrt(dt)*eta
    with sigma_step chosen so the recursion's stationary std equals
    `intensity`, and Y[0] drawn from that stationary distribution. Values at
    step t do not depend on n_steps (prefix property of the keyed stream).
    """
    if intensity == 0.0:
        return np.zeros((n_steps, n_orn), np.float32)
    if not 0.0 <= theta * dt < 2.0:
        raise ConfigError(f"theta*dt = {theta * dt} outside [0, 2)")
    g = stream_from_key(key)
    y = np.empty((n_steps, n_orn), np.float32)
    y[0] = intensity * g.standard_normal(n_orn, dtype=np.float32)
    a = np.float32(1.0 - theta * dt)
    s = np.float32(intensity * math.sqrt(theta * (2.0 - theta * dt)) * math.sqrt(dt))
    for t in range(1, n_steps):
        y[t] = a * y[t - 1] + s * g.standard_normal(n_orn, dtype=np.float32)
    return y


def realize_ou_noise(
    sample: OdorSample,
    timestep: int,
    config: DatasetConfig,
    n_steps: int = DEFAULT_STIM_STEPS,
) -> np.ndarray:
    """Noise vector Y(t) for one sample at one stimulus timestep."""
    if config.noise_kind != "ou":
        raise ConfigError("realize_ou_noise requires noise_kind='ou'")
    if sample.noise_stream_key is None:
        raise ConfigError("sample carries no noise stream key")
    if not 0 <= timestep < n_steps:
        raise ConfigError(f"timestep {timestep} outside stimulus window [0, {n_steps})")
    m = ou_noise_matrix(
        sample.noise_stream_key, timestep + 1, config.n_orn,
        config.noise_intensity, config.ou_theta,
    )
    return m[timestep]


def _train_count_for_class(config: DatasetConfig, class_id: int) -> int:
    base, extra = divmod(config.n_train, config.n_classes)
    return base + (1 if class_id < extra else 0)


def sample_coords(config: DatasetConfig, split: str, row: int) -> tuple[int, int]:
    """Map a split row to (class_id, per-class sample index).

    Rows are assigned round-robin over classes. Test rows continue each
    class's index sequence after its train samples, so train and test never
    share a noise stream.
    """
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    c = row % config.n_classes
    k = row // config.n_classes
    if split == "test":
        k += _train_count_for_class(config, c)
    return c, k


@dataclass
class OdorDataset:
    """In-memory dataset: prototypes plus labelled train/test intensity rows."""

    config: DatasetConfig
    prototypes: np.ndarray  # [n_classes, n_orn] float32
    train_x: np.ndarray     # [n_train, n_orn] float32
    train_y: np.ndarray     # [n_train] uint32
    test_x: np.ndarray
    test_y: np.ndarray

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_x, self.train_y
        if name == "test":
            return self.test_x, self.test_y
        raise ConfigError(f"unknown split {name!r}")

    def noise_key(self, split: str, row: int) -> int:
        c, k = sample_coords(self.config, split, row)
        return derive_key(self.config.seed, "ou-noise", c, k)

    def sample(self, split: str, row: int) -> OdorSample:
        x, y = self.split(split)
        key = self.noise_key(split, row) if self.config.noise_kind == "ou" else None
        return OdorSample(int(y[row]), x[row], key)

    def realize_batch(
        self, split: str, rows: np.ndarray, n_stim_steps: int
    ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """(intensities, ou noise or None, labels) for a batch of rows."""
        x, y = self.split(split)
        xb = x[rows]
        yb = y[rows].astype(np.int64)
        if self.config.noise_kind != "ou" or self.config.noise_intensity == 0.0:
            return xb, None, yb
        ou = np.empty((len(rows), n_stim_steps, self.config.n_orn), np.float32)
        for i, r in enumerate(rows):
            ou[i] = ou_noise_matrix(
                self.noise_key(split, int(r)), n_stim_steps, self.config.n_orn,
                self.config.noise_intensity, self.config.ou_theta,
            )
        return xb, ou, yb


def generate_dataset(config: DatasetConfig) -> OdorDataset:
    """Materialize the full dataset for a config; pure and order-independent."""
    config.validate()
    protos = make_prototypes(config)
    maker = sample_gaussian if config.noise_kind == "gaussian" else sample_ou
    splits = {}
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        xs = np.empty((n, config.n_orn), np.float32)
        ys = np.empty(n, np.uint32)
        for row in range(n):
            c, k = sample_coords(config, split, row)
            xs[row] = maker(protos[c], c, k, config).intensities
            ys[row] = c
        splits[split] = (xs, ys)
    return OdorDataset(config, protos, *splits["train"], *splits["test"])


def write_dataset(path, dataset: OdorDataset) -> DatasetManifest:
    """Persist a dataset; see module docstring for the container layout."""
    cfg = dataset.config
    cfg.validate()
    for name, arr in (("train", dataset.train_x), ("test", dataset.test_x)):
        if arr.shape[0] < 1:
            raise FormatError(f"refusing to write empty {name} split")
    blocks = [
        ("prototypes", dataset.prototypes),
        ("train_x", dataset.train_x),
        ("train_y", dataset.train_y.reshape(-1, 1)),
        ("test_x", dataset.test_x),
        ("test_y", dataset.test_y.reshape(-1, 1)),
    ]
    layout = write_container(path, _MAGIC, FORMAT_VERSION, config_fields(cfg), blocks)
    return DatasetManifest(cfg, FORMAT_VERSION, layout)


def read_dataset(path) -> tuple[DatasetManifest, OdorDataset]:
    """Load a dataset written by write_dataset; lossless round trip."""
    fields, blocks, layout = read_container(path, _MAGIC, FORMAT_VERSION)
    try:
        cfg = DatasetConfig(
            n_classes=int(fields["n_classes"]),
            n_orn=int(fields["n_orn"]),
            noise_kind=fields["noise_kind"],
            noise_intensity=float(fields["noise_intensity"]),
            ou_theta=float(fields["ou_theta"]),
            n_train=int(fields["n_train"]),
            n_test=int(fields["n_test"]),
            seed=int(fields["seed"]),
        )
        ds = OdorDataset(
            cfg,
            blocks["prototypes"],
            blocks["train_x"],
            blocks["train_y"].reshape(-1).astype(np.uint32),
            blocks["test_x"],
            blocks["test_y"].reshape(-1).astype(np.uint32),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing field or block {exc}") from exc
    cfg.validate()
    return DatasetManifest(cfg, FORMAT_VERSION, layout), ds
