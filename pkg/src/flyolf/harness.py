"""Experiment grids: model variants crossed with noise levels and seeds.

A sweep cell is (variant, noise kind, noise intensity, class count, strength
preset, seed). Cells are independent, cached by a config hash covering every
field that influences results, and written to a versioned CSV through a
single writer; an interrupted sweep resumes from the completed rows.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np

from .circuit import CircuitConfig
from .errors import ConfigError, FormatError
from .odor_data import DatasetConfig, OdorDataset, generate_dataset, read_dataset, write_dataset
from .serial import config_hash
from .simulator import TrialProtocol
from .trainer import TrainConfig, TrainReport, train

CSV_HEADER_LINE = "# flyolf-sweep-csv v1"
CSV_COLUMNS = (
    "variant", "noise_kind", "noise_intensity", "n_classes", "preset", "seed",
    "test_acc", "convergence_epoch", "acc_gain_per_epoch", "kc_coding_level",
    "wall_s", "status",
)

VARIANTS = {
    "baseline": (False, False),
    "li": (True, False),
    "sfa": (False, True),
    "full": (True, True),
}

DESK_MAX_CLASSES = 500


@dataclass(frozen=True)
class ScaleProfile:
    name: str
    n_train: int
    n_test: int
    epochs: int
    batch_size: int = 256
    lr: float = 1e-4


DESK = ScaleProfile("desk", n_train=3000, n_test=1000, epochs=40)
PAPER = ScaleProfile("paper", n_train=30000, n_test=10000, epochs=100)
PROFILES = {"desk": DESK, "paper": PAPER}


@dataclass(frozen=True)
class SweepSpec:
    variants: tuple[str, ...]
    noise_kind: str = "gaussian"
    noise_intensities: tuple[float, ...] = (0.0,)
    class_counts: tuple[int, ...] = (100,)
    presets: tuple[str, ...] = ("medium",)
    seeds: tuple[int, ...] = (0,)
    profile: str = "desk"

    def validate(self) -> None:
        for name in ("variants", "noise_intensities", "class_counts", "presets", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must be non-empty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.profile == "desk" and max(self.class_counts) > DESK_MAX_CLASSES:
            raise ConfigError(
                f"desk profile caps class count at {DESK_MAX_CLASSES}; "
                "use --profile paper for larger runs"
            )

    def cells(self) -> list[tuple]:
        return list(product(
            self.variants, self.noise_intensities, self.class_counts,
            self.presets, self.seeds,
        ))


def variant_circuit(variant: str, n_classes: int, preset: str, seed: int,
                    **overrides) -> CircuitConfig:
    li, sfa = VARIANTS[variant]
    return CircuitConfig(
        n_mbon=n_classes, enable_li=li, enable_sfa=sfa,
        li_strength_preset=preset, sfa_strength_preset=preset, seed=seed,
        **overrides,
    )


def dataset_for_cell(
    noise_kind: str, intensity: float, n_classes: int, seed: int,
    profile: ScaleProfile, cache_dir: Path | None = None,
) -> OdorDataset:
    cfg = DatasetConfig(
        n_classes=n_classes, noise_kind=noise_kind, noise_intensity=intensity,
        n_train=profile.n_train, n_test=profile.n_test, seed=seed,
    )
    if cache_dir is None:
        return generate_dataset(cfg)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"ds-{config_hash(cfg)[:16]}.bin"
    if path.exists():
        try:
            _, ds = read_dataset(path)
            if ds.config == cfg:
                return ds
        except FormatError:
            pass
    ds = generate_dataset(cfg)
    tmp = path.with_suffix(".tmp")
    write_dataset(tmp, ds)
    tmp.replace(path)
    return ds


def run_cell(
    variant: str, intensity: float, n_classes: int, preset: str, seed: int,
    spec: SweepSpec, out_dir: Path, workers: int = 1,
) -> dict:
    """One grid cell: dataset, calibration, training, final metrics."""
    profile = PROFILES[spec.profile]
    t0 = time.monotonic()
    row = {
        "variant": variant, "noise_kind": spec.noise_kind,
        "noise_intensity": repr(float(intensity)), "n_classes": str(n_classes),
        "preset": preset, "seed": str(seed),
        "test_acc": "", "convergence_epoch": "", "acc_gain_per_epoch": "",
        "kc_coding_level": "", "wall_s": "", "status": "ok",
    }
    try:
        dataset = dataset_for_cell(
            spec.noise_kind, intensity, n_classes, seed, profile,
            out_dir / "datasets",
        )
        circuit = variant_circuit(variant, n_classes, preset, seed)
        tcfg = TrainConfig(
            epochs=profile.epochs, batch_size=profile.batch_size,
            lr=profile.lr, seed=seed,
        )
        report, _ = train(dataset, circuit, tcfg, workers=workers)
        row["test_acc"] = f"{report.test_acc[-1]:.6f}"
        row["convergence_epoch"] = (
            "" if report.convergence_epoch is None else str(report.convergence_epoch)
        )
        row["acc_gain_per_epoch"] = f"{report.accuracy_gain_per_epoch:.8f}"
        row["kc_coding_level"] = f"{report.kc_coding_level:.6f}"
    except Exception as exc:  # cell failures are recorded, the sweep continues
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    row["wall_s"] = f"{time.monotonic() - t0:.3f}"
    return row


def _cell_key(row: dict) -> tuple:
    return tuple(row[c] for c in CSV_COLUMNS[:6])


def _spec_hash(spec: SweepSpec) -> str:
    profile = PROFILES[spec.profile]
    return config_hash(spec, profile, TrialProtocol(), "sweep-v1")[:16]


def write_sweep_csv(path: Path, spec: SweepSpec, rows: dict[tuple, dict]) -> None:
    """Atomic rewrite in canonical grid order with a versioned header."""
    buf = io.StringIO()
    buf.write(f"{CSV_HEADER_LINE} spec={_spec_hash(spec)}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for cell in spec.cells():
        variant, intensity, n_classes, preset, seed = cell
        key = (variant, spec.noise_kind, repr(float(intensity)), str(n_classes),
               preset, str(seed))
        if key in rows:
            writer.writerow(rows[key])
    tmp = path.with_suffix(".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(path)


def read_sweep_csv(path: Path, expect_spec: SweepSpec | None = None) -> list[dict]:
    """Rows of a sweep CSV; malformed rows raise FormatError naming the line."""
    text = path.read_text().splitlines()
    if not text or not text[0].startswith(CSV_HEADER_LINE):
        raise FormatError(f"{path}: missing '{CSV_HEADER_LINE}' header")
    if expect_spec is not None:
        if text[0] != f"{CSV_HEADER_LINE} spec={_spec_hash(expect_spec)}":
            return []  # different spec: no reusable rows
    reader = csv.DictReader(text[1:], restkey="_extra")
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
        raise FormatError(f"{path}: unexpected column header {reader.fieldnames}")
    rows = []
    for i, row in enumerate(reader, start=3):
        if "_extra" in row or any(v is None for v in row.values()):
            raise FormatError(f"{path}: malformed row at line {i}")
        rows.append(row)
    return rows


def run_sweep(
    spec: SweepSpec, out_dir: str | Path, workers: int = 1,
    cell_workers: int = 1, log_fn=None,
) -> Path:
    """Run every missing cell of the grid; returns the CSV path.

    Completed cells found in an existing CSV for the same spec are skipped.
    The CSV is atomically rewritten after each completed cell, so an
    interrupted sweep restarts at the next cell boundary.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    done: dict[tuple, dict] = {}
    if csv_path.exists():
        for row in read_sweep_csv(csv_path, expect_spec=spec):
            if row["status"] == "ok":
                done[_cell_key(row)] = row

    todo = []
    for cell in spec.cells():
        variant, intensity, n_classes, preset, seed = cell
        key = (variant, spec.noise_kind, repr(float(intensity)), str(n_classes),
               preset, str(seed))
        if key not in done:
            todo.append(cell)

    def compute(cell):
        return run_cell(*cell, spec=spec, out_dir=out_dir, workers=cell_workers)

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(compute, cell): cell for cell in todo}
            for fut in list(futures):
                row = fut.result()
                done[_cell_key(row)] = row
                write_sweep_csv(csv_path, spec, done)
                if log_fn:
                    log_fn(row)
    else:
        for cell in todo:
            row = compute(cell)
            done[_cell_key(row)] = row
            write_sweep_csv(csv_path, spec, done)
            if log_fn:
                log_fn(row)

    write_sweep_csv(csv_path, spec, done)
    return csv_path


def summarize(rows: list[dict]) -> str:
    """Seed-averaged accuracies, deltas vs baseline, and best variant per cell."""
    groups: dict[tuple, dict[str, list[float]]] = {}
    conv: dict[str, list[float]] = {}
    for i, row in enumerate(rows):
        if row["status"] != "ok":
            continue
        try:
            key = (row["noise_kind"], float(row["noise_intensity"]), int(row["n_classes"]))
            acc = float(row["test_acc"])
        except (ValueError, KeyError) as exc:
            raise FormatError(f"malformed CSV row {i + 1}: {row}") from exc
        groups.setdefault(key, {}).setdefault(row["variant"], []).append(acc)
        if row["convergence_epoch"] != "":
            conv.setdefault(row["variant"], []).append(float(row["convergence_epoch"]))

    lines = []
    for key in sorted(groups):
        kind, intensity, n_classes = key
        per_variant = {v: sum(a) / len(a) for v, a in groups[key].items()}
        base = per_variant.get("baseline")
        best = max(per_variant, key=per_variant.get)
        lines.append(f"noise={kind}:{intensity:g} classes={n_classes}")
        for v in sorted(per_variant):
            delta = "" if base is None or v == "baseline" else (
                f"  delta_vs_baseline={per_variant[v] - base:+.4f}"
            )
            lines.append(f"  {v:<9} acc={per_variant[v]:.4f}{delta}")
        lines.append(f"  best: {best}")
    if conv:
        lines.append("convergence epochs (mean over converged cells):")
        for v in sorted(conv):
            lines.append(f"  {v:<9} {sum(conv[v]) / len(conv[v]):.1f}")
    return "\n".join(lines) + "\n"
