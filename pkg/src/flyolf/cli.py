"""Command-line entry point: gen, train, eval, sweep, report.

Exit codes: 1 usage, 2 bad configuration or file format, 3 runtime failure.
A ``--config FILE`` of ``key = value`` lines (keys match flag names with
underscores) overrides built-in defaults; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .circuit import CircuitConfig, load_checkpoint, save_checkpoint
from .errors import CalibrationError, ConfigError, FormatError, TrainingDivergedError
from .harness import (
    PROFILES,
    SweepSpec,
    read_sweep_csv,
    run_sweep,
    summarize,
    variant_circuit,
)
from .odor_data import DatasetConfig, generate_dataset, read_dataset, write_dataset
from .serial import config_hash
from .simulator import TrialProtocol
from .trainer import TrainConfig, evaluate, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a dataset file")
    p.add_argument("--n-classes", type=int, required=True)
    p.add_argument("--n-orn", type=int, default=50)
    p.add_argument("--noise-kind", choices=("gaussian", "ou"), default="gaussian")
    p.add_argument("--noise-intensity", type=float, default=0.0)
    p.add_argument("--ou-theta", type=float, default=0.1)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset file")


def _add_model_flags(p):
    p.add_argument("--variant", choices=("baseline", "li", "sfa", "full"),
                   default="baseline")
    p.add_argument("--preset", choices=("low", "medium", "high"), default="medium")
    p.add_argument("--n-ln", type=int, default=20)
    p.add_argument("--n-kc", type=int, default=2000)
    p.add_argument("--kc-fan-in", type=int, default=6)
    p.add_argument("--w0-li", type=float, default=0.1)
    p.add_argument("--w0-sfa", type=float, default=0.05)
    p.add_argument("--orn-gain", type=float, default=1.0)
    p.add_argument("--compensation-gain", type=float, default=None,
                   help="skip calibration and use this PN input gain")
    p.add_argument("--sfa-bias", type=float, default=None,
                   help="skip calibration and use this PN/LN bias current")


def _add_train(sub):
    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    _add_model_flags(p)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--l2", type=float, default=1e-5)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--workers", type=int, default=1)


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="run a variant x noise x seed grid")
    p.add_argument("--variants", default="baseline,li,sfa")
    p.add_argument("--noise-kind", choices=("gaussian", "ou"), default="gaussian")
    p.add_argument("--noise-intensities", default="0.0")
    p.add_argument("--class-counts", default="100")
    p.add_argument("--presets", default="medium")
    p.add_argument("--seeds", default="0")
    p.add_argument("--profile", choices=tuple(PROFILES), default="desk")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def _add_report(sub):
    p = sub.add_parser("report", help="summarize a sweep CSV")
    p.add_argument("--csv", required=True)


def build_parser() -> _Parser:
    parser = _Parser(prog="flyolf")
    parser.add_argument("--config", default=None,
                        help="key = value file overriding flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_gen, _add_train, _add_eval, _add_sweep, _add_report):
        add(sub)
    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> list[str]:
    """Pull --config out of argv and fold its values into parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    path = Path(known.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    overrides = {}
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected 'key = value', got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        overrides[k.replace("-", "_")] = v
    for action in parser._subparsers._group_actions[0].choices.values():
        keys = {a.dest for a in action._actions}
        appl = {k: v for k, v in overrides.items() if k in keys}
        for k, v in appl.items():
            act = next(a for a in action._actions if a.dest == k)
            action.set_defaults(**{k: act.type(v) if act.type else v})
    unknown = set(overrides) - {
        a.dest
        for sp in parser._subparsers._group_actions[0].choices.values()
        for a in sp._actions
    }
    if unknown:
        raise ConfigError(f"unknown config file keys: {sorted(unknown)}")
    return argv


def _parse_list(raw: str, conv):
    try:
        return tuple(conv(tok) for tok in raw.split(",") if tok != "")
    except ValueError as exc:
        raise ConfigError(f"bad list value {raw!r}") from exc


def cmd_gen(args) -> int:
    cfg = DatasetConfig(
        n_classes=args.n_classes, n_orn=args.n_orn, noise_kind=args.noise_kind,
        noise_intensity=args.noise_intensity, ou_theta=args.ou_theta,
        n_train=args.n_train, n_test=args.n_test, seed=args.seed,
    )
    cfg.validate()
    dataset = generate_dataset(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, dataset)
    print(f"wrote {out} ({cfg.n_train} train / {cfg.n_test} test, "
          f"{cfg.n_classes} classes, {cfg.noise_kind} noise {cfg.noise_intensity:g})")
    return 0


def _circuit_from_args(args, n_classes: int) -> CircuitConfig:
    return variant_circuit(
        args.variant, n_classes, args.preset, args.seed,
        n_ln=args.n_ln, n_kc=args.n_kc, kc_fan_in=args.kc_fan_in,
        w0_li=args.w0_li, w0_sfa=args.w0_sfa, orn_gain=args.orn_gain,
        pn_li_compensation_gain=args.compensation_gain,
        pn_ln_sfa_bias=args.sfa_bias,
    )


def cmd_train(args) -> int:
    _, dataset = read_dataset(args.data)
    circuit = _circuit_from_args(args, dataset.config.n_classes)
    tcfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        l2_lambda=args.l2, val_fraction=args.val_fraction, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "report.jsonl"
    with open(log_path, "w") as fh:
        def log_fn(row):
            fh.write(json.dumps(row, sort_keys=True) + "\n")

        report, weights = train(dataset, circuit, tcfg, workers=args.workers,
                                log_fn=log_fn)
        fh.write(json.dumps({
            "convergence_epoch": report.convergence_epoch,
            "accuracy_gain_per_epoch": report.accuracy_gain_per_epoch,
            "kc_coding_level": report.kc_coding_level,
            "final_test_acc": report.test_acc[-1],
        }, sort_keys=True) + "\n")
    meta = {
        "dataset_hash": config_hash(dataset.config),
        "train_hash": config_hash(tcfg),
    }
    save_checkpoint(out / "model.ckpt", circuit, weights.w_kc_mbon, meta)
    print(f"final test accuracy {report.test_acc[-1]:.4f}; "
          f"report at {log_path}, checkpoint at {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    _, dataset = read_dataset(args.data)
    circuit, w, meta = load_checkpoint(args.checkpoint)
    if meta.get("dataset_hash") != config_hash(dataset.config):
        raise ConfigError(
            "checkpoint was trained on a different dataset config "
            f"(hash {meta.get('dataset_hash')} != {config_hash(dataset.config)})"
        )
    from .circuit import build_topology

    weights = build_topology(circuit)
    weights.w_kc_mbon = w
    protocol = TrialProtocol()
    rows = np.arange(dataset.test_x.shape[0])
    acc, coding = evaluate(dataset, "test", rows, weights, circuit, protocol,
                           workers=args.workers)
    print(f"test accuracy {acc:.6f} (kc coding level {coding:.4f})")
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec(
        variants=_parse_list(args.variants, str),
        noise_kind=args.noise_kind,
        noise_intensities=_parse_list(args.noise_intensities, float),
        class_counts=_parse_list(args.class_counts, int),
        presets=_parse_list(args.presets, str),
        seeds=_parse_list(args.seeds, int),
        profile=args.profile,
    )
    def log_fn(row):
        print(f"[{row['status']}] {row['variant']} noise={row['noise_intensity']} "
              f"classes={row['n_classes']} preset={row['preset']} seed={row['seed']} "
              f"acc={row['test_acc']} ({row['wall_s']}s)")

    path = run_sweep(spec, args.out, workers=args.workers, log_fn=log_fn)
    print(f"sweep CSV at {path}")
    return 0


def cmd_report(args) -> int:
    rows = read_sweep_csv(Path(args.csv))
    sys.stdout.write(summarize(rows))
    return 0


_COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
    "sweep": cmd_sweep, "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CalibrationError, TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
