"""Command-line interface.

Subcommands cover the whole pipeline: synthesize data, train the three
models, calibrate the detector, generate attacks, run the evaluation
grid, and export image grids.  Every command takes ``--config`` plus
the ``--seed/--out/--data`` shortcuts; explicit flags override config
file values.  Exit codes: 0 success, 1 validation error (bad flags,
unknown config keys, missing models), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import attacks as atk
from . import data as dataio
from . import defenses, evaluation, models, synth, weights
from .config import build_run_config, load_config_file
from .errors import AdvkitError, ConfigError


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--data", help="dataset directory")


def _run_config(args, **extra):
    file_values = load_config_file(args.config) if args.config else {}
    overrides = dict(extra)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.data is not None:
        overrides["data_dir"] = args.data
    return build_run_config(file_values, overrides)


def _require_data(rc):
    if not os.path.isdir(rc.data_dir):
        raise ConfigError(
            f"data directory {rc.data_dir!r} does not exist; "
            "run `advkit synth-data` or point --data at the dataset files"
        )


def cmd_synth_data(args):
    rc = _run_config(args)
    mnist = synth.write_mnist_corpus(
        rc.data_dir, args.train_per_class, args.test_per_class, seed=rc.seed
    )
    print(f"wrote {len(mnist)} MNIST-layout files to {rc.data_dir}")
    if args.cifar:
        cifar = synth.write_cifar_corpus(rc.data_dir, seed=rc.seed)
        print(f"wrote {len(cifar)} CIFAR-layout files to {rc.data_dir}")
    return 0


def _train(args, role):
    rc = _run_config(args)
    _require_data(rc)
    path = evaluation.train_role(rc, role)
    print(f"saved {role} weights to {path}")
    return 0


def cmd_train_ae(args):
    return _train(args, "ae")


def cmd_train_clf(args):
    return _train(args, "clf")


def cmd_train_advdef(args):
    return _train(args, "advdef")


def cmd_calibrate_magnet(args):
    rc = _run_config(args)
    _require_data(rc)
    split = dataio.load_dataset(rc.dataset, rc.data_dir, strict_counts=False)
    autoencoder = weights.load_weights(
        models.build_autoencoder(rc.dataset), evaluation._model_path_checked(rc, "ae")
    )
    clf = weights.load_weights(
        models.build_classifier(rc.dataset), evaluation._model_path_checked(rc, "clf")
    )
    calib = evaluation.select_samples(
        split.train_labels,
        min(rc.calibration_count, split.train_labels.size),
        rc.seed + 1,
    )
    defense = defenses.magnet_build(
        autoencoder,
        clf,
        split.train_images[calib],
        target_fpr=rc.magnet_target_fpr,
        detector=rc.magnet_detector,
        temperature=rc.magnet_temperature,
    )
    os.makedirs(rc.out_dir, exist_ok=True)
    path = os.path.join(rc.out_dir, "magnet.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"detector = {defense.detector}\n")
        fh.write(f"threshold = {defense.threshold:.9f}\n")
        fh.write(f"temperature = {defense.temperature}\n")
        fh.write(f"target_fpr = {rc.magnet_target_fpr}\n")
    print(f"threshold {defense.threshold:.6f} ({defense.detector}) -> {path}")
    return 0


def cmd_attack(args):
    rc = _run_config(args)
    cfg = rc.attacks[args.kind]
    # Validate the needed models before touching any data.
    clf_path = evaluation._model_path_checked(rc, "clf")
    ae_path = (
        evaluation._model_path_checked(rc, "ae") if args.kind == "manigen" else None
    )
    _require_data(rc)
    split = dataio.load_dataset(rc.dataset, rc.data_dir, strict_counts=False)
    clf = weights.load_weights(models.build_classifier(rc.dataset), clf_path)
    picked = evaluation.select_samples(split.test_labels, rc.sample_count, rc.seed)
    images, labels = split.test_images[picked], split.test_labels[picked]

    if args.kind == "manigen":
        autoencoder = weights.load_weights(models.build_autoencoder(rc.dataset), ae_path)
        results = atk.run_attack_batch(
            cfg, images, labels, autoencoder=autoencoder, oracle=models.label_oracle(clf)
        )
    else:
        results = atk.run_attack_batch(cfg, images, labels, classifier=clf)

    os.makedirs(rc.out_dir, exist_ok=True)
    adv = np.stack([r.adv for r in results])
    out_path = os.path.join(rc.out_dir, f"adv-{args.kind}.npy")
    np.save(out_path, adv)
    success = float(np.mean([r.success for r in results]))
    mean_l2 = float(np.mean([r.distortion for r in results]))
    print(
        f"{args.kind}: success {success:.1%}, mean L2 {mean_l2:.3f} "
        f"on {len(results)} images -> {out_path}"
    )
    return 0


def cmd_evaluate(args):
    rc = _run_config(args)
    _require_data(rc)
    report = evaluation.run_experiment(rc)
    sys.stdout.write(evaluation.render_table(report))
    print(f"report written to {rc.out_dir}")
    return 0


def cmd_export_grid(args):
    rows = []
    for path in args.rows:
        if not os.path.exists(path):
            raise ConfigError(f"row file not found: {path}")
        arr = np.load(path)
        rows.append(list(arr[: args.count]))
    from . import imaging

    imaging.export_grid(rows, args.path)
    print(f"grid written to {args.path}")
    return 0


def build_parser():
    parser = _Parser(prog="advkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[], help="generate the synthetic corpus")
    _common_flags(p)
    p.add_argument("--train-per-class", type=int, default=1200)
    p.add_argument("--test-per-class", type=int, default=200)
    p.add_argument("--cifar", action="store_true", help="also write CIFAR-layout files")
    p.set_defaults(func=cmd_synth_data)

    for name, func in (
        ("train-ae", cmd_train_ae),
        ("train-clf", cmd_train_clf),
        ("train-advdef", cmd_train_advdef),
        ("calibrate-magnet", cmd_calibrate_magnet),
        ("evaluate", cmd_evaluate),
    ):
        p = sub.add_parser(name)
        _common_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("attack", help="generate adversarial examples")
    _common_flags(p)
    p.add_argument("--kind", required=True, choices=list(atk.ATTACK_KINDS))
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("export-grid", help="tile .npy image rows into a PNG")
    _common_flags(p)
    p.add_argument("rows", nargs="+", help="one .npy file per grid row")
    p.add_argument("--path", default="grid.png")
    p.add_argument("--count", type=int, default=10, help="columns per row")
    p.set_defaults(func=cmd_export_grid)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AdvkitError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 -- the CLI boundary reports, not raises
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
