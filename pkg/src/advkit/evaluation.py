"""Experiment orchestration: accuracy definitions, the attack/defense
grid, and report emission.

Two accuracy notions are scored.  Plain accuracy is the correct
fraction.  Defended accuracy extends it for adversarial inputs: a
defense succeeds by either classifying correctly or rejecting; on
original inputs a rejection is a failure (a defense must not shed clean
traffic to look robust).

``run_experiment`` is deterministic by construction: every random
choice derives from the config seed, wall-clock numbers stay out of the
machine-readable report, and the PNG writer is byte-stable — identical
config and seed give identical output bytes.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import attacks as atk
from . import data as dataio
from . import defenses, imaging, models, weights
from .errors import ConfigError

EXAMPLE_KINDS = ("original", "carlini", "manigen")
CLASSIFIER_KINDS = ("standalone", "magnet", "advdef")


def test_accuracy_plain(predictions, labels):
    """Correct fraction (Eq. 1 semantics)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("cannot score an empty prediction set")
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    return float((predictions == labels).mean())


def test_accuracy_defended(verdicts, labels, input_kind):
    """Defended accuracy: rejection helps on adversarial inputs only."""
    if len(verdicts) == 0:
        raise ValueError("cannot score an empty verdict set")
    if input_kind not in ("original", "adversarial"):
        raise ValueError(f"input_kind must be original|adversarial, got {input_kind!r}")
    ok = 0
    for verdict, label in zip(verdicts, labels, strict=True):
        if verdict.outcome == "rejected":
            ok += input_kind == "adversarial"
        else:
            ok += verdict.label == int(label)
    return ok / len(verdicts)


def select_samples(labels, count, seed):
    """Seeded class-stratified selection of `count` test indices.

    Classes receive floor(count/10) picks each, the remainder going to
    the lowest class ids; within a class the draw is a seeded uniform
    choice without replacement.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A3]))
    base, extra = divmod(count, 10)
    picks = []
    for cls in range(10):
        pool = np.flatnonzero(labels == cls)
        want = base + (cls < extra)
        if want > pool.size:
            raise ValueError(
                f"class {cls} has only {pool.size} test images, need {want}"
            )
        picks.append(rng.choice(pool, size=want, replace=False))
    order = np.concatenate(picks)
    return np.sort(order)


@dataclass
class EvalReport:
    dataset: str
    seed: int
    sample_count: int
    config_digest: str
    cells: dict = field(default_factory=dict)  # (example, classifier) -> metrics
    attack_stats: dict = field(default_factory=dict)
    defense_stats: dict = field(default_factory=dict)
    wall_seconds: dict = field(default_factory=dict)


def _verify_results(classifier, originals, labels, results, kind):
    """Recompute success independently; a disagreement is a defect."""
    adv = np.stack([r.adv for r in results])
    predicted = models.predict_labels(classifier, adv)
    for i, result in enumerate(results):
        recomputed = bool(predicted[i] != labels[i])
        if recomputed != result.success:
            raise AssertionError(
                f"{kind} result {i}: attack reported success={result.success} "
                f"but the classifier says {recomputed}"
            )
        if result.label is None:
            result.label = int(predicted[i])
    return predicted


def _model_path_checked(rc, role):
    path = rc.model_paths[role]
    if not os.path.exists(path):
        raise ConfigError(
            f"missing trained model for {role!r} at {path}; run the train-* "
            "commands first or set train_missing = true"
        )
    return path


def _spec_for_role(dataset, role):
    if role == "ae":
        return models.build_autoencoder(dataset)
    return models.build_classifier(dataset)


def train_role(rc, role, split=None):
    """Train one of clf/ae/advdef per the run config and persist it.

    The classifier trains on a seeded subset of ``clf_subset`` images
    (0 = everything); the autoencoder and the hardened classifier train
    on the full training split.  Returns the weight file path.
    """
    if split is None:
        split = dataio.load_dataset(rc.dataset, rc.data_dir, strict_counts=False)
    images, labels = split.train_images, split.train_labels
    if role in ("clf", "advdef") and 0 < rc.clf_subset < labels.size:
        subset = select_samples(labels, rc.clf_subset, rc.seed + 17)
        images, labels = images[subset], labels[subset]

    spec = _spec_for_role(rc.dataset, role)
    model_role = "autoencoder" if role == "ae" else "classifier"
    cfg = models.default_train_config(
        rc.dataset, model_role, epochs=rc.train_epochs[role], seed=rc.seed
    )
    if role == "advdef":
        model = defenses.adversarial_training(
            images, labels, spec, cfg, epsilon=rc.advdef_epsilon
        )
    else:
        model = models.train(spec, images, labels, cfg)
    os.makedirs(os.path.dirname(rc.model_paths[role]) or ".", exist_ok=True)
    weights.save_weights(model, rc.model_paths[role], seed=rc.seed)
    return rc.model_paths[role]


def _load_models(rc, split):
    """Load (or, if allowed, train and persist) the three models."""
    loaded = {}
    for role in ("clf", "ae", "advdef"):
        path = rc.model_paths[role]
        if not os.path.exists(path) and rc.train_missing:
            train_role(rc, role, split)
        loaded[role] = weights.load_weights(
            _spec_for_role(rc.dataset, role), _model_path_checked(rc, role)
        )
    return loaded


def run_experiment(rc):
    """Run the full grid for one dataset and write all artifacts.

    Returns the EvalReport; writes into rc.out_dir:
      report.txt        machine-readable key=value lines (deterministic)
      report_table.txt  human-readable accuracy table
      examples.txt      per-example log
      grid.png          first grid_count sample triplets
    """
    split = dataio.load_dataset(rc.dataset, rc.data_dir, strict_counts=False)
    if rc.resplit_seed is not None:
        split = dataio.resplit(split, rc.resplit_seed)
    zoo = _load_models(rc, split)
    clf, autoencoder, advdef = zoo["clf"], zoo["ae"], zoo["advdef"]

    report = EvalReport(
        dataset=rc.dataset,
        seed=rc.seed,
        sample_count=rc.sample_count,
        config_digest=rc.digest(),
    )
    timer = time.perf_counter

    picked = select_samples(split.test_labels, rc.sample_count, rc.seed)
    images = split.test_images[picked]
    labels = split.test_labels[picked]

    # Defense calibration happens before any adversarial data exists.
    calib = select_samples(
        split.train_labels, min(rc.calibration_count, split.train_labels.size), rc.seed + 1
    )
    t0 = timer()
    magnet = defenses.magnet_build(
        autoencoder,
        clf,
        split.train_images[calib],
        target_fpr=rc.magnet_target_fpr,
        detector=rc.magnet_detector,
        temperature=rc.magnet_temperature,
    )
    report.wall_seconds["calibrate"] = timer() - t0
    report.defense_stats["magnet.threshold"] = magnet.threshold
    report.defense_stats["magnet.detector"] = magnet.detector

    # Generate the two iterative attacks once; everything is scored on them.
    examples = {"original": images}
    per_example = {}
    t0 = timer()
    oracle = models.label_oracle(clf)
    manigen_results = atk.manigen_attack_batch(
        images, labels, oracle, autoencoder, rc.attacks["manigen"]
    )
    report.wall_seconds["attack.manigen"] = timer() - t0
    t0 = timer()
    carlini_results = atk.carlini_attack_batch(
        images, labels, lambda t: models.logits_graph(clf, t), rc.attacks["carlini"]
    )
    report.wall_seconds["attack.carlini"] = timer() - t0

    for kind, results in (("carlini", carlini_results), ("manigen", manigen_results)):
        _verify_results(clf, images, labels, results, kind)
        examples[kind] = np.stack([r.adv for r in results])
        per_example[kind] = results
        dists = np.array([r.distortion for r in results])
        report.attack_stats[f"{kind}.success_rate"] = float(
            np.mean([r.success for r in results])
        )
        report.attack_stats[f"{kind}.mean_l2"] = float(dists.mean())
        report.attack_stats[f"{kind}.median_l2"] = float(np.median(dists))
    report.attack_stats["manigen.queries_per_image"] = float(
        np.mean([r.queries for r in manigen_results])
    )
    report.attack_stats["manigen.logits_calls"] = 0.0  # black-box contract

    for kind in EXAMPLE_KINDS:
        batch = examples[kind]
        input_kind = "original" if kind == "original" else "adversarial"
        t0 = timer()

        plain = models.predict_labels(clf, batch)
        report.cells[(kind, "standalone")] = {
            "accuracy": test_accuracy_plain(plain, labels),
            "n": len(labels),
        }
        verdicts = defenses.magnet_predict_batch(magnet, batch)
        report.cells[(kind, "magnet")] = {
            "accuracy": test_accuracy_defended(verdicts, labels, input_kind),
            "n": len(labels),
            "rejected": sum(v.outcome == "rejected" for v in verdicts),
        }
        hardened = models.predict_labels(advdef, batch)
        report.cells[(kind, "advdef")] = {
            "accuracy": test_accuracy_plain(hardened, labels),
            "n": len(labels),
        }
        report.wall_seconds[f"score.{kind}"] = timer() - t0

    # Duality check: standalone accuracy on an attack == 1 - success rate.
    for kind in ("carlini", "manigen"):
        acc = report.cells[(kind, "standalone")]["accuracy"]
        sr = report.attack_stats[f"{kind}.success_rate"]
        if abs((1.0 - sr) - acc) > 1e-12:
            raise AssertionError(f"accuracy/success duality broken for {kind}")

    os.makedirs(rc.out_dir, exist_ok=True)
    _write_examples_log(rc, labels, picked, per_example)
    _write_grid(rc, examples)
    _write_report(rc, report)
    return report


def _write_examples_log(rc, labels, picked, per_example):
    lines = ["index\ttrue\tkind\tsuccess\tlabel\tl2\titerations\tqueries"]
    for kind in ("carlini", "manigen"):
        for pos, result in enumerate(per_example[kind]):
            lines.append(
                f"{picked[pos]}\t{labels[pos]}\t{kind}\t"
                f"{int(result.success)}\t{result.label}\t{result.distortion:.6f}\t"
                f"{result.iterations}\t{result.queries}"
            )
    with open(os.path.join(rc.out_dir, "examples.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_grid(rc, examples):
    count = min(rc.grid_count, examples["original"].shape[0])
    rows = [[examples[kind][i] for i in range(count)] for kind in EXAMPLE_KINDS]
    imaging.export_grid(rows, os.path.join(rc.out_dir, "grid.png"))


def report_lines(report):
    """Machine-readable key=value lines, sorted, no wall-clock values."""
    lines = {
        "dataset": report.dataset,
        "seed": str(report.seed),
        "sample_count": str(report.sample_count),
        "config_digest": report.config_digest,
    }
    for (example, classifier), metrics in report.cells.items():
        for metric, value in metrics.items():
            key = f"cell.{example}.{classifier}.{metric}"
            lines[key] = _fmt(value)
    for key, value in report.attack_stats.items():
        lines[f"attack.{key}"] = _fmt(value)
    for key, value in report.defense_stats.items():
        lines[f"defense.{key}"] = _fmt(value)
    return [f"{k} = {lines[k]}" for k in sorted(lines)]


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def render_table(report):
    """Human-readable accuracy table plus timing appendix."""
    head = f"{'examples':<12}" + "".join(f"{c:>12}" for c in CLASSIFIER_KINDS)
    rows = [head, "-" * len(head)]
    for example in EXAMPLE_KINDS:
        cells = [
            f"{report.cells[(example, c)]['accuracy'] * 100:11.1f}%"
            for c in CLASSIFIER_KINDS
        ]
        rows.append(f"{example:<12}" + "".join(cells))
    rows.append("")
    rows.append(f"dataset={report.dataset} n={report.sample_count} seed={report.seed}")
    for key in sorted(report.attack_stats):
        rows.append(f"{key} = {_fmt(report.attack_stats[key])}")
    for key in sorted(report.wall_seconds):
        rows.append(f"wall.{key} = {report.wall_seconds[key]:.1f}s")
    return "\n".join(rows) + "\n"


def _write_report(rc, report):
    with open(os.path.join(rc.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_lines(report)) + "\n")
    with open(os.path.join(rc.out_dir, "report_table.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_table(report))
