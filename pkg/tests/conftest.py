"""Shared fixtures: the synthetic corpus and desk-scale trained models.

Training happens once per pytest session.  Set ADVKIT_TEST_CACHE to a
directory to reuse trained weights across sessions (keyed by corpus
digest, architecture hash, and training recipe, so stale weights never
leak across code changes that alter any of those).  Fixtures record
wall-clock training times in `timings`; runtime budget assertions only
fire for fixtures that actually ran in this session.
"""

import hashlib
import os
import time

import numpy as np
import pytest

from advkit import data, defenses, evaluation, models, synth, weights
from advkit.attacks import carlini_attack_batch, manigen_attack_batch
from advkit.config import build_run_config

TRAIN_PER_CLASS = 1200  # 12k train pool; the classifier uses a 10k subset
TEST_PER_CLASS = 200
CORPUS_SEED = 0
DESK_EPOCHS = 10
CLF_SUBSET = 10000
ATTACK_COUNT = 100


@pytest.fixture(scope="session")
def timings():
    return {}


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    synth.write_mnist_corpus(
        path, train_per_class=TRAIN_PER_CLASS, test_per_class=TEST_PER_CLASS,
        seed=CORPUS_SEED,
    )
    synth.write_cifar_corpus(path, train_per_class=20, test_per_class=5, seed=CORPUS_SEED)
    return path


@pytest.fixture(scope="session")
def mnist(corpus_dir):
    return data.load_mnist(corpus_dir, strict_counts=False)


@pytest.fixture(scope="session")
def corpus_digest(mnist):
    h = hashlib.sha256()
    h.update(mnist.train_images.tobytes())
    h.update(mnist.train_labels.tobytes())
    return h.hexdigest()[:12]


def _cached_train(name, spec, train_fn, corpus_digest, timings):
    cache_dir = os.environ.get("ADVKIT_TEST_CACHE", "")
    cache_path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        key = f"{name}-{spec.hash()}-{corpus_digest}"
        cache_path = os.path.join(cache_dir, f"{key}.mgwt")
        if os.path.exists(cache_path):
            return weights.load_weights(spec, cache_path)
    start = time.perf_counter()
    model = train_fn()
    timings[name] = time.perf_counter() - start
    if cache_path:
        weights.save_weights(model, cache_path, seed=CORPUS_SEED)
    return model


@pytest.fixture(scope="session")
def clf_subset_indices(mnist):
    return evaluation.select_samples(mnist.train_labels, CLF_SUBSET, CORPUS_SEED + 17)


@pytest.fixture(scope="session")
def classifier(mnist, clf_subset_indices, corpus_digest, timings):
    """Standalone classifier: 10 epochs on the seeded 10k subset."""
    spec = models.build_classifier("mnist")
    cfg = models.default_train_config(
        "mnist", "classifier", epochs=DESK_EPOCHS, seed=CORPUS_SEED
    )

    def train_fn():
        return models.train(
            spec,
            mnist.train_images[clf_subset_indices],
            mnist.train_labels[clf_subset_indices],
            cfg,
        )

    return _cached_train("classifier", spec, train_fn, corpus_digest, timings)


@pytest.fixture(scope="session")
def autoencoder(mnist, corpus_digest, timings):
    """Reformer/manifold autoencoder: 10 epochs on the full train pool."""
    spec = models.build_autoencoder("mnist")
    cfg = models.default_train_config(
        "mnist", "autoencoder", epochs=DESK_EPOCHS, seed=CORPUS_SEED
    )

    def train_fn():
        return models.train(spec, mnist.train_images, mnist.train_labels, cfg)

    return _cached_train("autoencoder", spec, train_fn, corpus_digest, timings)


@pytest.fixture(scope="session")
def advdef_model(mnist, clf_subset_indices, corpus_digest, timings):
    """Adversarially trained classifier on the same subset as the standalone."""
    spec = models.build_classifier("mnist")
    cfg = models.default_train_config(
        "mnist", "classifier", epochs=DESK_EPOCHS, seed=CORPUS_SEED
    )

    def train_fn():
        return defenses.adversarial_training(
            mnist.train_images[clf_subset_indices],
            mnist.train_labels[clf_subset_indices],
            spec,
            cfg,
            epsilon=0.25,
        )

    return _cached_train("advdef", spec, train_fn, corpus_digest, timings)


@pytest.fixture(scope="session")
def attack_images(mnist, classifier):
    """100 seeded test images the standalone classifier gets right."""
    predicted = models.predict_labels(classifier, mnist.test_images)
    correct = np.flatnonzero(predicted == mnist.test_labels)
    picked = evaluation.select_samples(
        mnist.test_labels[correct], ATTACK_COUNT, CORPUS_SEED + 3
    )
    idx = correct[picked]
    return mnist.test_images[idx], mnist.test_labels[idx]


@pytest.fixture(scope="session")
def shipped_attack_configs():
    """Attack settings exactly as `evaluate` runs them with no config file."""
    return build_run_config({}).attacks


@pytest.fixture(scope="session")
def manigen_results(attack_images, classifier, autoencoder, shipped_attack_configs, timings):
    images, labels = attack_images
    oracle = models.label_oracle(classifier)
    logits_calls = _count_logits_calls(classifier)
    start = time.perf_counter()
    results = manigen_attack_batch(
        images, labels, oracle, autoencoder, shipped_attack_configs["manigen"]
    )
    timings["manigen"] = time.perf_counter() - start
    return {
        "results": results,
        "oracle_queries": oracle.query_count,
        "logits_calls": logits_calls(),
    }


def _count_logits_calls(model):
    """Spy on both logits surfaces (values and graph) until finish() is called.

    The right/wrong oracle goes through predict_labels -> predict_probs,
    so a zero count here means the attack saw neither pre-softmax logits
    nor classifier gradients.
    """
    calls = {"n": 0}
    originals = (models.predict_logits, models.logits_graph)

    def spy_logits(m, image):
        if m is model:
            calls["n"] += 1
        return originals[0](m, image)

    def spy_graph(m, x):
        if m is model:
            calls["n"] += 1
        return originals[1](m, x)

    models.predict_logits = spy_logits
    models.logits_graph = spy_graph

    def finish():
        models.predict_logits, models.logits_graph = originals
        return calls["n"]

    return finish


@pytest.fixture(scope="session")
def carlini_results(attack_images, classifier, shipped_attack_configs, timings):
    images, labels = attack_images
    start = time.perf_counter()
    results = carlini_attack_batch(
        images, labels, lambda t: models.logits_graph(classifier, t),
        shipped_attack_configs["carlini"],
    )
    timings["carlini"] = time.perf_counter() - start
    return results


@pytest.fixture(scope="session")
def magnet(autoencoder, classifier, mnist):
    calib = evaluation.select_samples(mnist.train_labels, 1000, CORPUS_SEED + 1)
    return defenses.magnet_build(
        autoencoder, classifier, mnist.train_images[calib], target_fpr=0.01
    )
