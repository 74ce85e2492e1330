"""Defenses: detector+reformer pipeline and adversarial training.

The detector/reformer defense wraps a trained autoencoder around the
classifier: inputs whose detector score exceeds a threshold calibrated
to a clean false-positive rate are rejected; everything else is
classified from its reconstruction, which washes out small off-manifold
perturbations.  Adversarial training instead hardens the classifier
itself by mixing fresh signed-gradient examples into every batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .errors import NumericError, ShapeError
from .optim import make_optimizer

DETECTOR_KINDS = ("reconstruction_error", "prob_divergence")


@dataclass(frozen=True)
class DefenseVerdict:
    """Outcome for one input: rejected, or classified from the reformed image."""

    outcome: str  # "rejected" | "classified"
    score: float
    label: int | None = None
    reformed: np.ndarray | None = None

    def __post_init__(self):
        if self.outcome not in ("rejected", "classified"):
            raise ValueError(f"bad outcome {self.outcome!r}")
        if (self.label is None) == (self.outcome == "classified"):
            raise ValueError("classified verdicts carry a label; rejected ones do not")


@dataclass(frozen=True)
class MagnetDefense:
    reformer: models.TrainedModel
    classifier: models.TrainedModel
    detector: str
    threshold: float
    temperature: float = 10.0

    def __post_init__(self):
        if self.detector not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector {self.detector!r}")


def detector_scores(reformer, classifier, images, detector, temperature=10.0):
    """Suspicion scores for a batch; higher means farther off-manifold.

    reconstruction_error: ||AE(x) - x||2 / sqrt(m) (per-pixel RMS).
    prob_divergence: Jensen-Shannon divergence (natural log) between the
    temperature-softened class distributions of x and AE(x).
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[np.newaxis]
    recon = models.reconstruct(reformer, images)
    if detector == "reconstruction_error":
        m = float(np.prod(images.shape[1:]))
        diff = (recon.astype(np.float64) - images) ** 2
        return np.sqrt(diff.sum(axis=(1, 2, 3)) / m)
    if detector != "prob_divergence":
        raise ValueError(f"unknown detector {detector!r}")
    z_raw = models.predict_logits(classifier, images) / temperature
    z_ref = models.predict_logits(classifier, recon) / temperature
    return np.array([jensen_shannon(_soft(a), _soft(b)) for a, b in zip(z_raw, z_ref)])


def _soft(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def jensen_shannon(p, q):
    """JSD(p, q) in nats; 0 for identical distributions, ln 2 for disjoint."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mid = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float((a[mask] * np.log(a[mask] / b[mask])).sum())

    return 0.5 * kl(p, mid) + 0.5 * kl(q, mid)


def magnet_build(
    autoencoder,
    classifier,
    validation_images,
    target_fpr=0.01,
    detector="reconstruction_error",
    temperature=10.0,
):
    """Calibrate the rejection threshold on clean validation images.

    The threshold is the (1 - target_fpr) quantile of clean scores
    (lower interpolation), so about target_fpr of clean data scores
    strictly above it; target_fpr=0 keeps every clean image.
    """
    validation_images = np.asarray(validation_images)
    if validation_images.ndim == 3:
        validation_images = validation_images[np.newaxis]
    if validation_images.shape[0] == 0:
        raise ValueError("cannot calibrate on an empty validation set")
    if not 0.0 <= target_fpr < 1.0:
        raise ValueError(f"target_fpr must lie in [0,1), got {target_fpr}")
    scores = detector_scores(
        autoencoder, classifier, validation_images, detector, temperature
    )
    threshold = float(np.quantile(scores, 1.0 - target_fpr, method="lower"))
    return MagnetDefense(
        reformer=autoencoder,
        classifier=classifier,
        detector=detector,
        threshold=threshold,
        temperature=temperature,
    )


def detector_score(defense, image):
    """Score a single image under a calibrated defense."""
    return float(
        detector_scores(
            defense.reformer,
            defense.classifier,
            image,
            defense.detector,
            defense.temperature,
        )[0]
    )


def magnet_predict(defense, image):
    """Defended prediction for one image: reject or classify the reform."""
    return magnet_predict_batch(defense, np.asarray(image)[np.newaxis])[0]


def magnet_predict_batch(defense, images):
    images = np.asarray(images, dtype=np.float32)
    scores = detector_scores(
        defense.reformer, defense.classifier, images, defense.detector,
        defense.temperature,
    )
    reformed = models.reconstruct(defense.reformer, images)
    labels = models.predict_labels(defense.classifier, reformed)
    verdicts = []
    for i in range(images.shape[0]):
        if scores[i] > defense.threshold:
            verdicts.append(DefenseVerdict(outcome="rejected", score=float(scores[i])))
        else:
            verdicts.append(
                DefenseVerdict(
                    outcome="classified",
                    score=float(scores[i]),
                    label=int(labels[i]),
                    reformed=reformed[i],
                )
            )
    return verdicts


# -- adversarial training -----------------------------------------------------


def adversarial_training(images, labels, spec, cfg, epsilon=0.25):
    """Train a classifier on 1:1 clean/adversarial batches.

    Every batch is extended with signed-gradient examples generated
    against the *current* weights (the attack tracks the model as it
    hardens), so each epoch processes exactly twice the clean example
    count.  Architecture and recipe are the standard classifier's.
    """
    from .attacks import fgsm

    if spec.role != "classifier":
        raise ShapeError("adversarial training expects a classifier spec")
    model = models.TrainedModel(spec=spec, params=models.init_params(spec, cfg.seed))
    if cfg.epochs == 0:
        return model
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate)
    n = images.shape[0]
    onehot = np.eye(10, dtype=np.float32)[labels]
    for epoch in range(cfg.epochs):
        order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 1]))
        layer_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 2]))
        idx = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total_loss, total_correct, batches = 0.0, 0, 0
        for start in range(0, n, cfg.batch_size):
            take = idx[start : start + cfg.batch_size]
            clean = images[take]
            hostile = fgsm(clean, labels[take], model, epsilon)
            x = Tensor(np.concatenate([clean, hostile]))
            target = Tensor(np.concatenate([onehot[take], onehot[take]]))
            out = models.forward(model, x, training=True, rng=layer_rng)
            loss = ad.cross_entropy_loss(out, target)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {batches}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item()
            total_correct += int(
                (np.argmax(out.data[: len(take)], axis=-1) == labels[take]).sum()
            )
            batches += 1
        model.history.append(
            {"loss": total_loss / batches, "accuracy": total_correct / n}
        )
    return model
