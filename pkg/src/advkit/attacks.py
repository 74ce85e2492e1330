"""Adversarial example generators.

The black-box generator steers perturbations along the data manifold: it
minimizes visual L2 distance to the anchor while *maximizing* the L2
distance between autoencoder reconstructions (or codes), consulting the
classifier only through a right/wrong oracle.  White-box baselines —
the Carlini L2 attack, FGSM, and BIM — share the same tanh box
transform and distortion bookkeeping.

All iterative attacks are plain Adam descent over an unconstrained
variable ``w``; the box transform keeps every iterate strictly inside
(0,1) so no clipping or projection is ever needed for them.

Shapes: single images (H, W, C) or batches (N, H, W, C).  The batch
entry points optimize all images jointly in one graph — the objectives
are per-image sums, so the trajectories are identical to independent
runs, only faster.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .errors import NumericError, ShapeError
from .optim import make_optimizer

BOX_GUARD = 0.99999  # keeps atanh away from +-1 at the box edges
_SQRT_GUARD = 1e-12  # keeps d(sqrt)/dx finite when a distance hits zero

ATTACK_KINDS = ("manigen", "carlini", "fgsm", "bim")


@dataclass(frozen=True)
class AttackConfig:
    """Knobs shared by the iterative and single-step attacks.

    ``c`` trades distortion against the semantic/classification term;
    ``c_sweep``, when set, reruns the whole search at each listed value
    and keeps the smallest-distortion success per image (the downstream
    default for the black-box attack — a single fixed c either stalls
    short of the boundary or overshoots, depending on how contractive
    the autoencoder is around the anchor).  ``check_period`` is how
    often the black-box oracle is consulted; ``epsilon``/``alpha``/
    ``steps`` drive FGSM and BIM only.
    """

    kind: str = "manigen"
    c: float = 1.0
    c_sweep: tuple[float, ...] | None = None
    iterations: int = 1000
    learning_rate: float = 0.01
    check_period: int = 10
    epsilon: float = 0.25
    alpha: float = 0.05
    steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.c <= 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.c_sweep is not None:
            object.__setattr__(self, "c_sweep", tuple(float(v) for v in self.c_sweep))
            if not self.c_sweep:
                raise ValueError("c_sweep must list at least one value")
            if any(v <= 0 for v in self.c_sweep):
                raise ValueError(f"c_sweep values must be positive, got {self.c_sweep}")
            if self.kind not in ("manigen", "carlini"):
                raise ValueError(f"c_sweep does not apply to {self.kind}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0,1), got {self.epsilon}")
        if self.check_period < 1:
            raise ValueError("check_period must be >= 1")
        if self.kind == "bim" and self.alpha * self.steps < self.epsilon:
            raise ValueError(
                f"bim cannot reach the epsilon ball: alpha*steps = "
                f"{self.alpha * self.steps} < epsilon = {self.epsilon}"
            )


@dataclass
class AdvResult:
    """One attack outcome.

    ``label`` is the classifier's prediction when the attack could see
    it (white-box); black-box runs leave it None and the evaluation
    stage recomputes it.  ``queries`` counts oracle consultations.
    """

    adv: np.ndarray
    success: bool
    label: int | None
    distortion: float
    iterations: int
    queries: int = 0


# -- geometry ---------------------------------------------------------------


def box_transform(x, w):
    """Map unconstrained w onto an image strictly inside (0,1)^m.

    y = 1/2 * tanh(atanh(2*(x - 1/2) * guard) + w) + 1/2, so w = 0
    reproduces x up to the guard factor and every finite w stays in the
    box.  ``x`` is the fixed anchor (plain array); ``w`` may be a graph
    tensor, and gradients flow only through it.
    """
    anchor = np.asarray(x, dtype=np.float64)
    if anchor.min() < 0.0 or anchor.max() > 1.0:
        raise ShapeError("box anchor must lie in [0,1]")
    pre = np.arctanh((2.0 * anchor - 1.0) * BOX_GUARD)
    w_t = w if isinstance(w, Tensor) else Tensor(np.asarray(w))
    if w_t.shape != anchor.shape:
        raise ShapeError(f"w shape {w_t.shape} != anchor shape {anchor.shape}")
    if not np.all(np.isfinite(w_t.data)):
        raise NumericError("non-finite w in box_transform")
    return ad.add(ad.mul(ad.tanh(ad.add(w_t, pre.astype(w_t.data.dtype))), 0.5), 0.5)


def l2_distance(a, b):
    """Euclidean distance between two same-shaped images (plain floats)."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"l2_distance shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def _batch_l2(delta):
    """Differentiable per-image L2 norms of a (N, ...) difference tensor."""
    return ad.sqrt(ad.add(ad.sum_per_item(ad.square(delta)), _SQRT_GUARD))


def _as_batch(x):
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 3:
        return arr[np.newaxis], True
    if arr.ndim == 4:
        return arr, False
    raise ShapeError(f"expected (H,W,C) or (N,H,W,C), got {arr.shape}")


# -- the black-box generator --------------------------------------------------


def manigen_objective(x, w, autoencoder, c, semantic="reconstruct"):
    """Loss at one w: visual L2 minus c times the semantic L2.

    Minimizing pulls the candidate toward the anchor in pixel space
    while pushing its manifold image (reconstruction, or code for the
    encoder variant) away from the anchor's — the direction along which
    class semantics change.  No classifier is involved anywhere.
    """
    xb, squeezed = _as_batch(x)
    w_t = w if isinstance(w, Tensor) else Tensor(np.asarray(w, dtype=np.float32))
    adv = box_transform(xb, w_t if w_t.data.ndim == 4 else ad.reshape(w_t, xb.shape))
    project = models.encode_graph if semantic == "encode" else models.reconstruct_graph
    vis = _batch_l2(ad.sub(adv, xb))
    with ad.no_grad():
        ref = project(autoencoder, Tensor(xb)).data
    sem = _batch_l2(ad.sub(project(autoencoder, adv), ref))
    per_image = ad.sub(vis, ad.mul(sem, c))
    return ad.tsum(per_image) if not squeezed else ad.reshape(per_image, ())


def _run_manigen(images, labels, oracle, autoencoder, cfg, semantic, w_start=None):
    """Joint Adam descent over all images with per-image bookkeeping.

    Returns the per-image results together with the final raw ``w`` so a
    sweep can resume the walk where the previous leg stopped.
    """
    xb = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    n = xb.shape[0]

    checks_made = 1  # the anchor screening below
    best_adv = xb.copy()
    best_dist = np.full(n, np.inf)
    # Anchors the oracle already gets wrong count as immediate successes.
    still_correct = oracle.is_correct_batch(xb, labels)
    best_dist[~still_correct] = 0.0
    iterations_used = np.zeros(n, dtype=np.int64)

    if w_start is None:
        w = Tensor(np.zeros_like(xb), requires_grad=True)
    else:
        w = Tensor(np.array(w_start, dtype=np.float32), requires_grad=True)
    opt = make_optimizer("adam", [w], cfg.learning_rate)
    with ad.no_grad():
        project = models.encode_graph if semantic == "encode" else models.reconstruct_graph
        ref = project(autoencoder, Tensor(xb)).data

    for step in range(1, cfg.iterations + 1):
        adv = box_transform(xb, w)
        vis = _batch_l2(ad.sub(adv, xb))
        sem = _batch_l2(ad.sub(project(autoencoder, adv), ref))
        loss = ad.tsum(ad.sub(vis, ad.mul(sem, cfg.c)))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.check_period == 0 or step == cfg.iterations:
            with ad.no_grad():
                candidate = box_transform(xb, w).data
            checks_made += 1
            fooled = ~oracle.is_correct_batch(candidate, labels)
            dist = np.sqrt(
                ((candidate.astype(np.float64) - xb) ** 2).sum(axis=(1, 2, 3))
            )
            better = fooled & (dist < best_dist)
            best_adv[better] = candidate[better]
            best_dist[better] = dist[better]
            iterations_used[better] = step

    with ad.no_grad():
        final = box_transform(xb, w).data
    queries = checks_made  # oracle consultations per image
    results = []
    for i in range(n):
        if np.isfinite(best_dist[i]):
            results.append(
                AdvResult(
                    adv=best_adv[i],
                    success=True,
                    label=None,
                    distortion=float(best_dist[i]),
                    iterations=int(iterations_used[i]),
                    queries=queries,
                )
            )
        else:
            results.append(
                AdvResult(
                    adv=final[i],
                    success=False,
                    label=None,
                    distortion=l2_distance(final[i], xb[i]),
                    iterations=cfg.iterations,
                    queries=queries,
                )
            )
    return results, w.data


def manigen_attack(x, true_label, oracle, autoencoder, cfg):
    """Black-box attack on one image; see module docstring for the idea."""
    results, _ = _run_manigen(
        x[np.newaxis], np.array([true_label]), oracle, autoencoder, cfg, "reconstruct"
    )
    return results[0]


def manigen_encoder_variant(x, true_label, oracle, autoencoder, cfg):
    """Same search, but the semantic term uses codes, not reconstructions."""
    results, _ = _run_manigen(
        x[np.newaxis], np.array([true_label]), oracle, autoencoder, cfg, "encode"
    )
    return results[0]


def _merge_sweep_runs(runs):
    """Combine per-c result lists: keep each image's cheapest success.

    Queries accumulate across the whole sweep — every run really did
    consult the oracle.  Images that never succeed keep the last run's
    final iterate.
    """
    merged = list(runs[0])
    total_queries = [r.queries for r in runs[0]]
    for run in runs[1:]:
        for i, candidate in enumerate(run):
            total_queries[i] += candidate.queries
            current = merged[i]
            take = (
                candidate.success
                and (not current.success or candidate.distortion < current.distortion)
            )
            if take or not current.success:
                merged[i] = candidate
    return [replace(r, queries=q) for r, q in zip(merged, total_queries)]


def manigen_attack_batch(images, labels, oracle, autoencoder, cfg, semantic="reconstruct"):
    """Attack a batch jointly; equivalent to per-image runs, much faster.

    With ``cfg.c_sweep`` set, the search escalates through the listed c
    values and each leg resumes from the previous leg's endpoint, so a
    stronger push continues past the radius where a gentler one stalled
    instead of re-walking the same ground.  Each image keeps its
    smallest-distortion success across the whole sweep.
    """
    runs, w = [], None
    for c in cfg.c_sweep or (cfg.c,):
        leg, w = _run_manigen(
            images, labels, oracle, autoencoder,
            replace(cfg, c=c, c_sweep=None), semantic, w_start=w,
        )
        runs.append(leg)
    return _merge_sweep_runs(runs)


# -- white-box baselines ------------------------------------------------------


def carlini_attack(x, true_label, logits_fn, cfg):
    """Carlini's untargeted L2 attack via the same box transform.

    Minimizes ||adv - x||2 + c * max(0, Z_t - max_{i != t} Z_i) with Adam;
    every iterate's argmax is free to read here, so the least-distorted
    misclassified iterate over the whole run is returned.
    """
    return carlini_attack_batch(x[np.newaxis], np.array([true_label]), logits_fn, cfg)[0]


def carlini_attack_batch(images, labels, logits_fn, cfg):
    """Batch Carlini; honors ``cfg.c_sweep`` like the black-box attack."""
    runs = [
        _run_carlini(images, labels, logits_fn, replace(cfg, c=c, c_sweep=None))
        for c in (cfg.c_sweep or (cfg.c,))
    ]
    return _merge_sweep_runs(runs)


def _run_carlini(images, labels, logits_fn, cfg):
    xb = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.intp)
    n = xb.shape[0]

    best_adv = xb.copy()
    best_dist = np.full(n, np.inf)
    best_label = np.full(n, -1, dtype=np.int64)
    iterations_used = np.zeros(n, dtype=np.int64)

    def book_keep(candidate, logits, step):
        predicted = np.atleast_1d(logits.argmax(axis=-1))
        fooled = predicted != labels
        dist = np.sqrt(((candidate.astype(np.float64) - xb) ** 2).sum(axis=(1, 2, 3)))
        better = fooled & (dist < best_dist)
        best_adv[better] = candidate[better]
        best_dist[better] = dist[better]
        best_label[better] = predicted[better]
        iterations_used[better] = step

    w = Tensor(np.zeros_like(xb), requires_grad=True)
    opt = make_optimizer("adam", [w], cfg.learning_rate)
    # The anchor itself is iterate 0: already-misclassified inputs are
    # immediate successes with (near) zero distortion.
    with ad.no_grad():
        book_keep(xb, logits_fn(Tensor(xb)).data, 0)

    for step in range(1, cfg.iterations + 1):
        adv = box_transform(xb, w)
        logits = logits_fn(adv)
        target_logit = ad.gather_last(logits, labels)
        runner_up = ad.max_last(logits, exclude=labels)
        penalty = ad.relu(ad.sub(target_logit, runner_up))
        vis = _batch_l2(ad.sub(adv, xb))
        loss = ad.tsum(ad.add(vis, ad.mul(penalty, cfg.c)))
        opt.zero_grad()
        loss.backward()
        opt.step()
        with ad.no_grad():
            candidate = box_transform(xb, w).data
            book_keep(candidate, logits_fn(Tensor(candidate)).data, step)

    with ad.no_grad():
        final = box_transform(xb, w).data
        final_label = np.atleast_1d(logits_fn(Tensor(final)).data.argmax(axis=-1))
    results = []
    for i in range(n):
        if np.isfinite(best_dist[i]):
            results.append(
                AdvResult(
                    adv=best_adv[i],
                    success=True,
                    label=int(best_label[i]),
                    distortion=float(best_dist[i]),
                    iterations=int(iterations_used[i]),
                )
            )
        else:
            results.append(
                AdvResult(
                    adv=final[i],
                    success=False,
                    label=int(final_label[i]),
                    distortion=l2_distance(final[i], xb[i]),
                    iterations=cfg.iterations,
                )
            )
    return results


def _ce_input_gradient(classifier, images, labels):
    """d cross_entropy / d input at the given points."""
    x = Tensor(np.asarray(images, dtype=np.float32), requires_grad=True)
    probs = models.forward(classifier, x)
    onehot = np.eye(10, dtype=np.float32)[np.asarray(labels, dtype=np.intp)]
    ad.cross_entropy_loss(probs, Tensor(onehot)).backward()
    return x.grad


def fgsm(x, true_label, classifier, epsilon):
    """One signed-gradient step of size epsilon, clipped into [0,1]."""
    xb, squeezed = _as_batch(x)
    labels = np.atleast_1d(true_label)
    grad = _ce_input_gradient(classifier, xb, labels)
    adv = np.clip(xb + np.float32(epsilon) * np.sign(grad), 0.0, 1.0)
    return adv[0] if squeezed else adv


def bim(x, true_label, classifier, epsilon, alpha, steps):
    """Iterated FGSM, re-projected into the epsilon ball every step."""
    if alpha > epsilon:
        raise ValueError(f"alpha {alpha} must not exceed epsilon {epsilon}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    xb, squeezed = _as_batch(x)
    labels = np.atleast_1d(true_label)
    low = np.clip(xb - np.float32(epsilon), 0.0, 1.0)
    high = np.clip(xb + np.float32(epsilon), 0.0, 1.0)
    adv = xb.copy()
    for _ in range(steps):
        grad = _ce_input_gradient(classifier, adv, labels)
        adv = np.clip(adv + np.float32(alpha) * np.sign(grad), low, high)
    return adv[0] if squeezed else adv


def sign_attack_results(kind, images, labels, classifier, cfg):
    """Run fgsm/bim over a batch and wrap outcomes as AdvResults."""
    if kind == "fgsm":
        adv = fgsm(images, labels, classifier, cfg.epsilon)
    elif kind == "bim":
        adv = bim(images, labels, classifier, cfg.epsilon, cfg.alpha, cfg.steps)
    else:
        raise ValueError(f"not a sign attack: {kind!r}")
    predicted = models.predict_labels(classifier, adv)
    return [
        AdvResult(
            adv=adv[i],
            success=bool(predicted[i] != labels[i]),
            label=int(predicted[i]),
            distortion=l2_distance(adv[i], images[i]),
            iterations=1 if kind == "fgsm" else cfg.steps,
        )
        for i in range(adv.shape[0])
    ]


def run_attack_batch(cfg, images, labels, classifier=None, autoencoder=None, oracle=None):
    """Dispatch a batch attack by cfg.kind, wiring the right model surface."""
    if cfg.kind == "manigen":
        if autoencoder is None or oracle is None:
            raise ValueError("manigen needs an autoencoder and an oracle")
        return manigen_attack_batch(images, labels, oracle, autoencoder, cfg)
    if classifier is None:
        raise ValueError(f"{cfg.kind} needs the classifier")
    if cfg.kind == "carlini":
        return carlini_attack_batch(
            images, labels, lambda t: models.logits_graph(classifier, t), cfg
        )
    return sign_attack_results(cfg.kind, images, labels, classifier, cfg)
