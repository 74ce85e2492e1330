"""Model zoo: layer/model specs, builders, training, and prediction.

Two architectures per dataset are supported: a convolutional
autoencoder (3 conv+pool encoder stages, 3 conv+upsample decoder stages,
sigmoid output) and a 10-class classifier (a small conv net for 28x28
grayscale, an allCNN for 32x32 RGB).  Builders are data-driven from
``LayerSpec`` rows so specs stay statically shape-checkable.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError, ShapeError
from .optim import make_optimizer

LAYER_KINDS = (
    "conv",
    "pool_max",
    "pool_avg",
    "upsample",
    "dense",
    "dropout",
    "global_avg_pool",
    "flatten",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    channels: int = 0
    units: int = 0
    rate: float = 0.0
    activation: str = "none"
    padding: str = "same"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple
    role: str  # "classifier" | "autoencoder"
    code_index: int | None = None  # autoencoders: first decoder layer index

    def __post_init__(self):
        if self.role not in ("classifier", "autoencoder"):
            raise ValueError(f"unknown model role {self.role!r}")
        shape = self.output_shape()  # raises if layers do not compose
        if self.role == "autoencoder":
            if self.code_index is None:
                raise ValueError("autoencoder spec needs a code_index")
            if shape != tuple(self.input_shape):
                raise ShapeError(
                    f"autoencoder output {shape} != input {tuple(self.input_shape)}"
                )

    def output_shape(self):
        return shape_after(self.layers, tuple(self.input_shape), len(self.layers))

    def code_shape(self):
        if self.code_index is None:
            raise ValueError("not an autoencoder spec")
        return shape_after(self.layers, tuple(self.input_shape), self.code_index)

    def canonical(self):
        rows = []
        for ls in self.layers:
            rows.append(
                f"{ls.kind},{ls.kernel},{ls.channels},{ls.units},{ls.rate!r},"
                f"{ls.activation},{ls.padding}"
            )
        head = f"{self.role};{'x'.join(str(d) for d in self.input_shape)};{self.code_index}"
        return head + ";" + "|".join(rows)

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def shape_after(layers, input_shape, count):
    """Shape produced by the first ``count`` layers (static check)."""
    shape = tuple(input_shape)
    for ls in layers[:count]:
        if ls.kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"conv needs a 3-d input, got {shape}")
            h, w, c = shape
            if ls.padding == "valid":
                h, w = h - ls.kernel + 1, w - ls.kernel + 1
            shape = (h, w, ls.channels)
        elif ls.kind in ("pool_max", "pool_avg"):
            h, w, c = shape
            shape = ((h + 1) // 2, (w + 1) // 2, c)
        elif ls.kind == "upsample":
            h, w, c = shape
            shape = (2 * h, 2 * w, c)
        elif ls.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif ls.kind == "global_avg_pool":
            shape = (shape[-1],)
        elif ls.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"dense needs a flat input, got {shape}")
            shape = (ls.units,)
        elif ls.kind == "dropout":
            pass
    return shape


# -- builders ---------------------------------------------------------------


def _conv(channels, activation="relu", padding="same"):
    return LayerSpec("conv", kernel=3, channels=channels, activation=activation, padding=padding)


def build_autoencoder(dataset):
    """Conv autoencoder: 16/8/1 max-pool for 28x28 gray, 32/16/3 avg-pool
    for 32x32 RGB.  Code shapes: 4x4x8 (128 dims) and 4x4x16 (256 dims).

    The 28x28 variant needs one valid-padding conv in the decoder so the
    three 2x upsamplings land back on 28 (4 -> 8 -> 16 -> 14 -> 28).
    """
    if dataset == "mnist":
        x1, x2, x3, pool = 16, 8, 1, "pool_max"
        input_shape = (28, 28, 1)
        decoder_x1_padding = "valid"
    elif dataset == "cifar10":
        x1, x2, x3, pool = 32, 16, 3, "pool_avg"
        input_shape = (32, 32, 3)
        decoder_x1_padding = "same"
    else:
        raise ValueError(f"unknown dataset {dataset!r}")
    layers = (
        _conv(x1),
        LayerSpec(pool),
        _conv(x2),
        LayerSpec(pool),
        _conv(x2),
        LayerSpec(pool),
        _conv(x2),
        LayerSpec("upsample"),
        _conv(x2),
        LayerSpec("upsample"),
        _conv(x1, padding=decoder_x1_padding),
        LayerSpec("upsample"),
        _conv(x3, activation="sigmoid"),
    )
    return ModelSpec(layers, input_shape, "autoencoder", code_index=6)


def build_classifier(dataset):
    """10-class classifier: 3 conv/max-pool stages + two dense layers for
    28x28 gray; the allCNN stack for 32x32 RGB."""
    if dataset == "mnist":
        layers = (
            _conv(16),
            LayerSpec("pool_max"),
            _conv(8),
            LayerSpec("pool_max"),
            _conv(8),
            LayerSpec("pool_max"),
            LayerSpec("flatten"),
            LayerSpec("dense", units=128, activation="relu"),
            LayerSpec("dense", units=10, activation="softmax"),
        )
        return ModelSpec(layers, (28, 28, 1), "classifier")
    if dataset == "cifar10":
        layers = (
            _conv(96),
            _conv(96),
            _conv(96),
            LayerSpec("pool_max"),
            LayerSpec("dropout", rate=0.5),
            _conv(192),
            _conv(192),
            _conv(192),
            LayerSpec("pool_max"),
            LayerSpec("dropout", rate=0.5),
            _conv(192),
            LayerSpec("conv", kernel=1, channels=192, activation="relu"),
            LayerSpec("conv", kernel=1, channels=10, activation="relu"),
            LayerSpec("global_avg_pool"),
            LayerSpec("dense", units=10, activation="softmax"),
        )
        return ModelSpec(layers, (32, 32, 3), "classifier")
    raise ValueError(f"unknown dataset {dataset!r}")


# -- parameters and the forward pass ----------------------------------------


def init_params(spec, seed, dtype=np.float32):
    """Glorot-uniform kernels/weights, zero biases, from a seeded RNG."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    params = {}
    shape = tuple(spec.input_shape)
    for i, ls in enumerate(spec.layers):
        name = f"layer{i:02d}"
        if ls.kind == "conv":
            cin = shape[-1]
            fan_in = ls.kernel * ls.kernel * cin
            fan_out = ls.kernel * ls.kernel * ls.channels
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            k = rng.uniform(-limit, limit, (ls.kernel, ls.kernel, cin, ls.channels))
            params[f"{name}.kernel"] = Tensor(k.astype(dtype), requires_grad=True)
            params[f"{name}.bias"] = Tensor(
                np.zeros(ls.channels, dtype=dtype), requires_grad=True
            )
        elif ls.kind == "dense":
            nin = shape[0]
            limit = np.sqrt(6.0 / (nin + ls.units))
            w = rng.uniform(-limit, limit, (nin, ls.units))
            params[f"{name}.weights"] = Tensor(w.astype(dtype), requires_grad=True)
            params[f"{name}.bias"] = Tensor(
                np.zeros(ls.units, dtype=dtype), requires_grad=True
            )
        shape = shape_after(spec.layers, spec.input_shape, i + 1)
    return params


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict
    history: list = field(default_factory=list)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]


def run_layers(model, x, start=0, stop=None, training=False, rng=None,
               stop_before_final_activation=False):
    """Run layers [start, stop) on a Tensor; the workhorse for every surface."""
    layers = model.spec.layers
    stop = len(layers) if stop is None else stop
    out = x
    for i in range(start, stop):
        ls = layers[i]
        name = f"layer{i:02d}"
        if ls.kind == "conv":
            out = ad.conv2d(
                out, model.params[f"{name}.kernel"], model.params[f"{name}.bias"],
                padding=ls.padding,
            )
        elif ls.kind == "pool_max":
            out = ad.pool2x2(out, "max")
        elif ls.kind == "pool_avg":
            out = ad.pool2x2(out, "avg")
        elif ls.kind == "upsample":
            out = ad.upsample2x2(out)
        elif ls.kind == "flatten":
            out = ad.flatten(out)
        elif ls.kind == "global_avg_pool":
            out = ad.global_avg_pool(out)
        elif ls.kind == "dense":
            out = ad.dense(
                out, model.params[f"{name}.weights"], model.params[f"{name}.bias"]
            )
        elif ls.kind == "dropout":
            if training:
                out = ad.dropout(out, ls.rate, rng)
        if ls.activation != "none":
            if stop_before_final_activation and i == stop - 1:
                break
            out = ad.activation(ls.activation, out)
    return out


def forward(model, x, training=False, rng=None):
    """Full forward pass; returns probabilities (classifier) or the
    reconstruction (autoencoder)."""
    return run_layers(model, x, training=training, rng=rng)


def logits_graph(model, x):
    """Pre-softmax logits of the final dense layer, as a graph tensor."""
    _require_role(model, "classifier")
    return run_layers(model, x, stop_before_final_activation=True)


def _require_role(model, role):
    if model.spec.role != role:
        raise ValueError(f"model role is {model.spec.role!r}, need {role!r}")


def _check_image(model, image):
    shape = tuple(image.shape)
    expect = tuple(model.spec.input_shape)
    if shape != expect and shape[1:] != expect:
        raise ShapeError(f"image shape {shape} does not match model input {expect}")


def predict_probs(model, images):
    _require_role(model, "classifier")
    _check_image(model, images)
    with ad.no_grad():
        return forward(model, Tensor(images)).data


def predict_logits(model, image):
    """Pre-softmax logits Z; softmax(Z) equals the probability output."""
    _require_role(model, "classifier")
    _check_image(model, image)
    with ad.no_grad():
        return logits_graph(model, Tensor(image)).data


def predict_label(model, image):
    """Argmax class of a single image; ties break to the lowest index."""
    probs = predict_probs(model, image)
    return int(np.argmax(probs, axis=-1))


def predict_labels(model, images):
    probs = predict_probs(model, images)
    return np.argmax(probs, axis=-1)


def encode(model, image):
    """Encoder-stack output (the manifold code)."""
    _require_role(model, "autoencoder")
    _check_image(model, image)
    with ad.no_grad():
        return run_layers(model, Tensor(image), stop=model.spec.code_index).data


def reconstruct(model, image):
    """Full autoencoder output; sigmoid head keeps values in (0, 1)."""
    _require_role(model, "autoencoder")
    _check_image(model, image)
    with ad.no_grad():
        return forward(model, Tensor(image)).data


def encode_graph(model, x):
    _require_role(model, "autoencoder")
    return run_layers(model, x, stop=model.spec.code_index)


def reconstruct_graph(model, x):
    _require_role(model, "autoencoder")
    return forward(model, x)


class Oracle:
    """Right/wrong prediction oracle: the only classifier surface a
    black-box attack may consult.  Exposes nothing but ``is_correct``
    and a thread-safe ``query_count``."""

    __slots__ = ("is_correct", "is_correct_batch", "_count", "_lock")

    @property
    def query_count(self):
        return self._count


def label_oracle(model):
    _require_role(model, "classifier")
    oracle = Oracle.__new__(Oracle)
    oracle._count = 0
    oracle._lock = threading.Lock()

    def is_correct(image, true_label):
        with oracle._lock:
            oracle._count += 1
        return predict_label(model, image) == int(true_label)

    def is_correct_batch(images, true_labels):
        n = images.shape[0]
        with oracle._lock:
            oracle._count += n
        return predict_labels(model, images) == np.asarray(true_labels)

    oracle.is_correct = is_correct
    oracle.is_correct_batch = is_correct_batch
    return oracle


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str
    learning_rate: float
    loss: str
    batch_size: int
    epochs: int
    shuffle: bool = True
    augment: str = "none"  # "none" | "shift_flip"
    seed: int = 0


_DEFAULT_TRAIN = {
    ("mnist", "autoencoder"): TrainConfig("adam", 0.01, "bce", 128, 50),
    ("cifar10", "autoencoder"): TrainConfig("adam", 0.01, "mse", 256, 100),
    ("mnist", "classifier"): TrainConfig("adam", 0.01, "cross_entropy", 128, 100),
    ("cifar10", "classifier"): TrainConfig(
        "sgd", 0.01, "cross_entropy", 32, 350, augment="shift_flip"
    ),
}


def default_train_config(dataset, role, **overrides):
    cfg = _DEFAULT_TRAIN[(dataset, role)]
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _augment_shift_flip(batch, rng):
    """Width/height shift by up to 20% (zero fill) plus horizontal flips."""
    n, h, w, _ = batch.shape
    out = np.zeros_like(batch)
    max_dy, max_dx = int(round(0.2 * h)), int(round(0.2 * w))
    dys = rng.integers(-max_dy, max_dy + 1, size=n)
    dxs = rng.integers(-max_dx, max_dx + 1, size=n)
    flips = rng.random(n) < 0.5
    for i in range(n):
        img = batch[i, :, ::-1] if flips[i] else batch[i]
        dy, dx = dys[i], dxs[i]
        ys = slice(max(0, dy), min(h, h + dy))
        yd = slice(max(0, -dy), min(h, h - dy))
        xs = slice(max(0, dx), min(w, w + dx))
        xd = slice(max(0, -dx), min(w, w - dx))
        out[i][yd, xd] = img[ys, xs]
    return out


def train(spec, images, labels, cfg):
    """Train a model from scratch; returns the model with per-epoch history.

    ``images`` must already be scaled to [0,1] float32.  For classifiers,
    ``labels`` are integer classes (one-hot encoded here); autoencoders
    ignore ``labels`` and reconstruct their inputs.
    """
    model = TrainedModel(spec=spec, params=init_params(spec, cfg.seed))
    if cfg.epochs == 0:
        return model
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate)
    n = images.shape[0]
    is_clf = spec.role == "classifier"
    onehot = np.eye(10, dtype=np.float32)[labels] if is_clf else None
    for epoch in range(cfg.epochs):
        order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 1]))
        layer_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 2]))
        idx = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        total_loss, total_correct, batches = 0.0, 0, 0
        for start in range(0, n, cfg.batch_size):
            take = idx[start : start + cfg.batch_size]
            batch = images[take]
            if cfg.augment == "shift_flip":
                batch = _augment_shift_flip(batch, layer_rng)
            x = Tensor(batch)
            out = forward(model, x, training=True, rng=layer_rng)
            target = Tensor(onehot[take]) if is_clf else Tensor(batch)
            loss = ad.loss(cfg.loss, out, target)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {batches}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item()
            if is_clf:
                total_correct += int(
                    (np.argmax(out.data, axis=-1) == labels[take]).sum()
                )
            batches += 1
        record = {"loss": total_loss / batches}
        if is_clf:
            record["accuracy"] = total_correct / n
        model.history.append(record)
    return model
