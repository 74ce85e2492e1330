"""Deterministic synthetic digit corpus, written in the real file formats.

Ten stroke-based glyph classes are rasterized with per-sample affine
jitter, stroke-width and intensity variation, and mild pixel noise, then
serialized as genuine IDX (MNIST layout) or CIFAR-10 binary files.  The
loaders in :mod:`advkit.data` read these files exactly as they would the
official ones, so every downstream stage — training, attacks, defenses,
evaluation — runs end-to-end without a network connection.  Dropping the
official files into the data directory swaps in the real corpus with no
code change.

Everything is keyed off integer seeds through ``SeedSequence``:
identical seeds give byte-identical files.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .data import CIFAR_TEST_FILE, CIFAR_TRAIN_FILES, MNIST_FILES, interleaved_to_planar

# -- glyph geometry ---------------------------------------------------------


def _ring(cx, cy, r, n=10, ry=None):
    """Closed polyline approximating an ellipse, as (n, 2, 2) segments."""
    ry = r if ry is None else ry
    angles = np.linspace(0.0, 2.0 * np.pi, n + 1)
    pts = np.stack([cx + r * np.sin(angles), cy - ry * np.cos(angles)], axis=1)
    return np.stack([pts[:-1], pts[1:]], axis=1)


def _path(*points):
    """Open polyline through the given (x, y) points, as (n-1, 2, 2)."""
    pts = np.asarray(points, dtype=np.float64)
    return np.stack([pts[:-1], pts[1:]], axis=1)


def digit_segments(digit):
    """Line segments of one glyph in unit coordinates (x right, y down)."""
    if digit == 0:
        return _ring(0.5, 0.5, 0.20, ry=0.33)
    if digit == 1:
        return np.concatenate(
            [_path((0.36, 0.30), (0.52, 0.16)), _path((0.52, 0.16), (0.52, 0.84))]
        )
    if digit == 2:
        return _path(
            (0.32, 0.30), (0.42, 0.17), (0.60, 0.16), (0.68, 0.30),
            (0.62, 0.45), (0.32, 0.82), (0.70, 0.82),
        )
    if digit == 3:
        return _path(
            (0.33, 0.20), (0.62, 0.17), (0.68, 0.32), (0.50, 0.47),
            (0.68, 0.60), (0.64, 0.80), (0.33, 0.83),
        )
    if digit == 4:
        return np.concatenate(
            [
                _path((0.40, 0.16), (0.30, 0.58), (0.72, 0.58)),
                _path((0.60, 0.34), (0.60, 0.86)),
            ]
        )
    if digit == 5:
        return _path(
            (0.68, 0.17), (0.34, 0.17), (0.33, 0.46), (0.58, 0.44),
            (0.70, 0.60), (0.62, 0.80), (0.32, 0.82),
        )
    if digit == 6:
        return np.concatenate(
            [
                _path((0.64, 0.15), (0.42, 0.38), (0.33, 0.60)),
                _ring(0.50, 0.68, 0.17, n=8, ry=0.16),
            ]
        )
    if digit == 7:
        return _path((0.31, 0.18), (0.70, 0.18), (0.46, 0.85))
    if digit == 8:
        return np.concatenate(
            [_ring(0.50, 0.32, 0.15, n=8, ry=0.15), _ring(0.50, 0.67, 0.18, n=8, ry=0.17)]
        )
    if digit == 9:
        return np.concatenate(
            [
                _ring(0.50, 0.34, 0.17, n=8, ry=0.17),
                _path((0.67, 0.36), (0.58, 0.85)),
            ]
        )
    raise ValueError(f"digit must be 0..9, got {digit}")


_MAX_SEGMENTS = max(digit_segments(d).shape[0] for d in range(10))


def _padded_segments(digit):
    """Glyph segments padded to a common count (extras repeat the last)."""
    segs = digit_segments(digit)
    if segs.shape[0] < _MAX_SEGMENTS:
        pad = np.repeat(segs[-1:], _MAX_SEGMENTS - segs.shape[0], axis=0)
        segs = np.concatenate([segs, pad])
    return segs


# -- rasterization ----------------------------------------------------------


def render_digits(digits, seed, size=28, _chunk=512):
    """Rasterize a batch of digit glyphs with per-sample jitter.

    Returns uint8 images shaped (N, size, size).  Jitter covers rotation,
    anisotropic scale, translation, stroke width, ink intensity, and
    additive Gaussian noise, all drawn from ``SeedSequence([seed, ...])``
    streams so the batch is reproducible element-for-element.  Work is
    chunked so peak memory stays flat regardless of N (chunking cannot
    change the output: every sample's jitter comes from its own slice of
    the pre-drawn parameter arrays).
    """
    digits = np.asarray(digits, dtype=np.int64)
    n = digits.shape[0]
    if n > _chunk:
        out = np.empty((n, size, size), dtype=np.uint8)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E6]))
        seeds = rng.integers(0, 2**63, size=(n + _chunk - 1) // _chunk)
        for k, start in enumerate(range(0, n, _chunk)):
            stop = min(start + _chunk, n)
            out[start:stop] = render_digits(digits[start:stop], seeds[k], size)
        return out
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E6]))

    segs = np.stack([_padded_segments(d) for d in range(10)])[digits]  # (N,S,2,2)
    theta = rng.uniform(-0.30, 0.30, n)
    sx = rng.uniform(0.80, 1.15, n)
    sy = rng.uniform(0.80, 1.15, n)
    tx = rng.uniform(-0.09, 0.09, n)
    ty = rng.uniform(-0.09, 0.09, n)
    width = rng.uniform(0.035, 0.065, n)
    ink = rng.uniform(0.60, 1.00, n)
    noise_sigma = rng.uniform(0.004, 0.018, n)
    # Smooth per-image warp field coefficients (constant + linear + cross
    # terms): the same displacement applies to every occurrence of a
    # point, so strokes that share corners stay connected.
    warp = rng.normal(0.0, 0.045, (n, 2, 4))

    # Affine jitter about the glyph center (0.5, 0.5).
    cos, sin = np.cos(theta), np.sin(theta)
    rot = np.stack(
        [np.stack([cos * sx, -sin * sy], -1), np.stack([sin * sx, cos * sy], -1)], -2
    )  # (N, 2, 2)
    centered = segs - 0.5
    pts = np.einsum("nij,nskj->nski", rot, centered) + 0.5
    pts[..., 0] += tx[:, None, None]
    pts[..., 1] += ty[:, None, None]
    # Bend the glyph: x' = x + dx(x,y), y' = y + dy(x,y) with
    # d(u, v) = c0 + c1*u + c2*v + c3*u*v per axis.
    u, v = pts[..., 0] - 0.5, pts[..., 1] - 0.5
    basis = np.stack([np.ones_like(u), u, v, u * v], axis=-1)  # (N,S,2,4)
    pts = pts + np.einsum("nska,nda->nskd", basis, warp)

    # Distance from every pixel center to every segment.
    grid = (np.arange(size) + 0.5) / size
    px, py = np.meshgrid(grid, grid)  # row-major: py varies along axis 0
    pix = np.stack([px.ravel(), py.ravel()], axis=-1)  # (P, 2)
    a = pts[:, :, None, 0, :]  # (N, S, 1, 2)
    b = pts[:, :, None, 1, :]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = np.clip(((pix - a) * ab).sum(-1) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    dist = np.sqrt(((pix - proj) ** 2).sum(-1)).min(axis=1)  # (N, P)

    # Smooth stroke profile: solid inside the half-width, ~2px falloff.
    falloff = 1.8 / size
    img = np.clip((width[:, None] + falloff - dist) / falloff, 0.0, 1.0)
    img *= ink[:, None]
    img += rng.standard_normal(img.shape) * noise_sigma[:, None]
    img = np.clip(img, 0.0, 1.0).reshape(n, size, size)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def _balanced_labels(per_class, seed):
    labels = np.repeat(np.arange(10, dtype=np.uint8), per_class)
    order = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0D])).permutation(
        labels.size
    )
    return labels[order]


# -- IDX / CIFAR writers ----------------------------------------------------


def write_idx_images(path, images):
    """Serialize (N, H, W) or (N, H, W, 1) uint8 images as an IDX3 file."""
    arr = np.asarray(images, dtype=np.uint8)
    if arr.ndim == 4:
        arr = arr[..., 0]
    n, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, h, w))
        fh.write(arr.tobytes())


def write_idx_labels(path, labels):
    arr = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, arr.shape[0]))
        fh.write(arr.tobytes())


def write_cifar_batch(path, images, labels):
    """Serialize (N, 32, 32, 3) uint8 images as one CIFAR-10 binary batch."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    planar = interleaved_to_planar(images)
    records = np.concatenate([labels[:, None], planar], axis=1)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


# -- corpus assembly --------------------------------------------------------


def write_mnist_corpus(data_dir, train_per_class=6000, test_per_class=1000, seed=0):
    """Generate and write the MNIST-layout synthetic corpus.

    Defaults reproduce the official 60k/10k split sizes with exactly
    balanced classes.  Returns the four file paths.
    """
    os.makedirs(data_dir, exist_ok=True)
    chunks = {
        "train": _balanced_labels(train_per_class, seed),
        "test": _balanced_labels(test_per_class, seed + 1),
    }
    paths = {}
    for i, (split, labels) in enumerate(chunks.items()):
        images = render_digits(labels, seed=seed * 2 + i, size=28)
        img_path = os.path.join(data_dir, MNIST_FILES[f"{split}_images"])
        lab_path = os.path.join(data_dir, MNIST_FILES[f"{split}_labels"])
        write_idx_images(img_path, images)
        write_idx_labels(lab_path, labels)
        paths[f"{split}_images"] = img_path
        paths[f"{split}_labels"] = lab_path
    return paths


def _colorize(gray, seed):
    """Lift grayscale glyphs onto colored backgrounds: (N,32,32) -> (N,32,32,3)."""
    n, h, w = gray.shape
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC1FA]))
    fg = rng.uniform(0.55, 1.0, (n, 1, 1, 3))
    bg = rng.uniform(0.0, 0.35, (n, 1, 1, 3))
    ramp = np.linspace(0.0, 1.0, h)[None, :, None, None]
    tilt = rng.uniform(-0.15, 0.15, (n, 1, 1, 3))
    alpha = gray[..., None] / 255.0
    img = bg + tilt * ramp + alpha * (fg - bg)
    img += rng.standard_normal(img.shape) * 0.02
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_cifar_corpus(data_dir, train_per_class=50, test_per_class=10, seed=0):
    """Generate and write a CIFAR-10-layout synthetic corpus.

    Small by default: the reduced-scale pipeline only exercises shapes
    and loaders on CIFAR.  Pass ``train_per_class=5000, test_per_class=1000``
    for an official-size corpus.
    """
    os.makedirs(data_dir, exist_ok=True)
    train_labels = _balanced_labels(train_per_class, seed + 2)
    test_labels = _balanced_labels(test_per_class, seed + 3)
    train_gray = render_digits(train_labels, seed=seed * 2 + 7, size=32)
    test_gray = render_digits(test_labels, seed=seed * 2 + 8, size=32)
    train_images = _colorize(train_gray, seed + 4)
    test_images = _colorize(test_gray, seed + 5)

    paths = []
    per_batch = [len(chunk) for chunk in np.array_split(np.arange(len(train_labels)), 5)]
    start = 0
    for fname, count in zip(CIFAR_TRAIN_FILES, per_batch):
        path = os.path.join(data_dir, fname)
        write_cifar_batch(
            path, train_images[start : start + count], train_labels[start : start + count]
        )
        paths.append(path)
        start += count
    test_path = os.path.join(data_dir, CIFAR_TEST_FILE)
    write_cifar_batch(test_path, test_images, test_labels)
    paths.append(test_path)
    return paths
