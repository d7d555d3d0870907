"""Dataset ingestion and synthetic data generation for the experiment runners.

``load_uci`` parses the classic UCI column layouts (iris: four features
then the class name; wine: class id then thirteen features), standardizes
features per dimension, and maps labels to 1..k. ``load_mnist_binarized``
reads standard IDX image/label files (optionally gzipped), samples a fixed
number of images per requested class, and thresholds pixels to bits.

Synthetic generators produce Gaussian blob clusterings and digit-like
image sets in the same IDX format, so every loader code path runs even
where the real corpora are not available.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "ParseError",
    "IdxFormatError",
    "load_uci",
    "standardize",
    "read_idx",
    "write_idx",
    "load_mnist_binarized",
    "load_mnist_pixels",
    "gaussian_blobs",
    "synthetic_digit_images",
]


class ParseError(ValueError):
    """Malformed dataset row; carries the 1-based line number."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


class IdxFormatError(ValueError):
    """IDX file rejected (bad magic or truncated payload)."""


def standardize(X: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per dimension (constant dims left centered)."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return (X - mean) / std


_UCI_LAYOUT = {
    # dataset -> (n_features, label_column)
    "iris": (4, "last"),
    "wine": (13, "first"),
}


def load_uci(path, dataset: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a UCI-layout CSV; returns (standardized features, labels 1..k)."""
    if dataset not in _UCI_LAYOUT:
        raise ValueError(f"unknown dataset {dataset!r}; expected one of {sorted(_UCI_LAYOUT)}")
    n_features, label_pos = _UCI_LAYOUT[dataset]
    rows: list[list[float]] = []
    raw_labels: list[str] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_features + 1:
                raise ParseError(
                    path, line_no, f"expected {n_features + 1} fields, got {len(parts)}"
                )
            if label_pos == "last":
                feats, label = parts[:-1], parts[-1]
            else:
                label, feats = parts[0], parts[1:]
            try:
                rows.append([float(v) for v in feats])
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            raw_labels.append(label)
    if not rows:
        raise ParseError(path, 1, "no data rows")
    classes = sorted(set(raw_labels))
    label_map = {c: i + 1 for i, c in enumerate(classes)}
    features = standardize(np.asarray(rows))
    labels = np.array([label_map[l] for l in raw_labels], dtype=np.int64)
    return features, labels


# -- IDX ------------------------------------------------------------------------

_IDX_IMAGES_MAGIC = 2051
_IDX_LABELS_MAGIC = 2049


def _open_maybe_gzip(path, mode="rb"):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx(path) -> np.ndarray:
    """Read an IDX uint8 tensor (images are (n, rows, cols), labels (n,))."""
    with _open_maybe_gzip(path) as fh:
        header = fh.read(4)
        if len(header) != 4:
            raise IdxFormatError(f"{path}: truncated header")
        (magic,) = struct.unpack(">i", header)
        if magic == _IDX_IMAGES_MAGIC:
            n, rows, cols = struct.unpack(">iii", fh.read(12))
            data = fh.read(n * rows * cols)
            if len(data) != n * rows * cols:
                raise IdxFormatError(f"{path}: truncated image payload")
            return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)
        if magic == _IDX_LABELS_MAGIC:
            (n,) = struct.unpack(">i", fh.read(4))
            data = fh.read(n)
            if len(data) != n:
                raise IdxFormatError(f"{path}: truncated label payload")
            return np.frombuffer(data, dtype=np.uint8)
        raise IdxFormatError(f"{path}: bad IDX magic {magic}")


def write_idx(images: np.ndarray, labels: np.ndarray, out_dir, prefix: str = "train") -> tuple[Path, Path]:
    """Write (n, r, c) uint8 images and labels as standard IDX files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = out_dir / f"{prefix}-images-idx3-ubyte"
    lab_path = out_dir / f"{prefix}-labels-idx1-ubyte"
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">iiii", _IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(lab_path, "wb") as fh:
        fh.write(struct.pack(">ii", _IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())
    return img_path, lab_path


def _find_idx_pair(path, prefix: str) -> tuple[Path, Path]:
    path = Path(path)
    for suffix in ("", ".gz"):
        img = path / f"{prefix}-images-idx3-ubyte{suffix}"
        lab = path / f"{prefix}-labels-idx1-ubyte{suffix}"
        if img.exists() and lab.exists():
            return img, lab
    raise FileNotFoundError(f"no {prefix} IDX pair under {path}")


def load_mnist_binarized(
    path,
    classes=(0, 1, 2),
    per_class: int = 50,
    threshold: int = 128,
    rng: np.random.Generator = None,
    prefix: str = "train",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class subsample of an IDX image set, thresholded to bit vectors.

    Returns (bits (m, rows*cols) float 0/1, labels) with m = per_class *
    len(classes); sampling is without replacement and deterministic given
    the generator.
    """
    if rng is None:
        rng = np.random.default_rng()
    img_path, lab_path = _find_idx_pair(path, prefix)
    images = read_idx(img_path)
    labels = read_idx(lab_path)
    picked = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if idx.size < per_class:
            raise ValueError(f"class {c} has only {idx.size} images, need {per_class}")
        picked.append(rng.choice(idx, size=per_class, replace=False))
    picked = np.concatenate(picked)
    bits = (images[picked].reshape(len(picked), -1) >= threshold).astype(float)
    return bits, labels[picked].astype(np.int64)


def load_mnist_pixels(path, prefix: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """Full IDX image set as float pixels scaled to [0, 1]."""
    img_path, lab_path = _find_idx_pair(path, prefix)
    images = read_idx(img_path).astype(float) / 255.0
    labels = read_idx(lab_path).astype(np.int64)
    return images.reshape(images.shape[0], -1), labels


# -- synthetic generators --------------------------------------------------------


def gaussian_blobs(
    n_per_cluster: int,
    centers,
    scale: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Spherical Gaussian blobs; returns (X, integer assignment)."""
    centers = np.asarray(centers, dtype=float)
    X = np.vstack(
        [c + scale * rng.standard_normal((n_per_cluster, centers.shape[1])) for c in centers]
    )
    z = np.repeat(np.arange(centers.shape[0]), n_per_cluster)
    return X, z


def synthetic_digit_images(
    n_per_class: int,
    n_classes: int = 10,
    side: int = 28,
    ink_pixels: int = 110,
    drop_prob: float = 0.25,
    salt_prob: float = 0.03,
    max_shift: int = 2,
    rng: np.random.Generator = None,
    styles_per_class: int = 1,
    ambiguous_frac: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Digit-like images: per-class ink prototypes plus dropout, salt noise,
    and small random translations. Returns ((n, side, side) uint8, labels).

    With ``styles_per_class`` > 1 each class is a family of sub-prototypes
    (class ink plus style-specific ink) drawn with Zipf frequencies, and a
    fraction of styles borrow half their class ink from another class, so
    rare ambiguous writing styles dominate the residual error until a
    label lands on them.
    """
    if rng is None:
        rng = np.random.default_rng()
    n_px = side * side
    base_ink = max(1, ink_pixels - (40 if styles_per_class > 1 else 0))
    bases = []
    for c in range(n_classes):
        flat = rng.choice(n_px, size=base_ink, replace=False)
        p = np.zeros(n_px)
        p[flat] = 220.0
        bases.append(p)
    protos: list[list[np.ndarray]] = []
    for c in range(n_classes):
        class_protos = []
        for s in range(styles_per_class):
            proto = bases[c].copy()
            if styles_per_class > 1:
                if s > 0 and rng.random() < ambiguous_frac:
                    other = int(rng.integers(n_classes - 1))
                    other += other >= c
                    keep = rng.random(n_px) < 0.5
                    proto = np.where(keep, bases[c], bases[other])
                style_flat = rng.choice(n_px, size=40, replace=False)
                proto = proto.copy()
                proto[style_flat] = 220.0
            class_protos.append(proto)
        protos.append(class_protos)
    style_probs = 1.0 / np.arange(1, styles_per_class + 1)
    style_probs /= style_probs.sum()
    images = np.zeros((n_per_class * n_classes, side, side), dtype=np.uint8)
    labels = np.zeros(n_per_class * n_classes, dtype=np.uint8)
    for i in range(images.shape[0]):
        c = i % n_classes
        s = int(rng.choice(styles_per_class, p=style_probs))
        img = protos[c][s].reshape(side, side).copy()
        img *= rng.random((side, side)) > drop_prob
        img += 220.0 * (rng.random((side, side)) < salt_prob)
        if max_shift:
            shift = rng.integers(-max_shift, max_shift + 1, size=2)
            img = np.roll(img, tuple(shift), axis=(0, 1))
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
        labels[i] = c
    perm = rng.permutation(images.shape[0])
    return images[perm], labels[perm]
