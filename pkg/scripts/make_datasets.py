#!/usr/bin/env python3
"""Regenerate the vendored data files.

Writes data/iris.csv and data/wine.csv in the classic UCI column layouts
(iris: 4 features then class name; wine: class id then 13 features) from
scikit-learn's bundled copies, plus a synthetic digit-like IDX image set
under data/digits/ for the kernel and Bernoulli-mixture experiments.

scikit-learn is a script-only dependency; the package itself never
imports it.
"""

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]


def write_iris(out: Path) -> None:
    from sklearn.datasets import load_iris

    data = load_iris()
    names = [data.target_names[t] for t in data.target]
    lines = [
        ",".join(f"{v:.1f}" for v in row) + f",Iris-{name}"
        for row, name in zip(data.data, names)
    ]
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} rows to {out}")


def write_wine(out: Path) -> None:
    from sklearn.datasets import load_wine

    data = load_wine()
    lines = [
        f"{t + 1}," + ",".join(f"{v:g}" for v in row)
        for row, t in zip(data.data, data.target)
    ]
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} rows to {out}")


def write_digits(out_dir: Path, per_class: int = 650, seed: int = 20240601) -> None:
    """Aligned prototypes with independent per-pixel dropout and salt, so
    the binarized bits are exactly class-conditional Bernoulli products."""
    sys.path.insert(0, str(ROOT / "src"))
    from sqbc.datasets import synthetic_digit_images, write_idx

    rng = np.random.default_rng(seed)
    images, labels = synthetic_digit_images(
        per_class, drop_prob=0.25, salt_prob=0.02, max_shift=0, rng=rng
    )
    img, lab = write_idx(images, labels, out_dir, prefix="train")
    print(f"wrote {images.shape[0]} images to {img} and {lab}")


def write_styled_digits(out_dir: Path, per_class: int = 650, seed: int = 20240601) -> None:
    """Style-rich variant for the kernel runs: each class a Zipf-weighted
    family of sub-prototypes, half of them borrowing ink across classes."""
    sys.path.insert(0, str(ROOT / "src"))
    from sqbc.datasets import synthetic_digit_images, write_idx

    rng = np.random.default_rng(seed)
    images, labels = synthetic_digit_images(
        per_class, drop_prob=0.10, salt_prob=0.0, max_shift=0, rng=rng,
        styles_per_class=40, ambiguous_frac=0.5,
    )
    img, lab = write_idx(images, labels, out_dir, prefix="train")
    print(f"wrote {images.shape[0]} styled images to {img} and {lab}")


def gzip_idx(out_dir: Path) -> None:
    import gzip

    for path in sorted(out_dir.glob("*-ubyte")):
        # fixed mtime so regenerated archives are byte-identical
        with open(path, "rb") as src, open(f"{path}.gz", "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", compresslevel=9, mtime=0) as dst:
                dst.write(src.read())
        path.unlink()


if __name__ == "__main__":
    data_dir = ROOT / "data"
    data_dir.mkdir(exist_ok=True)
    write_iris(data_dir / "iris.csv")
    write_wine(data_dir / "wine.csv")
    write_digits(data_dir / "digits")
    write_styled_digits(data_dir / "digits_styled")
    gzip_idx(data_dir / "digits")
    gzip_idx(data_dir / "digits_styled")
