"""Datasets: IDX readers/writers, toy 2-D generators, subsetting and splits."""
from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

FASHION_CLASSES = ["T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
                   "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot"]
MNIST_CLASSES = [str(i) for i in range(10)]


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""
    class_names: list | None = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ContractError("features must be (N, d) with one label per row")
        if len(self.labels) == 0:
            raise ContractError(f"dataset {self.name!r} is empty")
        if self.labels.min() < 0:
            raise ContractError("labels must be non-negative")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("features must be finite")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        if self.class_names is not None:
            return len(self.class_names)
        return int(self.labels.max()) + 1

    def subset(self, idx, name=None):
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], name or self.name, self.class_names)

    def fingerprint(self) -> bytes:
        """32-byte SHA-256 over shape, features and labels."""
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", *self.features.shape))
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.digest()


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path):
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated image header", len(raw))
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}", 0)
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise FormatError(f"{path}: truncated pixel payload, need {need} bytes", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def read_idx_labels(path):
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated label header", len(raw))
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}", 0)
    if len(raw) < 8 + n:
        raise FormatError(f"{path}: truncated label payload, need {8 + n} bytes", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path, labels_path, name="", class_names=None) -> Dataset:
    """Read an IDX image/label pair; pixels scaled by 1/255 and flattened."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", 4)
    feats = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), name, class_names)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (N, rows, cols) and labels (N,) as uncompressed IDX."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_DIR_NAMES = {"mnist": ("mnist", "MNIST"), "fashionmnist": ("fashionmnist", "fashion-mnist", "FashionMNIST", "fashion_mnist")}


def data_dir(override=None) -> Path:
    return Path(override or os.environ.get("CLIME_DATA_DIR", "data"))


def _find(base: Path, stem: str):
    for suffix in ("", ".gz"):
        p = base / (stem + suffix)
        if p.exists():
            return p
    return None


def find_idx_pair(name: str, split: str, root=None):
    """Locate the IDX files of ``name`` (mnist / fashionmnist); None if absent."""
    root = data_dir(root)
    stems = _IDX_FILES[split]
    for sub in _DIR_NAMES[name]:
        for base in (root / sub, root / sub / "raw"):
            img, lab = _find(base, stems[0]), _find(base, stems[1])
            if img and lab:
                return img, lab
    return None


def load_named(name: str, split="train", root=None) -> Dataset:
    name = name.lower().replace("-", "").replace("_", "")
    if name not in _DIR_NAMES:
        raise ContractError(f"unknown image dataset {name!r}")
    pair = find_idx_pair(name, split, root)
    if pair is None:
        raise ContractError(
            f"{name} {split} IDX files not found under {data_dir(root)}; "
            "set CLIME_DATA_DIR or pass --data-dir")
    names = FASHION_CLASSES if name == "fashionmnist" else MNIST_CLASSES
    return load_idx(*pair, name=f"{name}-{split}", class_names=names)


# toy generators ------------------------------------------------------------

def make_moons(n=10000, noise=0.1, seed=0) -> Dataset:
    """Two interleaving half circles.

    Class 0: ``(cos t, sin t)``; class 1: ``(1 - cos t, 0.5 - sin t)`` with
    ``t`` evenly spaced on ``[0, pi]``, then isotropic Gaussian noise.
    """
    if n < 2 or noise < 0:
        raise ContractError("make_moons needs n >= 2 and noise >= 0")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    X = np.vstack([np.column_stack([np.cos(t0), np.sin(t0)]),
                   np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    X = X + noise * rng.standard_normal(X.shape) if noise else X
    return Dataset(X[perm], y[perm], "moons")


def make_circles(n=10000, noise=0.05, factor=0.5, seed=0) -> Dataset:
    """Outer circle of radius 1 (class 0) around an inner circle of radius ``factor`` (class 1)."""
    if n < 2 or noise < 0 or not 0 < factor < 1:
        raise ContractError("make_circles needs n >= 2, noise >= 0 and 0 < factor < 1")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, 2 * np.pi, n0, endpoint=False)
    t1 = np.linspace(0.0, 2 * np.pi, n1, endpoint=False)
    X = np.vstack([np.column_stack([np.cos(t0), np.sin(t0)]),
                   factor * np.column_stack([np.cos(t1), np.sin(t1)])])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    X = X + noise * rng.standard_normal(X.shape) if noise else X
    return Dataset(X[perm], y[perm], "circles")


def filter_classes(ds: Dataset, keep) -> Dataset:
    keep = [int(k) for k in keep]
    if not keep:
        raise ContractError("keep list is empty")
    mask = np.isin(ds.labels, keep)
    if not mask.any():
        raise ContractError(f"no samples with labels {keep}")
    remap = {k: i for i, k in enumerate(keep)}
    labels = np.array([remap[int(l)] for l in ds.labels[mask]], dtype=np.int64)
    names = [ds.class_names[k] for k in keep] if ds.class_names else None
    return Dataset(ds.features[mask], labels, ds.name, names)


def train_test_split(ds: Dataset, test_fraction=0.1, seed=0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    k = int(round(len(ds) * test_fraction))
    if k < 1 or k >= len(ds):
        raise ContractError("split leaves an empty side")
    return ds.subset(np.sort(perm[k:])), ds.subset(np.sort(perm[:k]))


def bbox_of(X, margin=0.1):
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    pad = margin * (hi - lo)
    return (lo[0] - pad[0], lo[1] - pad[1], hi[0] + pad[0], hi[1] + pad[1])
