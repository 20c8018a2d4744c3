"""Distill a teacher into an MLP student and measure how often they agree."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .activations import RELU
from .conv import ConvTeacher, lenet
from .data import Dataset
from .errors import ContractError, FormatError, NumericError, StaleCacheError
from .nn import LossSpec, Network, TrainConfig, accuracy, batched_logits, train

log = logging.getLogger(__name__)

CACHE_MAGIC = b"CLGC"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQI32s32s")

GRID_LRS = [1e-5, 3e-5, 5e-5, 8e-5, 1e-4, 3e-4, 5e-4, 8e-4, 1e-3, 3e-3, 5e-3, 8e-3, 1e-2]
GRID_BATCHES = [32, 64, 128, 256]
GRID_ALPHAS = [0.5, 0.9, 0.95]
GRID_TEMPERATURES = [1, 3, 5, 10, 20]
DEFAULT_STUDENT = "784-256-64-10"


def model_fingerprint(model) -> bytes:
    if isinstance(model, ConvTeacher):
        return model.fingerprint()
    import hashlib

    h = hashlib.sha256()
    for p in model.params():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.digest()


def train_teacher(train_ds: Dataset, config: TrainConfig, test_ds: Dataset | None = None,
                  teacher: ConvTeacher | None = None):
    """Train a LeNet teacher; returns ``(teacher, report)``."""
    side = int(round(math.sqrt(train_ds.dim)))
    if side * side != train_ds.dim:
        raise ContractError(f"teacher needs square grayscale images, got {train_ds.dim} features")
    if teacher is None:
        teacher = lenet(train_ds.num_classes, seed=config.seed, input_hw=side)
    teacher, history = train(teacher, train_ds.features, train_ds.labels, config)
    report = {"history": history}
    if test_ds is not None:
        report["test_accuracy"] = accuracy(teacher, test_ds.features, test_ds.labels)
    return teacher, report


@dataclass
class LogitCache:
    logits: np.ndarray
    dataset_hash: bytes
    teacher_hash: bytes

    def check(self, dataset: Dataset | None = None, teacher=None):
        if dataset is not None:
            if len(dataset) != len(self.logits) or dataset.fingerprint() != self.dataset_hash:
                raise StaleCacheError("logit cache was built for a different dataset")
        if teacher is not None and model_fingerprint(teacher) != self.teacher_hash:
            raise StaleCacheError("logit cache was built by a different teacher")

    def subset(self, idx):
        return LogitCache(self.logits[np.asarray(idx)], b"\0" * 32, self.teacher_hash)

    def save(self, path):
        n, c = self.logits.shape
        with open(path, "wb") as f:
            f.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, c, self.dataset_hash, self.teacher_hash))
            f.write(np.ascontiguousarray(self.logits, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, dataset: Dataset | None = None, teacher=None):
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated logit-cache header", len(raw))
        magic, version, n, c, dh, th = _HEADER.unpack_from(raw)
        if magic != CACHE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}", 0)
        if version != CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}", 4)
        need = _HEADER.size + 8 * n * c
        if len(raw) < need:
            raise FormatError(f"{path}: truncated logits, need {need} bytes", len(raw))
        logits = np.frombuffer(raw, dtype="<f8", count=n * c, offset=_HEADER.size).reshape(n, c).astype(np.float64)
        cache = cls(logits, dh, th)
        cache.check(dataset, teacher)
        return cache


def cache_logits(teacher, dataset: Dataset) -> LogitCache:
    return LogitCache(batched_logits(teacher, dataset.features, 1024),
                      dataset.fingerprint(), model_fingerprint(teacher))


def agreement(model, X, reference_labels) -> float:
    return float(np.mean(np.argmax(batched_logits(model, X), axis=1) == np.asarray(reference_labels)))


def distill_student(student_arch, train_ds: Dataset, cache: LogitCache, alpha: float,
                    temperature: float, config: TrainConfig, test_ds: Dataset | None = None,
                    test_cache: LogitCache | None = None, student: Network | None = None):
    """Train an MLP student under the KD loss.

    Each epoch record gains ``train_accuracy`` (hard labels), ``test_accuracy``
    and ``agreement`` with the teacher on the test split (train split if no
    test cache is given).
    """
    if len(cache.logits) != len(train_ds):
        raise StaleCacheError("teacher logits do not match the training set size")
    if student is None:
        student = Network.mlp(student_arch, RELU, seed=config.seed)
    cfg = replace(config, loss=LossSpec("kd", alpha, temperature) if alpha < 1.0 else LossSpec())
    if test_ds is not None and test_cache is not None:
        agree_X, agree_ref = test_ds.features, np.argmax(test_cache.logits, axis=1)
    else:
        agree_X, agree_ref = train_ds.features, np.argmax(cache.logits, axis=1)

    def on_epoch(model, rec):
        rec["train_accuracy"] = rec["accuracy"]
        if test_ds is not None:
            rec["test_accuracy"] = accuracy(model, test_ds.features, test_ds.labels)
        rec["agreement"] = agreement(model, agree_X, agree_ref)

    return train(student, train_ds.features, train_ds.labels, cfg,
                 teacher_logits=cache.logits, on_epoch=on_epoch)


@dataclass
class GridSpec:
    learning_rates: list = field(default_factory=lambda: list(GRID_LRS))
    batch_sizes: list = field(default_factory=lambda: list(GRID_BATCHES))
    alphas: list = field(default_factory=lambda: list(GRID_ALPHAS))
    temperatures: list = field(default_factory=lambda: list(GRID_TEMPERATURES))

    def __post_init__(self):
        for name in ("learning_rates", "batch_sizes", "alphas", "temperatures"):
            if not getattr(self, name):
                raise ContractError(f"grid {name} list is empty")

    def cells(self):
        return list(itertools.product(self.learning_rates, self.batch_sizes, self.alphas, self.temperatures))


@dataclass
class GridResult:
    best: dict
    student: Network
    rows: list
    history: list

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["lr", "batch", "alpha", "temp", "val_acc", "test_acc"])
            for r in self.rows:
                w.writerow([r["lr"], r["batch"], r["alpha"], r["temp"], r["val_acc"], r["test_acc"]])


def _screen_cell(args):
    (lr, bs, alpha, temp), seed, arch, epochs, fit, val, fit_logits, test = args
    cfg = TrainConfig(learning_rate=lr, batch_size=int(bs), epochs=epochs, seed=seed)
    row = {"lr": lr, "batch": int(bs), "alpha": alpha, "temp": temp, "seed": seed}
    try:
        cache = LogitCache(fit_logits, b"", b"")
        student, _ = distill_student(arch, fit, cache, alpha, temp, cfg)
        row["val_acc"] = accuracy(student, val.features, val.labels)
        row["test_acc"] = accuracy(student, test.features, test.labels) if test is not None else float("nan")
    except NumericError as e:
        log.warning("grid cell %s diverged: %s", row, e)
        row["val_acc"] = row["test_acc"] = float("nan")
    return row


def grid_search(spec: GridSpec, train_ds: Dataset, cache: LogitCache, student_arch=DEFAULT_STUDENT,
                screen_epochs=5, full_epochs=20, test_ds: Dataset | None = None,
                test_cache: LogitCache | None = None, seed=0, threads=1) -> GridResult:
    """Screen every cell for ``screen_epochs`` on a seeded 90/10 split, retrain the best.

    Cells run with disjoint seeds ``seed + index``. Diverged cells are
    recorded with NaN accuracy and never selected. The winner is retrained
    on the full training set for ``full_epochs`` with its screening seed.
    """
    if len(cache.logits) != len(train_ds):
        raise StaleCacheError("teacher logits do not match the training set size")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train_ds))
    k = max(1, int(round(0.1 * len(train_ds))))
    val_idx, fit_idx = np.sort(perm[:k]), np.sort(perm[k:])
    fit, val = train_ds.subset(fit_idx), train_ds.subset(val_idx)
    fit_logits = cache.logits[fit_idx]
    jobs = [(cell, seed + i, student_arch, screen_epochs, fit, val, fit_logits, test_ds)
            for i, cell in enumerate(spec.cells())]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(_screen_cell, jobs))
    else:
        rows = [_screen_cell(j) for j in jobs]
    finite = [r for r in rows if np.isfinite(r["val_acc"])]
    if not finite:
        raise NumericError("every grid cell diverged")
    best = max(finite, key=lambda r: r["val_acc"])  # first maximum wins ties
    cfg = TrainConfig(learning_rate=best["lr"], batch_size=best["batch"], epochs=full_epochs, seed=best["seed"])
    student, history = distill_student(student_arch, train_ds, cache, best["alpha"], best["temp"], cfg,
                                       test_ds=test_ds, test_cache=test_cache)
    return GridResult(best, student, rows, history)


def consistency(model_a, model_b, X, num_classes=None):
    """Fraction of rows where both models pick the same class, and the confusion matrix.

    ``matrix[i, j]`` counts samples labelled ``i`` by ``model_a`` and ``j`` by ``model_b``.
    """
    la = batched_logits(model_a, X)
    lb = batched_logits(model_b, X)
    if la.shape[1] != lb.shape[1]:
        raise ContractError("models disagree on the number of classes")
    c = num_classes or la.shape[1]
    pa, pb = np.argmax(la, axis=1), np.argmax(lb, axis=1)
    m = np.zeros((c, c), dtype=np.int64)
    np.add.at(m, (pa, pb), 1)
    return float(np.mean(pa == pb)), m


def write_confusion_csv(path, matrix, row_label="student", col_label="teacher", class_names=None):
    c = matrix.shape[0]
    names = class_names or [str(i) for i in range(c)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"{row_label}\\{col_label}"] + list(names))
        for i in range(c):
            w.writerow([names[i]] + matrix[i].tolist())

