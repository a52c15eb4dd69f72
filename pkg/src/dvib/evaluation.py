"""Linear probes, adjusted Rand index and the 4 x 3 disentanglement grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import MultiviewDataset, train_test_split

LABEL_SETS = ("shared", "private_x", "private_y")
REPRESENTATIONS = ("z_x_s", "z_x_p", "z_y_s", "z_y_p")
GRID_COLUMNS = ("representation", "label_set", "accuracy", "ari", "n_test")


def _pairs(n):
    n = np.asarray(n, dtype=np.float64)
    return n * (n - 1.0) / 2.0


def contingency_table(pred, truth) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"label vectors must be 1-D and equally long, got {pred.shape} and {truth.shape}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def adjusted_rand_index(pred, truth) -> float:
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} labels")
    if len(pred) < 2:
        raise ValueError("ARI needs at least two samples")
    table = contingency_table(pred, truth)
    index = _pairs(table).sum()
    rows = _pairs(table.sum(axis=1)).sum()
    cols = _pairs(table.sum(axis=0)).sum()
    expected = rows * cols / _pairs(table.sum())
    max_index = 0.5 * (rows + cols)
    if max_index == expected:
        # both partitions trivial (all-one-cluster or all-singletons): identical by definition
        return 1.0
    return float((index - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# softmax-regression probe


@dataclass
class Probe:
    weight: np.ndarray
    bias: np.ndarray
    mu: np.ndarray
    sd: np.ndarray
    classes: np.ndarray

    def logits(self, latents) -> np.ndarray:
        z = (np.asarray(latents, dtype=np.float64) - self.mu) / self.sd
        return z @ self.weight + self.bias

    def predict(self, latents) -> np.ndarray:
        return self.classes[np.argmax(self.logits(latents), axis=1)]


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def train_probe(latents, labels, epochs: int = 500, lr: float = 0.5, seed: int = 0,
                weight_decay: float = 1e-4) -> Probe:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with training statistics. Weights start from a small
    seeded Gaussian so runs are reproducible.
    """
    x = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise ValueError("probe training needs at least two classes")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    z = (x - mu) / sd
    n, d = z.shape
    k = classes.size
    rng = np.random.default_rng(seed)
    w = 1e-3 * rng.standard_normal((d, k))
    b = np.zeros(k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    for _ in range(epochs):
        g = (_softmax(z @ w + b) - onehot) / n
        w -= lr * (z.T @ g + weight_decay * w)
        b -= lr * g.sum(axis=0)
    return Probe(w, b, mu, sd, classes)


def accuracy(pred, truth) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(truth)))


# ---------------------------------------------------------------------------
# grid


@dataclass
class ProbeReport:
    representation: str
    label_set: str
    accuracy: float
    ari: float
    n_test: int


def probe_cell(train_z, train_y, test_z, test_y, representation: str, label_set: str,
               epochs: int = 500, lr: float = 0.5, seed: int = 0) -> ProbeReport:
    probe = train_probe(train_z, train_y, epochs, lr, seed)
    pred = probe.predict(test_z)
    return ProbeReport(representation, label_set, accuracy(pred, test_y),
                       adjusted_rand_index(pred, test_y), int(len(test_y)))


def disentanglement_grid(model, dataset: MultiviewDataset, split_seed: int = 0, probe_epochs: int = 500,
                         probe_lr: float = 0.5, probe_seed: int = 0, test_dataset: MultiviewDataset | None = None,
                         split=None) -> list[ProbeReport]:
    """Train one probe per (representation, label set) on the training split; score on the test split.

    Encoding uses posterior means. ``test_dataset`` (same rows as ``dataset``, e.g.
    corrupted views) replaces the test-split inputs when given.
    """
    train_idx, test_idx = split if split is not None else train_test_split(len(dataset), split_seed)
    if np.intersect1d(train_idx, test_idx).size:
        raise AssertionError("train and test indices overlap")
    test_source = test_dataset if test_dataset is not None else dataset
    train_codes = model.encode_means(dataset.x[train_idx], dataset.y[train_idx])
    test_codes = model.encode_means(test_source.x[test_idx], test_source.y[test_idx])
    reports = []
    for rep in train_codes:
        for label_set in LABEL_SETS:
            labels = dataset.labels(label_set)
            reports.append(probe_cell(train_codes[rep], labels[train_idx], test_codes[rep], labels[test_idx],
                                      rep, label_set, probe_epochs, probe_lr, probe_seed))
    return reports


def grid_lookup(reports: list[ProbeReport]) -> dict:
    return {(r.representation, r.label_set): r for r in reports}


def best_label_sets(reports: list[ProbeReport]) -> dict:
    best = {}
    for r in reports:
        if r.representation not in best or r.accuracy > best[r.representation].accuracy:
            best[r.representation] = r
    return {rep: r.label_set for rep, r in best.items()}


def grid_to_csv(reports: list[ProbeReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for r in reports:
        w.writerow([r.representation, r.label_set, f"{r.accuracy:.6f}", f"{r.ari:.6f}", r.n_test])
    return buf.getvalue()


def grid_from_csv(text: str) -> list[ProbeReport]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [ProbeReport(r["representation"], r["label_set"], float(r["accuracy"]), float(r["ari"]),
                        int(r["n_test"])) for r in rows]
