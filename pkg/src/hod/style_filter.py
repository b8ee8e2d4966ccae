"""Ego-style clip filtering: a small MLP scorer over precomputed clip features.

The classifier is intentionally self-contained (plain numpy, full-batch
gradient descent) so its behavior is trivially verifiable. Features are
ingested, never computed here; any fixed-dimension vectors work.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, DataError, ShapeError

_MAGIC = b"HODMLP"
_FORMAT_VERSION = 1


@dataclass
class ClipRecord:
    clip_id: str
    narration: str = ""
    source: str = ""
    feature: Optional[np.ndarray] = None
    label: Optional[int] = None


@dataclass
class MlpClassifier:
    """Two-layer MLP: ReLU hidden layer, sigmoid output."""

    w1: np.ndarray  # [F, H]
    b1: np.ndarray  # [H]
    w2: np.ndarray  # [H, 1]
    b2: float

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ShapeError(
                f"expected features of shape [n, {self.feature_dim}], got {x.shape}"
            )
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        return (h @ self.w2).ravel() + self.b2

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Sigmoid probabilities of the positive (ego-like) class."""
        z = self.logits(x)
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out


@dataclass
class TrainSettings:
    hidden: int = 64
    lr: float = 0.5
    epochs: int = 2000
    val_fraction: float = 0.1
    seed: int = 0


def train_classifier(
    features: np.ndarray, labels: np.ndarray, cfg: TrainSettings = TrainSettings()
) -> tuple[MlpClassifier, float]:
    """Fit the classifier with full-batch gradient descent on cross-entropy.

    A random ``val_fraction`` of the data is held out; the returned
    accuracy is measured there. Deterministic for a fixed seed.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if features.ndim != 2:
        raise ShapeError(f"features must be [n, F], got shape {features.shape}")
    if features.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
        )
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos < 2 or labels.size - n_pos < 2:
        raise DataError(
            "degenerate labels: need at least 2 examples of each class, "
            f"got {labels.size - n_pos} negative / {n_pos} positive"
        )

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(labels.size)
    n_val = max(1, round(cfg.val_fraction * labels.size))
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, y_train = features[train_idx], labels[train_idx]
    x_val, y_val = features[val_idx], labels[val_idx]

    f_dim, hidden = features.shape[1], cfg.hidden
    w1 = rng.normal(0.0, np.sqrt(2.0 / f_dim), size=(f_dim, hidden))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, 1))
    b2 = 0.0
    n = x_train.shape[0]

    for _ in range(cfg.epochs):
        pre = x_train @ w1 + b1
        h = np.maximum(pre, 0.0)
        z = (h @ w2).ravel() + b2
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
        dz = (p - y_train) / n
        dw2 = h.T @ dz[:, None]
        db2 = dz.sum()
        dh = dz[:, None] @ w2.T
        dpre = dh * (pre > 0.0)
        dw1 = x_train.T @ dpre
        db1 = dpre.sum(axis=0)
        w1 -= cfg.lr * dw1
        b1 -= cfg.lr * db1
        w2 -= cfg.lr * dw2
        b2 -= cfg.lr * db2

    clf = MlpClassifier(w1=w1, b1=b1, w2=w2, b2=float(b2))
    val_acc = float(((clf.scores(x_val) > 0.5) == (y_val > 0.5)).mean())
    return clf, val_acc


def filter_clips(
    records: Sequence[ClipRecord], classifier: MlpClassifier, threshold: float = 0.5
) -> tuple[list[ClipRecord], list[ClipRecord]]:
    """Partition records into (kept, dropped) by classifier score > threshold."""
    for rec in records:
        if rec.feature is None:
            raise DataError(f"clip {rec.clip_id!r} has no feature vector")
    if not records:
        return [], []
    x = np.stack([np.asarray(r.feature, dtype=np.float64) for r in records])
    scores = classifier.scores(x)
    kept = [r for r, s in zip(records, scores) if s > threshold]
    dropped = [r for r, s in zip(records, scores) if not s > threshold]
    return kept, dropped


def save_classifier(clf: MlpClassifier, path: str) -> None:
    """Write the classifier: versioned header + little-endian float32 blocks."""
    f_dim, hidden = clf.w1.shape
    header = _MAGIC + struct.pack("<III", _FORMAT_VERSION, f_dim, hidden)
    blocks = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for arr in (clf.w1, clf.b1, clf.w2, np.array([clf.b2]))
    )
    with open(path, "wb") as fh:
        fh.write(header + blocks)


def load_classifier(path: str) -> MlpClassifier:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a classifier file (bad magic)")
    version, f_dim, hidden = struct.unpack_from("<III", raw, len(_MAGIC))
    if version != _FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported classifier format version {version}"
        )
    expected = len(_MAGIC) + 12 + 4 * (f_dim * hidden + hidden + hidden + 1)
    if len(raw) != expected:
        raise CheckpointError(
            f"{path}: truncated classifier file, expected {expected} bytes, "
            f"got {len(raw)}"
        )
    offset = len(_MAGIC) + 12
    def take(count, shape):
        nonlocal offset
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        return arr.astype(np.float64).reshape(shape)

    w1 = take(f_dim * hidden, (f_dim, hidden))
    b1 = take(hidden, (hidden,))
    w2 = take(hidden, (hidden, 1))
    b2 = float(take(1, (1,))[0])
    return MlpClassifier(w1=w1, b1=b1, w2=w2, b2=b2)
