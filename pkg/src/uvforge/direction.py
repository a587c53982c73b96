"""Attribute directions from labelled latents via a linear SVM.

The SVM is trained from scratch: L2-regularised hinge loss, mini-batch
subgradient steps with a 1/(lambda*t) schedule, iterate averaging over the
second half of training, and a fixed per-seed epoch shuffle so retraining is
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateDataError, InvalidArgumentError, LookupMissError
from .latent import AttributeDirection, LatentVec, _project


@dataclass(frozen=True)
class SvmConfig:
    regularization_c: float = 0.1
    epochs: int = 50
    learning_rate: float = 1.0
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if not (self.regularization_c > 0 and self.learning_rate > 0):
            raise InvalidArgumentError("regularization_c and learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")


@dataclass
class LabeledLatentSet:
    vectors: list
    labels: list
    attribute_name: str

    def __post_init__(self):
        if len(self.vectors) != len(self.labels):
            raise InvalidArgumentError("vectors and labels differ in length")
        if len(self.vectors) < 2:
            raise InvalidArgumentError("need at least two labelled vectors")


def to_signed_labels(labels) -> np.ndarray:
    """Map {0,1} or {-1,+1} labels onto {-1,+1}."""
    y = np.asarray(labels)
    if y.size and not np.isin(y, (-1, 0, 1)).all():
        raise InvalidArgumentError("labels must be binary (0/1 or -1/+1)")
    if np.isin(y, (0,)).any() and np.isin(y, (-1,)).any():
        raise InvalidArgumentError("labels mix the 0/1 and -1/+1 encodings")
    return np.where(y > 0, 1.0, -1.0)


class LinearSVM(ClassifierMixin, BaseEstimator):
    """Linear hinge-loss SVM trained by deterministic mini-batch subgradient descent.

    The objective is ``mean(hinge) + ||w||^2 / (2 C)`` on inputs centred and
    divided by a single global RMS scale, so a uniform rescaling of the data
    does not change which side of the plane any training point falls on.
    ``coef_`` and ``intercept_`` are reported in the original input space.
    """

    def __init__(self, C=0.1, epochs=50, learning_rate=1.0, batch_size=32, random_state=0):
        self.C = C
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidArgumentError("X must be 2-D")
        if not np.all(np.isfinite(X)):
            raise InvalidArgumentError("X has non-finite entries")
        y = to_signed_labels(y)
        if y.shape[0] != X.shape[0]:
            raise InvalidArgumentError("X and y differ in length")
        if np.unique(y).size < 2:
            raise DegenerateDataError("training labels contain a single class")
        SvmConfig(self.C, self.epochs, self.learning_rate, int(self.random_state), self.batch_size)

        center = X.mean(axis=0)
        Xc = X - center
        scale = np.sqrt((Xc ** 2).sum(axis=1).mean() / X.shape[1])
        if scale == 0:
            raise DegenerateDataError("all training vectors are identical")
        Xn = Xc / scale

        n, dim = Xn.shape
        lam = 1.0 / self.C
        rng = np.random.default_rng(self.random_state)
        w = np.zeros(dim)
        b = 0.0
        w_sum = np.zeros(dim)
        b_sum = 0.0
        n_avg = 0
        t = 0
        avg_from = self.epochs // 2
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                t += 1
                eta = self.learning_rate / (lam * (t + 1))
                xb, yb = Xn[idx], y[idx]
                active = yb * (xb @ w + b) < 1.0
                grad_w = lam * w - (yb[active, None] * xb[active]).sum(axis=0) / idx.size
                grad_b = -yb[active].sum() / idx.size
                w -= eta * grad_w
                b -= eta * grad_b
                if epoch >= avg_from:
                    w_sum += w
                    b_sum += b
                    n_avg += 1
        w = w_sum / n_avg
        b = b_sum / n_avg

        coef = w / scale
        self.coef_ = coef[None, :]
        self.intercept_ = np.array([b - coef @ center])
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = dim
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=np.float64)
        return X @ self.coef_[0] + self.intercept_[0]

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def to_direction(self, attribute_name, X, y) -> AttributeDirection:
        """Unit normal oriented toward the positive class, plus training accuracy."""
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=np.float64)
        y = to_signed_labels(y)
        coef = self.coef_[0]
        norm = np.linalg.norm(coef)
        if norm == 0:
            raise DegenerateDataError("SVM converged to a zero weight vector")
        normal = coef / norm
        bias = float(self.intercept_[0] / norm)
        dist = _project(X, normal, bias)
        if dist[y > 0].mean() < dist[y < 0].mean():
            normal, bias, dist = -normal, -bias, -dist
        accuracy = float((np.where(dist >= 0, 1.0, -1.0) == y).mean())
        meta = {"n_samples": int(X.shape[0]), "accuracy": accuracy, "weight_norm": float(norm)}
        return AttributeDirection(normal, bias, attribute_name, meta)


def _stack(vectors) -> np.ndarray:
    rows = [v.values if isinstance(v, LatentVec) else np.asarray(v, dtype=np.float64) for v in vectors]
    dims = {r.shape[0] for r in rows}
    if len(dims) > 1:
        raise InvalidArgumentError(f"vectors have mixed dimensions {sorted(dims)}")
    return np.stack(rows) if rows else np.empty((0, 0))


def train_linear_svm(data: LabeledLatentSet, cfg: SvmConfig = SvmConfig()) -> AttributeDirection:
    X = _stack(data.vectors)
    y = to_signed_labels(data.labels)
    if np.unique(y).size < 2:
        raise DegenerateDataError(f"attribute {data.attribute_name!r}: only one class present")
    svm = LinearSVM(C=cfg.regularization_c, epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                    batch_size=cfg.batch_size, random_state=cfg.seed).fit(X, y)
    return svm.to_direction(data.attribute_name, X, y)


def batch_signed_distances(vectors, d: AttributeDirection) -> list:
    if len(vectors) == 0:
        return []
    X = _stack(vectors)
    if X.shape[1] != d.dim:
        raise InvalidArgumentError(f"dimension mismatch: {X.shape[1]} != {d.dim}")
    return [float(v) for v in _project(X, d.normal, d.bias)]


# -- label providers --------------------------------------------------------

class PlantedLabelProvider:
    """Labels latents by the side of a known hyperplane, optionally flipping a
    seeded fraction of them.  Stands in for an external attribute annotator."""

    needs_textures = False

    def __init__(self, normal, bias=0.0, flip_fraction=0.0, seed=0):
        normal = np.asarray(normal, dtype=np.float64)
        self.normal = normal / np.linalg.norm(normal)
        self.bias = float(bias)
        self.flip_fraction = flip_fraction
        self.seed = seed

    def __call__(self, records):
        W = _stack([r.w for r in records])
        labels = np.where(_project(W, self.normal, self.bias) >= 0, 1, 0)
        if self.flip_fraction > 0:
            rng = np.random.default_rng(self.seed)
            n_flip = int(round(self.flip_fraction * len(labels)))
            flip = rng.choice(len(labels), size=n_flip, replace=False)
            labels[flip] = 1 - labels[flip]
        return labels.tolist()


class FileLabelProvider:
    """Looks up labels for one attribute in a labelled-set JSON-lines file.

    Records are ``{lvec_path, labels: {attr: 0|1}}``; a record matches a sample
    when the LVEC file name starts with the sample id (``s000001.w.lvec``), or
    when it carries an explicit ``sample_id``.
    """

    needs_textures = False

    def __init__(self, path, attribute):
        from .io import read_jsonl

        self.attribute = attribute
        self._labels = {}
        for rec in read_jsonl(path):
            if attribute not in rec.get("labels", {}):
                continue
            sid = rec.get("sample_id") or Path(rec["lvec_path"]).name.split(".")[0]
            self._labels[sid] = int(rec["labels"][attribute])

    def __call__(self, records):
        try:
            return [self._labels[r.sample_id] for r in records]
        except KeyError as exc:
            raise LookupMissError(f"no {self.attribute!r} label for sample {exc.args[0]}") from None


def load_labeled_set(path, attribute, n=None) -> LabeledLatentSet:
    """Read a labelled-set file, resolving LVEC paths relative to the file."""
    from .io import read_jsonl, read_lvec

    base = Path(path).parent
    vectors, labels = [], []
    for rec in read_jsonl(path):
        if attribute not in rec.get("labels", {}):
            continue
        lvec = Path(rec["lvec_path"])
        vectors.append(read_lvec(lvec if lvec.is_absolute() else base / lvec))
        labels.append(int(rec["labels"][attribute]))
        if n is not None and len(vectors) == n:
            break
    if n is not None and len(vectors) < n:
        raise InvalidArgumentError(f"requested {n} samples but only {len(vectors)} carry {attribute!r}")
    return LabeledLatentSet(vectors, labels, attribute)


def learn_direction_pipeline(generator, labels_source, n, attribute, cfg: SvmConfig = SvmConfig(),
                             seed=0) -> AttributeDirection:
    """Sample ``n`` latents, label them with ``labels_source`` and fit a direction."""
    if n < 2:
        raise InvalidArgumentError("n must be >= 2")
    if getattr(labels_source, "needs_textures", True):
        records = generator.sample_batch(n, seed)
    else:
        records = generator.sample_latent_records(n, seed)
    labels = labels_source(records)
    if len(set(int(v > 0) for v in labels)) < 2:
        raise DegenerateDataError(f"label provider returned a single class for {attribute!r}")
    data = LabeledLatentSet([r.w for r in records], labels, attribute)
    return train_linear_svm(data, cfg)


__all__ = [
    "SvmConfig", "LabeledLatentSet", "LinearSVM", "train_linear_svm", "batch_signed_distances",
    "learn_direction_pipeline", "PlantedLabelProvider", "FileLabelProvider", "load_labeled_set",
    "to_signed_labels",
]
