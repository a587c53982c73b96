"""Corpus-level generative metrics over feature embeddings: FID, KID and
k-NN manifold precision/recall, plus the built-in ``pixelstat`` extractor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InvalidArgumentError, LookupMissError
from .generator import Texture

PIXELSTAT_GRID = 16
PIXELSTAT_DIM = PIXELSTAT_GRID * PIXELSTAT_GRID * 3 + 6


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    extractor_id: str = "pixelstat"


@dataclass(frozen=True, eq=False)
class CorpusStats:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise InvalidArgumentError(f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidArgumentError("corpus statistics contain non-finite values")
        if np.abs(cov - cov.T).max(initial=0.0) > 1e-9 * max(1.0, np.abs(cov).max(initial=0.0)):
            raise InvalidArgumentError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


@dataclass
class MetricResult:
    name: str
    value: float
    dispersion: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "value": float(self.value), "dispersion": float(self.dispersion), "meta": self.meta}


def as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        X = features.astype(np.float64, copy=False)
    else:
        rows = [f.values if isinstance(f, FeatureVector) else f for f in features]
        if not rows:
            return np.empty((0, 0))
        X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgumentError("features must form an (n, F) matrix with a uniform F")
    return X


# -- extraction -------------------------------------------------------------

def box_downsample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average over the integer bins ``[floor(i*H/out), floor((i+1)*H/out))``."""
    h, w = image.shape[:2]
    if h < out_h or w < out_w:
        raise InvalidArgumentError(f"cannot box-downsample {w}x{h} to {out_w}x{out_h}")
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    sums = np.add.reduceat(np.add.reduceat(image, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, h)), np.diff(np.append(cols, w)))
    return sums / counts[..., None] if image.ndim == 3 else sums / counts


def pixelstat_features(tex) -> np.ndarray:
    raw = tex.pixels if isinstance(tex, Texture) else np.asarray(tex)
    small = box_downsample(raw.astype(np.float64) / 255.0, PIXELSTAT_GRID, PIXELSTAT_GRID)
    # channel moments from exact integer sums, so a flat texture has variance exactly 0
    flat = raw.reshape(-1, 3).astype(np.int64)
    n = flat.shape[0]
    s1 = flat.sum(axis=0)
    s2 = (flat * flat).sum(axis=0)
    mean = s1 / (n * 255.0)
    var = (n * s2 - s1 * s1) / (n * n * 255.0 * 255.0)
    return np.concatenate([small.ravel(), mean, var])


class PixelStatExtractor(TransformerMixin, BaseEstimator):
    """16x16 box-downsampled normalised RGB, then per-channel mean and variance (F = 774)."""

    extractor_id = "pixelstat"

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return np.stack([pixelstat_features(t) for t in X])


class PrecomputedExtractor:
    """Embeddings produced elsewhere (e.g. Inception or CLIP), looked up by sample id."""

    def __init__(self, features, sample_ids, extractor_id="precomputed"):
        self.features = as_matrix(features)
        self.index = {sid: i for i, sid in enumerate(sample_ids)}
        self.extractor_id = extractor_id

    @classmethod
    def from_femb(cls, path, extractor_id="precomputed"):
        from .io import read_femb

        feats, ids = read_femb(path)
        return cls(feats, ids, extractor_id)

    def lookup(self, sample_ids) -> np.ndarray:
        try:
            return self.features[[self.index[s] for s in sample_ids]]
        except KeyError as exc:
            raise LookupMissError(f"no precomputed embedding for sample {exc.args[0]!r}") from None


def extract_features(textures, extractor=None, sample_ids=None) -> list:
    if len(textures) == 0:
        raise InvalidArgumentError("no textures to embed")
    extractor = extractor or PixelStatExtractor()
    if isinstance(extractor, PrecomputedExtractor):
        if sample_ids is None:
            raise InvalidArgumentError("precomputed extraction needs sample ids")
        X = extractor.lookup(sample_ids)
    else:
        X = extractor.transform(textures)
    return [FeatureVector(row, extractor.extractor_id) for row in X]


# -- statistics and distances -----------------------------------------------

def corpus_stats(features) -> CorpusStats:
    X = as_matrix(features)
    if X.shape[0] < 2:
        raise InvalidArgumentError("corpus statistics need at least two samples")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    return CorpusStats(mean, (cov + cov.T) / 2, X.shape[0])


def _psd_sqrt(sym):
    evals, evecs = np.linalg.eigh((sym + sym.T) / 2)
    return (evecs * np.sqrt(np.clip(evals, 0, None))) @ evecs.T


def fid(a: CorpusStats, b: CorpusStats) -> MetricResult:
    """Frechet distance between the Gaussians described by two corpus stats.

    The trace of the cross term uses the symmetric form
    ``sqrt(sqrt(Sa) Sb sqrt(Sa))`` with negative eigenvalues clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise InvalidArgumentError(f"feature dimensions differ: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    cross = np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0, None)).sum()
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2 * cross)
    if not np.isfinite(value):
        raise InvalidArgumentError("FID evaluated to a non-finite value")
    return MetricResult("fid", max(value, 0.0), 0.0, {"n_a": a.n, "n_b": b.n, "raw": value})


def polynomial_kernel(X, Y, degree=3):
    return (X @ Y.T / X.shape[1] + 1.0) ** degree


def mmd2_unbiased(X, Y, degree=3) -> float:
    m, n = X.shape[0], Y.shape[0]
    kxx = polynomial_kernel(X, X, degree)
    kyy = polynomial_kernel(Y, Y, degree)
    kxy = polynomial_kernel(X, Y, degree)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2 * kxy.sum() / (m * n))


def kid_blocks(n_a: int, n_b: int, blocks: int, seed: int):
    """Disjoint, equally sized index blocks for each corpus after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    perm_a = rng.permutation(n_a)
    perm_b = rng.permutation(n_b)
    size_a, size_b = n_a // blocks, n_b // blocks
    return [(perm_a[i * size_a:(i + 1) * size_a], perm_b[i * size_b:(i + 1) * size_b]) for i in range(blocks)]


def kid(a_feats, b_feats, blocks: int = 1, seed: int = 0, degree: int = 3) -> MetricResult:
    """Unbiased polynomial-kernel MMD^2, averaged over disjoint blocks (mean +- std)."""
    A, B = as_matrix(a_feats), as_matrix(b_feats)
    if blocks < 1:
        raise InvalidArgumentError("blocks must be >= 1")
    if A.shape[1:] != B.shape[1:]:
        raise InvalidArgumentError("feature dimensions differ")
    if A.shape[0] // blocks < 2 or B.shape[0] // blocks < 2:
        raise InvalidArgumentError(f"{blocks} blocks leave fewer than two samples per block")
    pairs = kid_blocks(A.shape[0], B.shape[0], blocks, seed)
    values = np.array([mmd2_unbiased(A[ia], B[ib], degree) for ia, ib in pairs])
    return MetricResult("kid", float(values.mean()), float(values.std()),
                        {"blocks": blocks, "block_values": values.tolist(), "seed": seed})


def knn_radii(X, k: int) -> np.ndarray:
    """Distance from each row to its k-th nearest other row."""
    if not 1 <= k < X.shape[0]:
        raise InvalidArgumentError(f"k={k} must lie in [1, {X.shape[0] - 1}]")
    d = cdist(X, X)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def precision_recall(real_feats, fake_feats, k: int = 3) -> dict:
    """Fraction of fakes inside the real k-NN manifold, and of reals inside the fake one."""
    R, F = as_matrix(real_feats), as_matrix(fake_feats)
    if R.shape[1:] != F.shape[1:]:
        raise InvalidArgumentError("feature dimensions differ")
    real_r = knn_radii(R, k)
    fake_r = knn_radii(F, k)
    d = cdist(R, F)
    precision = float((d <= real_r[:, None]).any(axis=0).mean())
    recall = float((d <= fake_r[None, :]).any(axis=1).mean())
    return {"precision": precision, "recall": recall}
