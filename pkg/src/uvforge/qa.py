"""Per-texture quality gate.

Stages run in a fixed order: tint classification, brightness symmetry,
regional luminance consistency, face-vs-neck colour consistency, anomaly
score.  Each stage is also available as a standalone function.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidArgumentError, LookupMissError
from .generator import Texture

LUMA = np.array([0.299, 0.587, 0.114])


class Tint(enum.IntEnum):
    Normal = 0
    BlueTint = 1
    RedTint = 2


@dataclass(frozen=True)
class RegionMask:
    name: str
    rect: tuple  # (u0, v0, u1, v1), normalised, v grows downward in the image

    def __post_init__(self):
        u0, v0, u1, v1 = (float(x) for x in self.rect)
        if not (u0 < u1 and v0 < v1):
            raise InvalidArgumentError(f"region {self.name!r}: need u0<u1 and v0<v1")
        object.__setattr__(self, "rect", (u0, v0, u1, v1))

    def pixel_bounds(self, height: int, width: int):
        u0, v0, u1, v1 = self.rect
        if u0 < 0 or v0 < 0 or u1 > 1 or v1 > 1:
            raise InvalidArgumentError(f"region {self.name!r} lies outside the image")
        r0, r1 = int(round(v0 * height)), int(round(v1 * height))
        c0, c1 = int(round(u0 * width)), int(round(u1 * width))
        if r1 <= r0 or c1 <= c0:
            raise InvalidArgumentError(f"region {self.name!r} covers no pixels at {width}x{height}")
        return r0, r1, c0, c1

    def mean(self, image: np.ndarray):
        r0, r1, c0, c1 = self.pixel_bounds(image.shape[0], image.shape[1])
        return image[r0:r1, c0:c1].mean(axis=(0, 1))


DEFAULT_FACE_REGIONS = (
    RegionMask("forehead", (0.35, 0.10, 0.65, 0.25)),
    RegionMask("left_cheek", (0.20, 0.40, 0.35, 0.60)),
    RegionMask("right_cheek", (0.65, 0.40, 0.80, 0.60)),
    RegionMask("nose", (0.45, 0.40, 0.55, 0.55)),
    RegionMask("chin", (0.42, 0.70, 0.58, 0.82)),
)
DEFAULT_NECK = RegionMask("neck", (0.40, 0.88, 0.60, 0.98))


@dataclass(frozen=True)
class QaThresholds:
    brightness_sym_max: float = 0.05
    luminance_l1_max: float = 0.10
    neck_color_l1_max: float = 0.10
    anomaly_score_max: float = 4.0
    blur_sigma: float = 3.0

    def __post_init__(self):
        for name in ("brightness_sym_max", "luminance_l1_max", "neck_color_l1_max", "anomaly_score_max", "blur_sigma"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")


def _pixels(tex) -> np.ndarray:
    px = tex.pixels if isinstance(tex, Texture) else np.asarray(tex)
    return px.astype(np.float64)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 full-range luma of an HxWx3 array."""
    return rgb @ LUMA


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian over the two spatial axes, radius ceil(3 sigma), edge-clamped."""
    if sigma <= 0:
        return image.astype(np.float64)
    radius = int(math.ceil(3 * sigma))
    sig = (sigma, sigma) + (0,) * (image.ndim - 2)
    return ndimage.gaussian_filter(image.astype(np.float64), sig, mode="nearest", radius=radius)


# -- stage 1: tint ----------------------------------------------------------

def face_bounding_region(regions=DEFAULT_FACE_REGIONS) -> RegionMask:
    rects = np.array([r.rect for r in regions])
    return RegionMask("face_bbox", (rects[:, 0].min(), rects[:, 1].min(), rects[:, 2].max(), rects[:, 3].max()))


def tint_features(tex, regions=DEFAULT_FACE_REGIONS) -> np.ndarray:
    """Mean R, G, B over the face bounding box, then mean R-B and mean R-G."""
    r, g, b = face_bounding_region(regions).mean(_pixels(tex))
    return np.array([r, g, b, r - b, r - g])


class TintClassifier(ClassifierMixin, BaseEstimator):
    """k-nearest-neighbour tint classifier on :func:`tint_features`.

    Votes are counted over the ``k`` nearest training points (Euclidean).  A
    tied vote goes to the label whose voters have the smallest summed
    distance, then to the lowest :class:`Tint` value.
    """

    def __init__(self, k=5, regions=DEFAULT_FACE_REGIONS):
        self.k = k
        self.regions = regions

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.array([int(Tint(v) if not isinstance(v, str) else Tint[v]) for v in y])
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InvalidArgumentError("features and labels must align")
        if not 1 <= self.k <= X.shape[0]:
            raise InvalidArgumentError(f"k={self.k} must lie in [1, {X.shape[0]}]")
        self.train_features_ = X
        self.train_labels_ = y
        self.classes_ = np.array([t.value for t in Tint])
        return self

    def fit_textures(self, textures, labels):
        return self.fit(np.stack([tint_features(t, self.regions) for t in textures]), labels)

    def _predict_one(self, x):
        dist = np.sqrt(((self.train_features_ - x) ** 2).sum(axis=1))
        nearest = np.argsort(dist, kind="stable")[: self.k]
        votes, spread = {}, {}
        for i in nearest:
            lab = int(self.train_labels_[i])
            votes[lab] = votes.get(lab, 0) + 1
            spread[lab] = spread.get(lab, 0.0) + dist[i]
        return min(votes, key=lambda lab: (-votes[lab], spread[lab], lab))

    def predict(self, X):
        check_is_fitted(self, "train_features_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([self._predict_one(x) for x in X])

    def classify(self, tex) -> Tint:
        return Tint(int(self.predict(tint_features(tex, self.regions)[None, :])[0]))


def classify_tint(tex, model: TintClassifier) -> Tint:
    check_is_fitted(model, "train_features_")
    if model.k > model.train_features_.shape[0]:
        raise InvalidArgumentError("k exceeds training set size")
    return model.classify(tex)


def synthetic_tint_curation(textures, shift: float = 40.0):
    """Curation set built from clean textures.

    Sample ``i`` is clean texture ``i`` labelled Normal, BlueTint or RedTint in
    rotation (``i % 3``), with ``shift`` added to the blue or red channel for
    the tinted labels.  Returns ``(textures, labels)`` of the same length as
    the input.
    """
    cycle = ((Tint.Normal, None), (Tint.BlueTint, 2), (Tint.RedTint, 0))
    out, labels = [], []
    for i, tex in enumerate(textures):
        label, channel = cycle[i % 3]
        px = _pixels(tex)
        if channel is not None:
            px[..., channel] += shift
        out.append(Texture(np.clip(px, 0, 255).astype(np.uint8)))
        labels.append(label)
    return out, labels


# -- stages 2-4: photometric consistency ------------------------------------

def brightness_symmetry_error(tex) -> float:
    """|mean luma of left half - mean luma of right half| / 255.

    Luma sums are accumulated exactly in integer thousandths, so the result is
    independent of pixel order (mirroring a texture leaves it bit-identical).
    For odd widths the centre column belongs to neither half.
    """
    px = tex.pixels if isinstance(tex, Texture) else np.asarray(tex)
    y = px.astype(np.int64) @ np.array([299, 587, 114], dtype=np.int64)
    half = y.shape[1] // 2
    left = int(y[:, :half].sum())
    right = int(y[:, y.shape[1] - half:].sum())
    count = y.shape[0] * half
    if count == 0:
        return 0.0
    return abs(left - right) / (count * 1000 * 255.0)


def luminance_consistency(tex, regions=DEFAULT_FACE_REGIONS, thresholds: QaThresholds = QaThresholds()):
    regions = list(regions)
    if len(regions) < 2:
        raise InvalidArgumentError("luminance consistency needs at least two regions")
    y = gaussian_blur(luminance(_pixels(tex)), thresholds.blur_sigma)
    means = [float(r.mean(y)) for r in regions]
    worst = max(abs(a - b) for i, a in enumerate(means) for b in means[i + 1:]) / 255.0
    return {"max_pair_l1": worst, "passed": bool(worst <= thresholds.luminance_l1_max)}


def neck_color_consistency(tex, face_regions=DEFAULT_FACE_REGIONS, neck: RegionMask = DEFAULT_NECK,
                           thresholds: QaThresholds = QaThresholds()):
    face_regions = list(face_regions)
    if not face_regions:
        raise InvalidArgumentError("at least one face region is required")
    rgb = gaussian_blur(_pixels(tex), thresholds.blur_sigma)
    neck_mean = neck.mean(rgb)
    worst = max(float(np.abs(r.mean(rgb) - neck_mean).mean()) for r in face_regions) / 255.0
    return {"max_l1": worst, "passed": bool(worst <= thresholds.neck_color_l1_max)}


# -- stage 5: anomaly -------------------------------------------------------

def downsample_features(tex, grid: int = 8) -> np.ndarray:
    """Box-average to ``grid`` x ``grid`` per channel, scaled to [0, 1]."""
    px = _pixels(tex) / 255.0
    h, w, _ = px.shape
    if h % grid or w % grid:
        raise InvalidArgumentError(f"texture {w}x{h} not divisible into a {grid}x{grid} grid")
    return px.reshape(grid, h // grid, grid, w // grid, 3).mean(axis=(1, 3)).ravel()


class MahalanobisScorer(BaseEstimator):
    """Mahalanobis distance to a Gaussian fitted on reference features.

    The covariance is shrunk toward a scaled identity,
    ``(1 - shrinkage) * S + shrinkage * trace(S) / F * I``, so it stays
    invertible when there are fewer reference samples than feature dimensions.
    """

    def __init__(self, shrinkage=0.01, grid=8):
        self.shrinkage = shrinkage
        self.grid = grid

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise InvalidArgumentError("need at least two reference feature rows")
        if not 0 <= self.shrinkage <= 1:
            raise InvalidArgumentError("shrinkage must lie in [0, 1]")
        self.location_ = X.mean(axis=0)
        cov = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1])
        target = np.trace(cov) / X.shape[1]
        cov = (1 - self.shrinkage) * cov + self.shrinkage * target * np.eye(X.shape[1])
        evals, evecs = np.linalg.eigh((cov + cov.T) / 2)
        if evals.min() <= 0:
            raise InvalidArgumentError("reference covariance is singular; raise shrinkage")
        self.whitener_ = evecs / np.sqrt(evals)
        self.n_features_in_ = X.shape[1]
        return self

    def fit_textures(self, textures):
        return self.fit(np.stack([downsample_features(t, self.grid) for t in textures]))

    def score_samples(self, X):
        check_is_fitted(self, "whitener_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.sqrt((((X - self.location_) @ self.whitener_) ** 2).sum(axis=1))

    def score(self, tex, sample_id=None):
        return float(self.score_samples(downsample_features(tex, self.grid)[None, :])[0])


class ExternalScorer:
    """Scores produced by an outside model, keyed by sample id."""

    def __init__(self, scores: dict):
        self.scores = {str(k): float(v) for k, v in scores.items()}

    @classmethod
    def from_jsonl(cls, path):
        from .io import read_jsonl

        return cls({r["sample_id"]: r["score"] for r in read_jsonl(path)})

    def score(self, tex, sample_id=None):
        if sample_id is None or sample_id not in self.scores:
            raise LookupMissError(f"no external anomaly score for sample {sample_id!r}")
        return self.scores[sample_id]


def anomaly_score(tex, scorer, sample_id=None) -> float:
    if scorer is None:
        raise NotFittedError("no anomaly scorer configured")
    if isinstance(scorer, MahalanobisScorer):
        check_is_fitted(scorer, "whitener_")
    return scorer.score(tex, sample_id)


# -- pipeline ---------------------------------------------------------------

STAGES = ("tint", "brightness_symmetry", "luminance_consistency", "neck_color", "anomaly")


@dataclass
class QaConfig:
    tint_model: TintClassifier | None = None
    regions: tuple = DEFAULT_FACE_REGIONS
    neck: RegionMask = DEFAULT_NECK
    thresholds: QaThresholds = field(default_factory=QaThresholds)
    scorer: object = None
    short_circuit: bool = True


@dataclass
class StageResult:
    stage_name: str
    score: float | None
    passed: bool
    skipped: bool = False
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        score = None if self.score is None or not math.isfinite(self.score) else self.score
        out = {"stage_name": self.stage_name, "score": score, "passed": self.passed, "skipped": self.skipped}
        out.update(self.detail)
        return out


@dataclass
class QaReport:
    sample_id: str
    stages: list

    @property
    def overall_pass(self) -> bool:
        return all(s.passed for s in self.stages if not s.skipped)

    def stage(self, name) -> StageResult:
        return next(s for s in self.stages if s.stage_name == name)

    def to_dict(self):
        return {"sample_id": self.sample_id, "overall_pass": self.overall_pass,
                "stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, obj):
        stages = []
        for s in obj["stages"]:
            detail = {k: v for k, v in s.items() if k not in ("stage_name", "score", "passed", "skipped")}
            score = s["score"] if s["score"] is not None else (None if s["skipped"] else float("nan"))
            stages.append(StageResult(s["stage_name"], score, bool(s["passed"]), bool(s["skipped"]), detail))
        report = cls(obj["sample_id"], stages)
        if "overall_pass" in obj and bool(obj["overall_pass"]) != report.overall_pass:
            raise InvalidArgumentError(f"report {obj['sample_id']!r}: overall_pass disagrees with its stages")
        return report


def _run_stage(name, tex, cfg: QaConfig, sample_id):
    th = cfg.thresholds
    if name == "tint":
        if cfg.tint_model is None:
            return None
        label = classify_tint(tex, cfg.tint_model)
        return StageResult(name, float(label != Tint.Normal), label == Tint.Normal, detail={"label": label.name})
    if name == "brightness_symmetry":
        v = brightness_symmetry_error(tex)
        return StageResult(name, v, v <= th.brightness_sym_max)
    if name == "luminance_consistency":
        r = luminance_consistency(tex, cfg.regions, th)
        return StageResult(name, r["max_pair_l1"], r["passed"])
    if name == "neck_color":
        r = neck_color_consistency(tex, cfg.regions, cfg.neck, th)
        return StageResult(name, r["max_l1"], r["passed"])
    if name == "anomaly":
        if cfg.scorer is None:
            return None
        v = anomaly_score(tex, cfg.scorer, sample_id)
        return StageResult(name, v, v <= th.anomaly_score_max)
    raise InvalidArgumentError(f"unknown stage {name!r}")


def validate_texture(tex, cfg: QaConfig = None, sample_id: str = "") -> QaReport:
    """Run every stage in order.  Unconfigured stages (no tint model, no scorer)
    are recorded as skipped; with ``short_circuit`` every stage after the
    first failure is skipped too.  A stage that raises fails with a NaN score."""
    cfg = cfg or QaConfig()
    stages = []
    failed = False
    for name in STAGES:
        if failed and cfg.short_circuit:
            stages.append(StageResult(name, None, False, skipped=True))
            continue
        try:
            result = _run_stage(name, tex, cfg, sample_id)
        except Exception as exc:  # noqa: BLE001 - any stage fault fails the stage
            result = StageResult(name, float("nan"), False, detail={"error": f"{type(exc).__name__}: {exc}"})
        if result is None:
            result = StageResult(name, None, False, skipped=True)
        result.passed = bool(result.passed)
        stages.append(result)
        if not result.skipped and not result.passed:
            failed = True
    return QaReport(sample_id, stages)


def regions_from_config(items):
    return tuple(RegionMask(r["name"], tuple(r["rect"])) for r in items)
