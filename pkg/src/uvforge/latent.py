"""Latent vectors, attribute directions and the edit arithmetic.

An edit moves an intermediate latent ``w`` along a unit attribute normal by a
step that shrinks as ``w`` approaches (or crosses) the attribute boundary, and
then pulls the result toward the mean latent by the truncation factor ``psi``::

    s      = normal . w + bias
    alpha  = alpha_max * clamp((s_cap - s) / (s_cap - s_floor), 0, 1)
    w'     = w_mean + psi * ((w + alpha * normal) - w_mean)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidArgumentError

DEFAULT_LATENT_DIM = 512


class Space(enum.IntEnum):
    Z = 0
    W = 1


@dataclass(frozen=True, eq=False)
class LatentVec:
    values: np.ndarray
    space_tag: Space = Space.W

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise InvalidArgumentError("latent vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("latent vector has non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "space_tag", Space(self.space_tag))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LatentVec):
            return NotImplemented
        return self.space_tag == other.space_tag and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((int(self.space_tag), self.values.tobytes()))


@dataclass(frozen=True, eq=False)
class AttributeDirection:
    normal: np.ndarray
    bias: float
    attribute_name: str
    train_meta: dict = field(default_factory=lambda: {"n_samples": 0, "accuracy": 0.0})

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64)
        if normal.ndim != 1 or normal.size == 0 or not np.all(np.isfinite(normal)):
            raise InvalidArgumentError("direction normal must be a finite 1-D array")
        norm = np.linalg.norm(normal)
        if norm == 0:
            raise InvalidArgumentError("direction normal has zero length")
        if abs(norm - 1.0) > 1e-9:
            normal = normal / norm
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "bias", float(self.bias))
        acc = float(self.train_meta.get("accuracy", 0.0))
        if not 0.0 <= acc <= 1.0:
            raise InvalidArgumentError(f"accuracy {acc} outside [0, 1]")

    @property
    def dim(self) -> int:
        return self.normal.shape[0]


@dataclass(frozen=True)
class TruncationConfig:
    psi: float
    w_mean: LatentVec

    def __post_init__(self):
        _check_psi(self.psi)


@dataclass(frozen=True)
class StepPolicy:
    alpha_max: float = 3.0
    s_floor: float = -3.0
    s_cap: float = 1.0

    def __post_init__(self):
        if not self.alpha_max > 0:
            raise InvalidArgumentError("alpha_max must be positive")
        if not self.s_cap > self.s_floor:
            raise InvalidArgumentError("s_cap must exceed s_floor")


def _check_psi(psi):
    if not 0.0 <= psi <= 1.0:
        raise InvalidArgumentError(f"psi={psi} outside [0, 1]")


def _check_dims(a: int, b: int):
    if a != b:
        raise InvalidArgumentError(f"dimension mismatch: {a} != {b}")


def _require_w(w: LatentVec):
    if w.space_tag != Space.W:
        raise InvalidArgumentError("operation expects a W-space latent")


def _mapping_fn(generator):
    if hasattr(generator, "map_batch"):
        return generator.map_batch, generator.latent_dim
    if callable(generator):
        return generator, getattr(generator, "latent_dim", None)
    raise InvalidArgumentError("generator must expose map_batch or be callable")


def estimate_w_mean(generator, n: int, seed: int, latent_dim: int | None = None) -> LatentVec:
    """Mean of ``n`` mapped latents for z drawn from N(0, I) with ``seed``.

    ``generator`` is either a generator handle (anything with ``sample_w``)
    or a plain callable mapping an (n, D) array of z rows
    to (n, D) w rows, in which case ``latent_dim`` must be given.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if hasattr(generator, "sample_w"):
        return LatentVec(_mean_rows(generator.sample_w(n, seed)), Space.W)
    fn, dim = _mapping_fn(generator)
    dim = latent_dim or dim
    if dim is None:
        raise InvalidArgumentError("latent_dim is required for a bare mapping callable")
    z = np.random.default_rng(seed).standard_normal((n, dim))
    return LatentVec(_mean_rows(fn(z)), Space.W)


def _mean_rows(w):
    # shift by the first row so constant inputs give their value exactly
    w = np.asarray(w, dtype=np.float64)
    return w[0] + (w - w[0]).mean(axis=0)


def manipulate(w: LatentVec, d: AttributeDirection, alpha: float) -> LatentVec:
    _require_w(w)
    _check_dims(w.dim, d.dim)
    return LatentVec(w.values + alpha * d.normal, Space.W)


def truncate(w: LatentVec, cfg: TruncationConfig) -> LatentVec:
    _require_w(w)
    _check_psi(cfg.psi)
    _check_dims(w.dim, cfg.w_mean.dim)
    mean = cfg.w_mean.values
    return LatentVec(mean + cfg.psi * (w.values - mean), Space.W)


def _project(rows, normal, bias):
    # elementwise product + pairwise sum per row: identical for 1 or n rows
    return (rows * normal).sum(axis=-1) + bias


def signed_distance(w: LatentVec, d: AttributeDirection) -> float:
    _check_dims(w.dim, d.dim)
    return float(_project(w.values, d.normal, d.bias))


def adaptive_step(s: float, policy: StepPolicy) -> float:
    ramp = (policy.s_cap - s) / (policy.s_cap - policy.s_floor)
    return policy.alpha_max * min(max(ramp, 0.0), 1.0)


def edit(w: LatentVec, d: AttributeDirection, policy: StepPolicy, cfg: TruncationConfig) -> LatentVec:
    return edit_with_step(w, d, policy, cfg)[0]


def edit_with_step(w, d, policy, cfg):
    """Like :func:`edit` but also returns the effective step that was applied."""
    alpha = adaptive_step(signed_distance(w, d), policy)
    return truncate(manipulate(w, d, alpha), cfg), alpha


class LatentEditor(TransformerMixin, BaseEstimator):
    """Boundary-aware attribute edit followed by truncation, on rows of W.

    ``fit`` estimates the mean latent from a sample of mapped latents unless
    ``w_mean`` is supplied up front.
    """

    def __init__(self, direction=None, alpha_max=3.0, s_floor=-3.0, s_cap=1.0, psi=1.0, w_mean=None):
        self.direction = direction
        self.alpha_max = alpha_max
        self.s_floor = s_floor
        self.s_cap = s_cap
        self.psi = psi
        self.w_mean = w_mean

    def fit(self, X, y=None):
        if self.direction is None:
            raise InvalidArgumentError("LatentEditor needs a direction")
        if self.w_mean is not None:
            mean = self.w_mean.values if isinstance(self.w_mean, LatentVec) else np.asarray(self.w_mean, float)
        else:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 2 or X.shape[0] < 1:
                raise InvalidArgumentError("X must be a non-empty 2-D array")
            mean = X.mean(axis=0)
        _check_dims(mean.shape[0], self.direction.dim)
        self.policy_ = StepPolicy(self.alpha_max, self.s_floor, self.s_cap)
        self.truncation_ = TruncationConfig(self.psi, LatentVec(mean, Space.W))
        self.n_features_in_ = mean.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "truncation_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        _check_dims(X.shape[1], self.n_features_in_)
        out = np.empty_like(X)
        for i, row in enumerate(X):
            out[i] = edit(LatentVec(row, Space.W), self.direction, self.policy_, self.truncation_).values
        return out

    def step_sizes(self, X):
        """Effective step applied to each row of ``X``."""
        check_is_fitted(self, "policy_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([adaptive_step(signed_distance(LatentVec(r, Space.W), self.direction), self.policy_)
                         for r in X])
