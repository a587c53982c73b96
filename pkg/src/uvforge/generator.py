"""Texture generators: a deterministic toy generator and a precomputed-corpus adapter.

Both expose the same surface (``map_latent``, ``map_batch``, ``synthesize``,
``sample_w``, ``sample_batch``) so the editing, QA and metric code never needs
to know which one produced a texture.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CapacityError, InfeasibleError, InvalidArgumentError, LookupMissError
from .latent import DEFAULT_LATENT_DIM, LatentVec, Space

DEFAULT_UV_LAYOUT = "ffhq-uv"


class GeneratorKind(str, enum.Enum):
    TOY = "Toy"
    CORPUS = "Corpus"


@dataclass(frozen=True, eq=False)
class Texture:
    pixels: np.ndarray
    uv_layout_id: str = DEFAULT_UV_LAYOUT
    colorspace: str = "sRGB"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"texture must be HxWx3, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise InvalidArgumentError("texture channel values outside [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Texture):
            return NotImplemented
        return self.uv_layout_id == other.uv_layout_id and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class SampleRecord:
    z: LatentVec | None
    w: LatentVec
    texture: Texture | None
    sample_id: str


def sample_id(index: int) -> str:
    return f"s{index:06d}"


def _check_texture_size(size):
    w, h = size
    for v in (w, h):
        if v < 64 or v > 1024 or v & (v - 1):
            raise InvalidArgumentError(f"texture dimension {v} is not a power of two in [64, 1024]")


class _GeneratorBase:
    kind: GeneratorKind
    latent_dim: int
    texture_size: tuple

    def map_latent(self, z: LatentVec) -> LatentVec:
        if z.space_tag != Space.Z:
            raise InvalidArgumentError("map_latent expects a Z-space latent")
        if z.dim != self.latent_dim:
            raise InvalidArgumentError(f"dimension mismatch: {z.dim} != {self.latent_dim}")
        return LatentVec(self.map_batch(z.values[None, :])[0], Space.W)

    def sample_batch(self, n: int, seed: int) -> list:
        records = self.sample_latent_records(n, seed)
        return [SampleRecord(r.z, r.w, self.synthesize(r.w), r.sample_id) for r in records]


class ToyGenerator(_GeneratorBase):
    """Seeded stand-in for a trained texture GAN.

    Mapping: ``w = b + tanh(A z)`` with ``A`` ~ N(0, gain^2 / D).  Synthesis
    mixes a fixed bank of smooth, left-right symmetric basis images with
    coefficients ``tanh(P w / spread)`` over a skin-tone base and symmetric
    facial feature blobs.  Named attribute axes (``beard``, ``age``, ``tone``)
    are rows of ``P`` so planted labels along them correspond to visible edits.
    """

    kind = GeneratorKind.TOY
    ATTRIBUTES = ("tone", "beard", "age", "warmth")
    N_BASIS = 6

    def __init__(self, latent_dim: int = DEFAULT_LATENT_DIM, texture_size=(256, 256), seed: int = 0,
                 uv_layout_id: str = DEFAULT_UV_LAYOUT):
        if latent_dim < 2:
            raise InvalidArgumentError("latent_dim must be >= 2")
        _check_texture_size(texture_size)
        self.latent_dim = int(latent_dim)
        self.texture_size = (int(texture_size[0]), int(texture_size[1]))
        self.seed = int(seed)
        self.uv_layout_id = uv_layout_id

        rng = np.random.default_rng([self.seed, 0x70F])
        d = self.latent_dim
        self.map_weight = rng.standard_normal((d, d)) * (0.8 / math.sqrt(d))
        self.map_bias = rng.standard_normal(d) * 0.1
        n_axes = len(self.ATTRIBUTES) + self.N_BASIS
        proj = rng.standard_normal((n_axes, d))
        # orthonormal rows keep attribute axes independent of each other
        q, _ = np.linalg.qr(proj.T) if n_axes <= d else (proj.T, None)
        self.projections = q.T[:n_axes] if n_axes <= d else proj / np.linalg.norm(proj, axis=1, keepdims=True)
        self._basis_colors = rng.uniform(-1.0, 1.0, (self.N_BASIS, 3))
        self._basis = _basis_bank(self.texture_size, self.N_BASIS)
        self._layers = _feature_layers(self.texture_size)

    def config(self) -> dict:
        return {"kind": self.kind.value, "latent_dim": self.latent_dim,
                "texture_size": list(self.texture_size), "seed": self.seed, "uv_layout_id": self.uv_layout_id}

    def attribute_axis(self, name: str) -> np.ndarray:
        """Unit W-space axis controlling a named toy attribute."""
        try:
            return self.projections[self.ATTRIBUTES.index(name)].copy()
        except ValueError:
            raise LookupMissError(f"toy generator has no attribute {name!r}") from None

    def map_batch(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.latent_dim:
            raise InvalidArgumentError(f"expected (n, {self.latent_dim}) latent rows")
        return self.map_bias + np.tanh(Z @ self.map_weight.T)

    def sample_z(self, n: int, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).standard_normal((n, self.latent_dim))

    def sample_w(self, n: int, seed: int) -> np.ndarray:
        return self.map_batch(self.sample_z(n, seed))

    def sample_latent_records(self, n: int, seed: int) -> list:
        if n < 0:
            raise InvalidArgumentError("n must be >= 0")
        if n == 0:
            return []
        Z = self.sample_z(n, seed)
        W = self.map_batch(Z)
        return [SampleRecord(LatentVec(Z[i], Space.Z), LatentVec(W[i], Space.W), None, sample_id(i))
                for i in range(n)]

    def coefficients(self, w: LatentVec) -> np.ndarray:
        # w coordinates have spread ~0.6, so projections onto unit axes do too
        return np.tanh((self.projections @ w.values) / 0.6)

    def synthesize(self, w: LatentVec) -> Texture:
        if w.space_tag != Space.W:
            raise InvalidArgumentError("synthesize expects a W-space latent")
        if w.dim != self.latent_dim:
            raise InvalidArgumentError(f"dimension mismatch: {w.dim} != {self.latent_dim}")
        c = self.coefficients(w)
        tone, beard, age, warmth = c[:4]
        basis_c = c[4:]

        light = np.array([228.0, 192.0, 168.0])
        dark = np.array([128.0, 88.0, 66.0])
        skin = light + (dark - light) * (0.5 + 0.45 * tone)
        skin = skin + warmth * np.array([6.0, 0.0, -6.0])
        img = np.broadcast_to(skin, self._basis.shape[1:3] + (3,)).copy()

        for k in range(self.N_BASIS):
            img += (6.0 * basis_c[k]) * self._basis[k][..., None] * self._basis_colors[k]

        L = self._layers
        shade = skin * 0.45
        img += (shade - img) * (0.85 * L["eyes"])[..., None]
        img += (shade - img) * ((0.35 + 0.25 * age) * L["brows"])[..., None]
        lips = skin * np.array([0.92, 0.62, 0.62])
        img += (lips - img) * (0.7 * L["mouth"])[..., None]
        img -= (12.0 * (beard + 1.0)) * L["beard"][..., None]
        img -= (6.0 * (age + 1.0)) * L["wrinkles"][..., None]
        img -= 6.0 * L["neck"][..., None]

        pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        return Texture(pixels, self.uv_layout_id)


def _grid(size):
    w, h = size
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    return np.meshgrid(u, v)


def _blob(U, V, cu, cv, su, sv):
    return np.exp(-0.5 * (((U - cu) / su) ** 2 + ((V - cv) / sv) ** 2))


def _mirror_pair(U, V, cu, cv, su, sv):
    return _blob(U, V, cu, cv, su, sv) + _blob(U, V, 1.0 - cu, cv, su, sv)


def _basis_bank(size, k):
    U, V = _grid(size)
    du = U - 0.5
    bank = [
        V - 0.5,
        np.cos(2 * np.pi * du),
        np.cos(np.pi * (V - 0.5)) * np.cos(np.pi * du),
        np.cos(4 * np.pi * du) * 0.5,
        np.sin(np.pi * V) - 0.64,
        (du ** 2) * 4 - 0.33,
    ]
    return np.stack(bank[:k])


def _feature_layers(size):
    U, V = _grid(size)
    return {
        "eyes": _mirror_pair(U, V, 0.38, 0.33, 0.045, 0.022),
        "brows": _mirror_pair(U, V, 0.38, 0.285, 0.06, 0.01),
        "mouth": _blob(U, V, 0.5, 0.635, 0.06, 0.018),
        "beard": _blob(U, V, 0.5, 0.74, 0.2, 0.09),
        "wrinkles": _mirror_pair(U, V, 0.3, 0.5, 0.04, 0.08),
        "neck": ((V > 0.86)).astype(np.float64),
    }


class CorpusGenerator(_GeneratorBase):
    """Adapter over exported (z, w, texture) triples listed in a JSON-lines manifest.

    The manifest holds ``{sample_id, z_path, w_path, texture_path}`` records with
    paths relative to the manifest.  Mapping and synthesis are table lookups,
    so any latent not present in the corpus is a lookup miss.
    """

    kind = GeneratorKind.CORPUS

    def __init__(self, manifest_path, seed: int = 0):
        from .io import read_jsonl, read_lvec

        self.manifest_path = Path(manifest_path)
        self.seed = seed
        base = self.manifest_path.parent
        self.entries = []
        ids = set()
        for rec in read_jsonl(self.manifest_path):
            sid = rec["sample_id"]
            if sid in ids:
                raise InvalidArgumentError(f"duplicate sample_id {sid!r} in corpus")
            ids.add(sid)
            z = read_lvec(base / rec["z_path"]) if rec.get("z_path") else None
            w = read_lvec(base / rec["w_path"])
            self.entries.append((sid, z, w, base / rec["texture_path"]))
        if not self.entries:
            raise InvalidArgumentError("corpus manifest is empty")
        self.latent_dim = self.entries[0][2].dim
        self._by_z = {_key(z): w for _, z, w, _ in self.entries if z is not None}
        self._by_w = {_key(w): p for _, _, w, p in self.entries}
        first = self.synthesize(self.entries[0][2])
        self.texture_size = (first.width, first.height)

    def map_batch(self, Z) -> np.ndarray:
        out = []
        for row in np.asarray(Z, dtype=np.float64):
            try:
                out.append(self._by_z[_key_values(row)].values)
            except KeyError:
                raise LookupMissError("z vector not present in corpus") from None
        return np.stack(out)

    def synthesize(self, w: LatentVec) -> Texture:
        from .io import read_png

        try:
            path = self._by_w[_key(w)]
        except KeyError:
            raise LookupMissError("w vector not present in corpus") from None
        return Texture(read_png(path))

    def _pick(self, n, seed):
        if n < 0:
            raise InvalidArgumentError("n must be >= 0")
        if n > len(self.entries):
            raise CapacityError(f"corpus holds {len(self.entries)} samples, {n} requested", source="corpus")
        idx = np.sort(np.random.default_rng(seed).choice(len(self.entries), size=n, replace=False))
        return [self.entries[i] for i in idx]

    def sample_w(self, n: int, seed: int) -> np.ndarray:
        idx = np.random.default_rng(seed).integers(0, len(self.entries), size=n)
        return np.stack([self.entries[i][2].values for i in idx])

    def sample_latent_records(self, n: int, seed: int) -> list:
        return [SampleRecord(z, w, None, sid) for sid, z, w, _ in self._pick(n, seed)]

    def sample_batch(self, n: int, seed: int) -> list:
        return [SampleRecord(z, w, self.synthesize(w), sid) for sid, z, w, _ in self._pick(n, seed)]


def _key_values(values) -> bytes:
    return np.asarray(values, dtype="<f4").tobytes()


def _key(vec: LatentVec) -> bytes:
    return _key_values(vec.values)


def generator_from_config(cfg: dict, base_dir=None):
    kind = cfg.get("kind", "Toy")
    if kind.lower() == "toy":
        return ToyGenerator(cfg.get("latent_dim", DEFAULT_LATENT_DIM), tuple(cfg.get("texture_size", (256, 256))),
                            cfg.get("seed", 0), cfg.get("uv_layout_id", DEFAULT_UV_LAYOUT))
    if kind.lower() == "corpus":
        path = Path(cfg["manifest"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return CorpusGenerator(path, cfg.get("seed", 0))
    raise InvalidArgumentError(f"unknown generator kind {kind!r}")


# -- demographic planning ---------------------------------------------------

@dataclass(frozen=True)
class DemographicTarget:
    bins: list = field(default_factory=list)
    tolerance: float = 0.01

    def __post_init__(self):
        fractions = [f for _, f in self.bins]
        if any(f < 0 for f in fractions):
            raise InvalidArgumentError("target fractions must be non-negative")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"target fractions sum to {sum(fractions)}, not 1")
        if not 0 < self.tolerance < 1:
            raise InvalidArgumentError("tolerance must lie in (0, 1)")
        if len({g for g, _ in self.bins}) != len(self.bins):
            raise InvalidArgumentError("duplicate group names")

    @classmethod
    def from_counts(cls, counts: dict, tolerance: float = 0.01):
        total = sum(counts.values())
        return cls([(g, c / total) for g, c in counts.items()], tolerance)


def largest_remainder(weights, total: int) -> list:
    """Round non-negative real shares summing to ``total`` into integers that
    also sum to ``total``; remainders are awarded largest first, ties to the
    earlier group."""
    floors = [math.floor(x) for x in weights]
    short = total - sum(floors)
    order = sorted(range(len(weights)), key=lambda i: (-(weights[i] - floors[i]), i))
    for i in order[:short]:
        floors[i] += 1
    return floors


def plan_demographic_batch(current_counts: dict, target: DemographicTarget, n_total: int) -> dict:
    """Per-group generation quotas that move the corpus toward ``target``.

    Each group's deficit against its target share of ``n_total`` receives a
    proportional slice of the remaining budget, rounded by largest remainder.
    """
    groups = [g for g, _ in target.bins]
    unknown = set(current_counts) - set(groups)
    if unknown:
        raise InvalidArgumentError(f"counts for groups outside the target: {sorted(unknown)}")
    current = [int(current_counts.get(g, 0)) for g in groups]
    if any(c < 0 for c in current):
        raise InvalidArgumentError("current counts must be non-negative")
    budget = n_total - sum(current)
    if budget < 0:
        raise InvalidArgumentError("n_total is smaller than the existing corpus")
    if n_total == 0:
        return {g: 0 for g in groups}

    fractions = [f for _, f in target.bins]
    over = [g for g, c, f in zip(groups, current, fractions) if c / n_total > f + target.tolerance]
    if over:
        raise InfeasibleError(f"groups already above target + tolerance: {over}", over)

    deficits = [max(0.0, f * n_total - c) for c, f in zip(current, fractions)]
    total_deficit = sum(deficits)
    shares = [d * budget / total_deficit for d in deficits] if total_deficit > 0 else [0.0] * len(groups)
    quotas = largest_remainder(shares, budget) if budget else [0] * len(groups)

    off = [g for g, c, q, f in zip(groups, current, quotas, fractions)
           if abs((c + q) / n_total - f) > target.tolerance]
    if off:
        raise InfeasibleError(f"cannot reach target within tolerance for {off}", off)
    return dict(zip(groups, quotas))


AGE_DISTRIBUTION = {
    "<10": 2991, "10-20": 1783, "21-30": 6044, "31-40": 6645,
    "41-50": 4159, "51-60": 2082, "61-70": 616, "71-80": 35,
}
