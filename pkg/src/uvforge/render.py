"""Deterministic software renderer for textured head meshes.

Conventions (fixed so renders are bit-reproducible):

* right-handed world, +Y up; the camera sits at ``distance`` from the mesh
  centroid at the sampled (yaw, pitch) and looks at the centroid;
* vertical field of view ``fov``; pixel (row i, col j) is sampled at its
  centre ``(j + 0.5, i + 0.5)`` in screen space with y growing downward;
* coverage uses the top-left fill rule; depth test keeps the nearest surface
  and the earlier triangle on exact ties;
* UVs are interpolated perspective-correctly and the texture is sampled
  bilinearly with edge clamping, OBJ ``v`` pointing up the image;
* no lighting: output is albedo only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError, ParseError
from .generator import Texture
from .metrics import PixelStatExtractor, corpus_stats, fid, kid

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 3)
    uvs: np.ndarray  # (T, 2)
    tri_vertices: np.ndarray  # (N, 3) vertex indices per corner
    tri_uvs: np.ndarray  # (N, 3) uv indices per corner
    uv_clamped: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        fv = np.asarray(self.tri_vertices, dtype=np.int64).reshape(-1, 3)
        ft = np.asarray(self.tri_uvs, dtype=np.int64).reshape(-1, 3)
        if fv.shape[0] < 1 or fv.shape != ft.shape:
            raise InvalidArgumentError("mesh needs at least one triangle with a UV index per corner")
        if fv.min() < 0 or fv.max() >= v.shape[0] or ft.min() < 0 or ft.max() >= t.shape[0]:
            raise InvalidArgumentError("triangle index out of range")
        outside = int(((t < 0) | (t > 1)).any(axis=1).sum())
        if outside:
            t = np.clip(t, 0.0, 1.0)
        for name, arr in (("vertices", v), ("uvs", t), ("tri_vertices", fv), ("tri_uvs", ft)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "uv_clamped", self.uv_clamped + outside)

    @property
    def n_triangles(self):
        return self.tri_vertices.shape[0]

    def centroid(self):
        return self.vertices[np.unique(self.tri_vertices)].mean(axis=0)

    def surface_area(self):
        p = self.vertices[self.tri_vertices]
        return float(0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1).sum())


def _obj_index(token, count, lineno, what):
    try:
        idx = int(token)
    except ValueError:
        raise ParseError(f"bad {what} index {token!r}", lineno) from None
    if idx == 0:
        raise ParseError(f"{what} index 0 is invalid (OBJ indices are 1-based)", lineno)
    idx = idx - 1 if idx > 0 else count + idx
    if not 0 <= idx < count:
        raise ParseError(f"{what} index {token} out of range", lineno)
    return idx


def parse_obj(text: str) -> Mesh:
    verts, uvs, fv, ft = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            try:
                verts.append([float(x) for x in rest[:3]])
            except ValueError:
                raise ParseError("malformed v record", lineno) from None
            if len(rest) < 3:
                raise ParseError("v record needs three coordinates", lineno)
        elif tag == "vt":
            try:
                uvs.append([float(x) for x in rest[:2]])
            except ValueError:
                raise ParseError("malformed vt record", lineno) from None
            if len(rest) < 2:
                raise ParseError("vt record needs two coordinates", lineno)
        elif tag == "f":
            if len(rest) < 3:
                raise ParseError("face needs at least three corners", lineno)
            corners = []
            for c in rest:
                parts = c.split("/")
                if len(parts) < 2 or parts[1] == "":
                    raise ParseError("face corner has no texture coordinate (vt is mandatory)", lineno)
                corners.append((_obj_index(parts[0], len(verts), lineno, "vertex"),
                                _obj_index(parts[1], len(uvs), lineno, "uv")))
            for k in range(1, len(corners) - 1):
                tri = (corners[0], corners[k], corners[k + 1])
                fv.append([c[0] for c in tri])
                ft.append([c[1] for c in tri])
    if not fv:
        raise ParseError("OBJ contains no faces")
    mesh = Mesh(np.array(verts), np.array(uvs), np.array(fv), np.array(ft))
    if mesh.uv_clamped:
        log.warning("clamped %d texture coordinates into [0, 1]", mesh.uv_clamped)
    return mesh


def load_mesh(path) -> Mesh:
    return parse_obj(Path(path).read_text(encoding="utf-8"))


def mesh_to_obj(mesh: Mesh) -> str:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"vt {u:.6f} {v:.6f}" for u, v in mesh.uvs]
    lines += ["f " + " ".join(f"{a + 1}/{b + 1}" for a, b in zip(fv, ft))
              for fv, ft in zip(mesh.tri_vertices, mesh.tri_uvs)]
    return "\n".join(lines) + "\n"


def head_mesh(n_u: int = 48, n_v: int = 40) -> Mesh:
    """Procedural head-and-neck surface whose UV layout matches the texture
    convention: u sweeps around the head (face centre at u=0.5), image v runs
    from crown (top) to neck (bottom)."""
    verts, uvs, fv = [], [], []
    for j in range(n_v + 1):
        v_img = j / n_v
        height = 1.25 - 2.5 * v_img
        if v_img < 0.86:
            t = (v_img - 0.45) / 0.47
            radius = math.sqrt(max(1.0 - t * t, 0.0)) * 0.95 + 0.05
        else:
            radius = 0.45
        for i in range(n_u + 1):
            u = i / n_u
            theta = (u - 0.5) * 1.5 * math.pi
            verts.append((0.8 * radius * math.sin(theta), height, 0.9 * radius * math.cos(theta)))
            uvs.append((u, 1.0 - v_img))
    stride = n_u + 1
    for j in range(n_v):
        for i in range(n_u):
            a, b = j * stride + i, j * stride + i + 1
            c, d = a + stride, b + stride
            fv.append((a, c, b))
            fv.append((b, c, d))
    fv = np.array(fv)
    return Mesh(np.array(verts), np.array(uvs), fv, fv.copy())


@dataclass(frozen=True)
class ViewSpec:
    camera_distance: float = 3.5
    yaw_range: tuple = (-math.radians(30), math.radians(30))
    pitch_range: tuple = (-math.radians(10), math.radians(10))
    fov: float = math.radians(40)
    image_size: tuple = (256, 256)  # (width, height)
    background: tuple = (0, 0, 0)
    seed: int = 0

    def __post_init__(self):
        if not self.camera_distance > 0:
            raise InvalidArgumentError("camera_distance must be positive")
        lo, hi = self.pitch_range
        if not (-math.pi / 2 < lo <= hi < math.pi / 2):
            raise InvalidArgumentError("pitch range must lie inside (-pi/2, pi/2)")
        if self.yaw_range[0] > self.yaw_range[1]:
            raise InvalidArgumentError("yaw range is reversed")
        if not 0 < self.fov < math.pi:
            raise InvalidArgumentError("fov must lie in (0, pi)")
        if min(self.image_size) < 16:
            raise InvalidArgumentError("image dimensions must be >= 16")
        if any(not 0 <= c <= 255 for c in self.background):
            raise InvalidArgumentError("background must be 8-bit RGB")


@dataclass(frozen=True, eq=False)
class RenderedImage:
    pixels: np.ndarray
    view_used: tuple
    sample_id: str = ""


def sample_view(view: ViewSpec, sample_seed: int):
    rng = np.random.default_rng(sample_seed)
    yaw = float(rng.uniform(*view.yaw_range))
    pitch = float(rng.uniform(*view.pitch_range))
    return yaw, pitch


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def project(points, target, distance, yaw, pitch, fov, width, height):
    """World points -> (screen xy, view depth) for a look-at camera."""
    eye = target + distance * np.array([math.cos(pitch) * math.sin(yaw), math.sin(pitch),
                                        math.cos(pitch) * math.cos(yaw)])
    forward = target - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    rel = points - eye
    depth = rel @ forward
    focal = 1.0 / math.tan(fov / 2)
    aspect = width / height
    with np.errstate(divide="ignore", invalid="ignore"):
        x_ndc = (rel @ right) * focal / (depth * aspect)
        y_ndc = (rel @ up) * focal / depth
    screen = np.stack([(x_ndc + 1) * 0.5 * width, (1 - y_ndc) * 0.5 * height], axis=1)
    return screen, depth


def rasterize(screen_tris, depth_tris, uv_tris, width, height):
    """Z-buffered coverage of screen-space triangles.

    ``screen_tris`` (N, 3, 2), ``depth_tris`` (N, 3) positive view depths,
    ``uv_tris`` (N, 3, 2).  Returns ``(covered, u, v, tri_id)`` buffers.

    All (triangle, pixel) candidates inside each triangle's bounding box are
    evaluated at once; per pixel the largest ``1/depth`` wins and exact ties go
    to the lowest triangle index, which is what a sequential strict-greater
    depth test would produce.
    """
    P = np.asarray(screen_tris, dtype=np.float64)
    D = np.asarray(depth_tris, dtype=np.float64)
    UV = np.asarray(uv_tris, dtype=np.float64)
    ubuf = np.zeros((height, width))
    vbuf = np.zeros((height, width))
    tri_id = np.full((height, width), -1, dtype=np.int64)
    if P.shape[0] == 0:
        return tri_id >= 0, ubuf, vbuf, tri_id

    with np.errstate(invalid="ignore"):
        area = ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
                - (P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0]))
    ok = np.isfinite(P).all(axis=(1, 2)) & (D > 1e-6).all(axis=1) & (area != 0)
    # wind every triangle counter-clockwise in screen space
    flip = area < 0
    order = np.where(flip[:, None], [0, 2, 1], [0, 1, 2])
    P = np.take_along_axis(P, order[:, :, None], axis=1)
    D = np.take_along_axis(D, order, axis=1)
    UV = np.take_along_axis(UV, order[:, :, None], axis=1)
    area = np.abs(area)

    with np.errstate(invalid="ignore"):
        c0 = np.maximum(np.floor(P[:, :, 0].min(axis=1) - 0.5), 0)
        c1 = np.minimum(np.ceil(P[:, :, 0].max(axis=1) - 0.5), width - 1)
        r0 = np.maximum(np.floor(P[:, :, 1].min(axis=1) - 0.5), 0)
        r1 = np.minimum(np.ceil(P[:, :, 1].max(axis=1) - 0.5), height - 1)
    ok &= (c1 >= c0) & (r1 >= r0)
    tris = np.nonzero(ok)[0]
    if tris.size == 0:
        return tri_id >= 0, ubuf, vbuf, tri_id
    c0, r0 = c0[tris].astype(np.int64), r0[tris].astype(np.int64)
    nx = c1[tris].astype(np.int64) - c0 + 1
    ny = r1[tris].astype(np.int64) - r0 + 1
    counts = nx * ny
    t = np.repeat(np.arange(tris.size), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = c0[t] + local % nx[t]
    rows = r0[t] + local // nx[t]
    px, py = cols + 0.5, rows + 0.5

    Pt, Dt, At = P[tris], D[tris], area[tris]
    inside = np.ones(t.shape, dtype=bool)
    weights = []
    for k in range(3):
        a, b = Pt[:, (k + 1) % 3], Pt[:, (k + 2) % 3]
        dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
        e = dx[t] * (py - a[t, 1]) - dy[t] * (px - a[t, 0])
        gx, gy = -dy, dx
        top_left = (gx > 0) | ((gx == 0) & (gy > 0))
        inside &= (e > 0) | ((e == 0) & top_left[t])
        weights.append(e / At[t])
    t, rows, cols = t[inside], rows[inside], cols[inside]
    if t.size == 0:
        return tri_id >= 0, ubuf, vbuf, tri_id
    b0, b1, b2 = (w[inside] for w in weights)
    iz = b0 / Dt[t, 0] + b1 / Dt[t, 1] + b2 / Dt[t, 2]

    pix = rows * width + cols
    rank = np.lexsort((t, -iz, pix))
    first = np.ones(rank.size, dtype=bool)
    first[1:] = pix[rank[1:]] != pix[rank[:-1]]
    win = rank[first]
    t, rows, cols, iz = t[win], rows[win], cols[win], iz[win]
    l0 = b0[win] / Dt[t, 0] / iz
    l1 = b1[win] / Dt[t, 1] / iz
    l2 = b2[win] / Dt[t, 2] / iz
    uvt = UV[tris[t]]
    ubuf[rows, cols] = l0 * uvt[:, 0, 0] + l1 * uvt[:, 1, 0] + l2 * uvt[:, 2, 0]
    vbuf[rows, cols] = l0 * uvt[:, 0, 1] + l1 * uvt[:, 1, 1] + l2 * uvt[:, 2, 1]
    tri_id[rows, cols] = tris[t]
    return tri_id >= 0, ubuf, vbuf, tri_id


def sample_bilinear(pixels: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = pixels.shape[:2]
    x = u * w - 0.5
    y = (1.0 - v) * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    xa = np.clip(x0.astype(np.int64), 0, w - 1)
    xb = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    ya = np.clip(y0.astype(np.int64), 0, h - 1)
    yb = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    px = pixels.astype(np.float64)
    top = px[ya, xa] * (1 - fx) + px[ya, xb] * fx
    bottom = px[yb, xa] * (1 - fx) + px[yb, xb] * fx
    return top * (1 - fy) + bottom * fy


def render_view(mesh: Mesh, tex: Texture, view: ViewSpec, yaw: float, pitch: float) -> np.ndarray:
    if mesh.surface_area() == 0:
        raise InvalidArgumentError("mesh has zero total surface area")
    width, height = view.image_size
    screen, depth = project(mesh.vertices, mesh.centroid(), view.camera_distance, yaw, pitch,
                            view.fov, width, height)
    covered, u, v, _ = rasterize(screen[mesh.tri_vertices], depth[mesh.tri_vertices],
                                 mesh.uvs[mesh.tri_uvs], width, height)
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:] = np.asarray(view.background, dtype=np.uint8)
    if covered.any():
        colour = sample_bilinear(tex.pixels, u[covered], v[covered])
        out[covered] = np.clip(np.rint(colour), 0, 255).astype(np.uint8)
    return out


def render(mesh: Mesh, tex: Texture, view: ViewSpec, sample_seed: int, sample_id: str = "") -> RenderedImage:
    yaw, pitch = sample_view(view, sample_seed)
    return RenderedImage(render_view(mesh, tex, view, yaw, pitch), (yaw, pitch), sample_id)


def render_corpus(mesh: Mesh, textures, view: ViewSpec, sample_ids=None) -> list:
    if len(textures) == 0:
        raise InvalidArgumentError("no textures to render")
    ids = sample_ids or [f"r{i:06d}" for i in range(len(textures))]
    return [render(mesh, tex, view, derive_seed(view.seed, i), ids[i]) for i, tex in enumerate(textures)]


def _rendered_features(mesh, textures, view, extractor):
    if len(textures) < 2:
        raise InvalidArgumentError("each corpus needs at least two textures")
    extractor = extractor or PixelStatExtractor()
    images = [Texture(r.pixels) for r in render_corpus(mesh, textures, view)]
    return extractor.transform(images)


def three_d_fid(mesh, textures_a, textures_b, view: ViewSpec, extractor=None):
    fa = _rendered_features(mesh, textures_a, view, extractor)
    fb = _rendered_features(mesh, textures_b, view, extractor)
    result = fid(corpus_stats(fa), corpus_stats(fb))
    result.name = "3d_fid"
    return result


def three_d_kid(mesh, textures_a, textures_b, view: ViewSpec, extractor=None, blocks=1, seed=0):
    fa = _rendered_features(mesh, textures_a, view, extractor)
    fb = _rendered_features(mesh, textures_b, view, extractor)
    result = kid(fa, fb, blocks, seed)
    result.name = "3d_kid"
    return result
