"""On-disk formats: LVEC latents, FEMB embedding caches, direction JSON, PNG
textures and JSON-lines helpers.

All writers are byte-deterministic: JSON is emitted with sorted keys and a
fixed separator set, and PNGs carry no timestamps.
"""

import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import InvalidArgumentError, LookupMissError, ParseError
from .latent import AttributeDirection, LatentVec, Space

LVEC_MAGIC = b"LVEC"
FEMB_MAGIC = b"FEMB"
FORMAT_VERSION = 1
_LVEC_HEADER = struct.Struct("<4sIIB")
_FEMB_HEADER = struct.Struct("<4sIII")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    _atomic_write(path, dumps_json(obj).encode("utf-8"))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path, records):
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    _atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc.msg}", lineno) from exc
    return records


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# -- LVEC -------------------------------------------------------------------

def encode_lvec(vec: LatentVec) -> bytes:
    body = np.asarray(vec.values, dtype="<f4").tobytes()
    return _LVEC_HEADER.pack(LVEC_MAGIC, FORMAT_VERSION, vec.dim, int(vec.space_tag)) + body


def decode_lvec(data: bytes) -> LatentVec:
    if len(data) < _LVEC_HEADER.size:
        raise ParseError("truncated LVEC header")
    magic, version, dim, tag = _LVEC_HEADER.unpack_from(data)
    if magic != LVEC_MAGIC:
        raise ParseError(f"bad LVEC magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported LVEC version {version}")
    if tag not in (0, 1):
        raise ParseError(f"bad LVEC space tag {tag}")
    expected = _LVEC_HEADER.size + 4 * dim
    if len(data) != expected:
        raise ParseError(f"LVEC payload is {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f4", count=dim, offset=_LVEC_HEADER.size)
    return LatentVec(values.astype(np.float64), Space(tag))


def write_lvec(path, vec: LatentVec):
    _atomic_write(path, encode_lvec(vec))


def read_lvec(path) -> LatentVec:
    return decode_lvec(Path(path).read_bytes())


# -- FEMB -------------------------------------------------------------------

def encode_femb(features: np.ndarray, sample_ids) -> bytes:
    features = np.asarray(features, dtype="<f4")
    if features.ndim != 2:
        raise InvalidArgumentError("features must be 2-D")
    count, dim = features.shape
    if len(sample_ids) != count:
        raise InvalidArgumentError("one sample_id per feature row is required")
    trailer = json.dumps({str(i): sid for i, sid in enumerate(sample_ids)}, sort_keys=False, separators=(",", ":"))
    return _FEMB_HEADER.pack(FEMB_MAGIC, FORMAT_VERSION, count, dim) + features.tobytes() + trailer.encode("utf-8")


def decode_femb(data: bytes):
    """Returns ``(features, sample_ids)`` with features as float64 (count, dim)."""
    if len(data) < _FEMB_HEADER.size:
        raise ParseError("truncated FEMB header")
    magic, version, count, dim = _FEMB_HEADER.unpack_from(data)
    if magic != FEMB_MAGIC:
        raise ParseError(f"bad FEMB magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported FEMB version {version}")
    end = _FEMB_HEADER.size + 4 * count * dim
    if len(data) < end:
        raise ParseError("truncated FEMB body")
    feats = np.frombuffer(data, dtype="<f4", count=count * dim, offset=_FEMB_HEADER.size)
    try:
        mapping = json.loads(data[end:].decode("utf-8")) if len(data) > end else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad FEMB trailer: {exc}") from exc
    ids = [mapping.get(str(i), f"row{i}") for i in range(count)]
    return feats.reshape(count, dim).astype(np.float64), ids


def write_femb(path, features, sample_ids):
    _atomic_write(path, encode_femb(features, sample_ids))


def read_femb(path):
    return decode_femb(Path(path).read_bytes())


# -- attribute directions ---------------------------------------------------

def direction_to_dict(d: AttributeDirection) -> dict:
    return {
        "attribute_name": d.attribute_name,
        "dim": d.dim,
        "normal": [float(x) for x in d.normal],
        "bias": d.bias,
        "train_meta": {
            "n_samples": int(d.train_meta.get("n_samples", 0)),
            "accuracy": float(d.train_meta.get("accuracy", 0.0)),
        },
    }


def direction_from_dict(obj: dict) -> AttributeDirection:
    try:
        normal = np.asarray(obj["normal"], dtype=np.float64)
        if int(obj["dim"]) != normal.shape[0]:
            raise ParseError(f"direction dim {obj['dim']} does not match normal length {normal.shape[0]}")
        meta = obj.get("train_meta", {})
        return AttributeDirection(
            normal=normal,
            bias=float(obj["bias"]),
            attribute_name=str(obj["attribute_name"]),
            train_meta={"n_samples": int(meta.get("n_samples", 0)), "accuracy": float(meta.get("accuracy", 0.0))},
        )
    except KeyError as exc:
        raise ParseError(f"direction file missing field {exc}") from exc


def write_direction(path, d: AttributeDirection):
    write_json(path, direction_to_dict(d))


def read_direction(path) -> AttributeDirection:
    return direction_from_dict(read_json(path))


# -- textures ---------------------------------------------------------------

def write_png(path, pixels: np.ndarray):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidArgumentError("PNG writer expects an HxWx3 uint8 array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        Image.fromarray(pixels).save(fh, format="PNG", optimize=False, compress_level=6)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_png(path) -> np.ndarray:
    if not Path(path).exists():
        raise LookupMissError(f"texture file not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
