"""Detection-dataset mixing manifests and mAP@50 evaluation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CapacityError, InvalidArgumentError, ParseError
from .metrics import MetricResult


class DetClass(str, enum.Enum):
    Pedestrian = "Pedestrian"
    Car = "Car"


class Source(str, enum.Enum):
    Synthetic = "Synthetic"
    KITTI = "KITTI"
    BDD100K = "BDD100K"
    A2D2 = "A2D2"


SOURCE_ORDER = list(Source)


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float
    class_id: DetClass = DetClass.Pedestrian
    confidence: float | None = None

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidArgumentError(f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")
        object.__setattr__(self, "class_id", DetClass(self.class_id))
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _match(dets_by_frame, gts_by_frame, cls, iou_thresh):
    """Greedy matching of one class over all frames.

    Returns ``(tp_flags, n_gt)`` in ranked order: descending confidence, ties
    broken by frame order and then by position within the frame.
    """
    ranked = []
    for f_idx, (frame, dets) in enumerate(dets_by_frame.items()):
        for d_idx, d in enumerate(dets):
            if d.class_id == cls:
                ranked.append((-(d.confidence or 0.0), f_idx, d_idx, frame, d))
    ranked.sort(key=lambda r: r[:3])
    gts = {frame: [g for g in boxes if g.class_id == cls] for frame, boxes in gts_by_frame.items()}
    used = {frame: [False] * len(boxes) for frame, boxes in gts.items()}
    n_gt = sum(len(v) for v in gts.values())
    flags = []
    for *_, frame, det in ranked:
        best, best_iou = -1, iou_thresh
        for g_idx, gt in enumerate(gts.get(frame, [])):
            if used[frame][g_idx]:
                continue
            overlap = iou(det, gt)
            if overlap >= best_iou and (best < 0 or overlap > best_iou):
                best, best_iou = g_idx, overlap
        if best >= 0:
            used[frame][best] = True
        flags.append(best >= 0)
    return flags, n_gt


def ap_from_flags(flags, n_gt) -> float:
    """All-points interpolated AP: area under the monotone precision envelope."""
    if n_gt == 0:
        return 0.0 if flags else math.nan
    if not flags:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum(np.logical_not(flags), dtype=np.float64)
    recall = np.concatenate([[0.0], tp / n_gt, [1.0]])
    precision = np.concatenate([[0.0], tp / (tp + fp), [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.nonzero(recall[1:] != recall[:-1])[0]
    return float(((recall[steps + 1] - recall[steps]) * precision[steps + 1]).sum())


def average_precision(dets, gts, iou_thresh: float = 0.5, cls=None) -> float:
    """AP for one class on a single image's boxes.

    Empty ground truth with any detection gives 0; empty on both sides gives
    NaN, which :func:`map_at_50` excludes from the mean.
    """
    if not 0 < iou_thresh < 1:
        raise InvalidArgumentError("iou_thresh must lie in (0, 1)")
    if cls is None:
        classes = {b.class_id for b in list(dets) + list(gts)}
        cls = classes.pop() if len(classes) == 1 else DetClass.Pedestrian
    flags, n_gt = _match({"_": list(dets)}, {"_": list(gts)}, DetClass(cls), iou_thresh)
    return ap_from_flags(flags, n_gt)


def map_at_50(dets_by_frame: dict, gts_by_frame: dict, classes=tuple(DetClass),
              iou_thresh: float = 0.5) -> MetricResult:
    frames = set(dets_by_frame) | set(gts_by_frame)
    dets = {f: dets_by_frame.get(f, []) for f in sorted(frames, key=str)}
    gts = {f: gts_by_frame.get(f, []) for f in sorted(frames, key=str)}
    per_class = {}
    for cls in classes:
        cls = DetClass(cls)
        flags, n_gt = _match(dets, gts, cls, iou_thresh)
        per_class[cls.value] = {"ap": ap_from_flags(flags, n_gt), "n_gt": n_gt, "n_det": len(flags)}
    if not any(v["n_gt"] for v in per_class.values()):
        raise InvalidArgumentError("no ground-truth boxes for any evaluated class")
    defined = [v["ap"] for v in per_class.values() if not math.isnan(v["ap"])]
    meta = {"iou": iou_thresh, "per_class": {k: {**v, "ap": None if math.isnan(v["ap"]) else v["ap"]}
                                              for k, v in per_class.items()}}
    return MetricResult(f"map@{int(round(iou_thresh * 100))}", float(np.mean(defined)), 0.0, meta)


# -- box file formats -------------------------------------------------------

def boxes_from_jsonl(records) -> dict:
    out = {}
    for rec in records:
        box = BoundingBox(rec["x0"], rec["y0"], rec["x1"], rec["y1"], DetClass(rec["class"]), rec.get("confidence"))
        out.setdefault(str(rec["frame_id"]), []).append(box)
    return out


def boxes_to_jsonl(boxes_by_frame: dict) -> list:
    recs = []
    for frame, boxes in boxes_by_frame.items():
        for b in boxes:
            r = {"frame_id": frame, "class": b.class_id.value, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1}
            if b.confidence is not None:
                r["confidence"] = b.confidence
            recs.append(r)
    return recs


def parse_kitti_label(text: str, frame_id: str, classes=tuple(DetClass)) -> list:
    """KITTI object labels: type, truncated, occluded, alpha, bbox(4), dims(3),
    location(3), rotation_y and an optional trailing score.  Rows whose type
    is not an evaluated class are ignored."""
    wanted = {DetClass(c).value for c in classes}
    boxes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (15, 16):
            raise ParseError(f"{frame_id}: KITTI label row has {len(parts)} fields", lineno)
        if parts[0] not in wanted:
            continue
        try:
            x0, y0, x1, y1 = (float(v) for v in parts[4:8])
            score = float(parts[15]) if len(parts) == 16 else None
        except ValueError:
            raise ParseError(f"{frame_id}: non-numeric KITTI field", lineno) from None
        boxes.append(BoundingBox(x0, y0, x1, y1, DetClass(parts[0]), score))
    return boxes


def load_kitti_dir(path, classes=tuple(DetClass)) -> dict:
    return {p.stem: parse_kitti_label(p.read_text(), p.stem, classes) for p in sorted(Path(path).glob("*.txt"))}


# -- dataset mixing ---------------------------------------------------------

@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)  # {frame_id, source, uri}

    def __post_init__(self):
        ids = [e["frame_id"] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("frame ids in a manifest must be unique")
        for e in self.entries:
            e["source"] = Source(e["source"]).value

    @property
    def composition(self) -> dict:
        counts = {}
        for e in self.entries:
            counts[e["source"]] = counts.get(e["source"], 0) + 1
        return {s.value: counts[s.value] for s in SOURCE_ORDER if s.value in counts}

    def to_records(self):
        return [{"frame_id": e["frame_id"], "source": e["source"], "uri": e["uri"]} for e in self.entries]


@dataclass(frozen=True)
class MixSpec:
    counts: dict
    seed: int = 0

    def __post_init__(self):
        counts = {Source(k).value: int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in counts.values()):
            raise InvalidArgumentError("requested counts must be non-negative")
        object.__setattr__(self, "counts", counts)


# Training compositions of the 2D and 3D detector experiments (frames per source).
PRESET_MIXES = {
    "2d_model_1": {"Synthetic": 6000},
    "2d_model_2": {"KITTI": 6000},
    "2d_model_3": {"Synthetic": 2000, "KITTI": 6000},
    "2d_model_3+": {"Synthetic": 4000, "KITTI": 6000},
    "2d_model_3++": {"Synthetic": 6000, "KITTI": 6000},
    "2d_model_4": {"BDD100K": 6000},
    "2d_model_4++": {"Synthetic": 6000, "BDD100K": 6000},
    "3d_model_1": {"Synthetic": 4000},
    "3d_model_2": {"KITTI": 4000},
    "3d_model_3": {"Synthetic": 2000, "KITTI": 4000},
    "3d_model_3+": {"Synthetic": 4000, "KITTI": 4000},
    "3d_model_4": {"A2D2": 4000},
    "3d_model_4+": {"Synthetic": 4000, "A2D2": 4000},
}


def build_mix(sources: dict, spec: MixSpec) -> DatasetManifest:
    """Seeded sampling without replacement from each source, concatenated in
    the fixed source order; sampled entries keep their original order."""
    sources = {Source(k).value: v for k, v in sources.items()}
    entries = []
    for idx, src in enumerate(SOURCE_ORDER):
        want = spec.counts.get(src.value, 0)
        if want == 0:
            continue
        pool = sources.get(src.value)
        available = len(pool.entries) if pool is not None else 0
        if want > available:
            raise CapacityError(f"source {src.value} has {available} frames, {want} requested", source=src.value)
        rng = np.random.default_rng([spec.seed, idx])
        picked = np.sort(rng.choice(available, size=want, replace=False))
        entries.extend({**pool.entries[i], "source": src.value} for i in picked)
    return DatasetManifest(entries)
