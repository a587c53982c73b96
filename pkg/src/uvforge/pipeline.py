"""End-to-end orchestration: generate, edit, validate, score and assemble.

Every stage reads and writes plain files (PNG, LVEC, FEMB, JSON, JSON-lines)
so that any later stage can be re-run on its own.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .direction import batch_signed_distances
from .exceptions import ConfigError, InvalidArgumentError
from .generator import SampleRecord, Texture, generator_from_config
from .io import (dumps_json, read_direction, read_femb, read_json, read_jsonl, read_lvec, read_png, write_femb,
                 write_json, write_jsonl, write_lvec, write_png)
from .latent import (LatentVec, Space, StepPolicy, TruncationConfig, adaptive_step, estimate_w_mean, manipulate,
                     truncate)
from .metrics import MetricResult, PixelStatExtractor, corpus_stats, fid, kid, precision_recall
from .qa import (DEFAULT_FACE_REGIONS, DEFAULT_NECK, ExternalScorer, MahalanobisScorer, QaConfig, QaReport,
                 QaThresholds, RegionMask, TintClassifier, synthetic_tint_curation, validate_texture)

log = logging.getLogger(__name__)


# -- instance manifests -----------------------------------------------------

@dataclass
class InstanceManifest:
    base_model_id: str
    instances: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)

    def __post_init__(self):
        ids = [i["instance_id"] for i in self.instances]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("instance ids must be unique")

    def to_dict(self):
        return {"base_model_id": self.base_model_id, "n_instances": len(self.instances),
                "n_excluded": len(self.exclusions), "instances": self.instances, "exclusions": self.exclusions}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["base_model_id"], list(obj["instances"]), list(obj.get("exclusions", [])))


def _failed_stage(report: QaReport):
    return next((s.stage_name for s in report.stages if not s.skipped and not s.passed), None)


def assemble_instances(base_model_id: str, textures, edits=None, qa_ref: str = "qa.jsonl") -> InstanceManifest:
    """Bind every texture whose QA report passed to one base asset.

    ``textures`` is a sequence of ``(texture_path, QaReport)``; ``edits`` may map
    a sample id to its list of ``(attribute, alpha_eff)`` pairs.
    """
    if not base_model_id:
        raise InvalidArgumentError("base_model_id must be non-empty")
    edits = edits or {}
    seen = set()
    instances, exclusions = [], []
    for path, report in textures:
        path = str(path)
        if path in seen:
            raise InvalidArgumentError(f"texture {path!r} listed twice")
        seen.add(path)
        if report is None:
            raise InvalidArgumentError(f"texture {path!r} has no QA report")
        if not report.overall_pass:
            exclusions.append({"texture_path": path, "sample_id": report.sample_id,
                               "failed_stage": _failed_stage(report)})
            continue
        instances.append({
            "instance_id": f"{base_model_id}/{report.sample_id or Path(path).stem}",
            "texture_path": path,
            "qa_report_ref": f"{qa_ref}#{report.sample_id}",
            "attribute_edits": [[a, float(s)] for a, s in edits.get(report.sample_id, [])],
        })
    return InstanceManifest(base_model_id, instances, exclusions)


# -- corpus directories -----------------------------------------------------

CORPUS_MANIFEST = "corpus.jsonl"


def write_corpus(out_dir, records, generator_config=None):
    """Write textures, latents and a corpus manifest readable by the Corpus generator."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in records:
        tex_rel = f"textures/{rec.sample_id}.png"
        write_png(out / tex_rel, rec.texture.pixels)
        row = {"sample_id": rec.sample_id, "texture_path": tex_rel}
        if rec.z is not None:
            row["z_path"] = f"latents/{rec.sample_id}.z.lvec"
            write_lvec(out / row["z_path"], rec.z)
        if rec.w is not None:
            row["w_path"] = f"latents/{rec.sample_id}.w.lvec"
            write_lvec(out / row["w_path"], rec.w)
        rows.append(row)
    write_jsonl(out / CORPUS_MANIFEST, rows)
    if generator_config is not None:
        write_json(out / "generator.json", generator_config)
    return rows


def read_corpus(in_dir, with_textures=True) -> list:
    """Records of a corpus directory.  A plain directory of PNGs is accepted too."""
    base = Path(in_dir)
    manifest = base / CORPUS_MANIFEST
    if not manifest.exists():
        pngs = sorted(base.glob("*.png")) or sorted((base / "textures").glob("*.png"))
        if not pngs:
            raise InvalidArgumentError(f"{base} holds neither {CORPUS_MANIFEST} nor PNG textures")
        return [SampleRecord(None, None, Texture(read_png(p)) if with_textures else None, p.stem) for p in pngs]
    out = []
    for row in read_jsonl(manifest):
        z = read_lvec(base / row["z_path"]) if row.get("z_path") else None
        w = read_lvec(base / row["w_path"]) if row.get("w_path") else None
        tex = Texture(read_png(base / row["texture_path"])) if with_textures else None
        out.append(SampleRecord(z, w, tex, row["sample_id"]))
    return out


def texture_paths(in_dir) -> dict:
    base = Path(in_dir)
    manifest = base / CORPUS_MANIFEST
    if manifest.exists():
        return {r["sample_id"]: r["texture_path"] for r in read_jsonl(manifest)}
    pngs = sorted(base.glob("*.png")) or sorted((base / "textures").glob("*.png"))
    return {p.stem: str(p.relative_to(base)) for p in pngs}


# -- edits ------------------------------------------------------------------

@dataclass(frozen=True)
class EditSpec:
    direction: object
    policy: StepPolicy = StepPolicy()


def apply_edits(W: np.ndarray, edits, truncation: TruncationConfig):
    """Apply each edit in turn with its boundary-aware step, then truncate once.

    Returns the edited rows and, per row, the list of ``(attribute, alpha_eff)``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    steps = [[] for _ in range(W.shape[0])]
    for spec in edits:
        dists = batch_signed_distances([LatentVec(r, Space.W) for r in W], spec.direction)
        alphas = np.array([adaptive_step(s, spec.policy) for s in dists])
        for i, a in enumerate(alphas):
            steps[i].append((spec.direction.attribute_name, float(a)))
        W = np.stack([manipulate(LatentVec(r, Space.W), spec.direction, a).values for r, a in zip(W, alphas)])
    if truncation is not None:
        W = np.stack([truncate(LatentVec(r, Space.W), truncation).values for r in W])
    return W, steps


# -- configuration ----------------------------------------------------------

def _resolve(base: Path, value, what):
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return section[key]


def thresholds_from_config(obj: dict | None) -> QaThresholds:
    obj = dict(obj or {})
    # null means "no limit"
    vals = {k: (math.inf if v is None else float(v)) for k, v in obj.items()}
    try:
        return QaThresholds(**vals)
    except TypeError as exc:
        raise ConfigError(f"qa.thresholds: {exc}") from None


def qa_config_from_dict(section: dict | None, base_dir, generator=None) -> QaConfig:
    """Build a QA configuration from its JSON section.

    ``tint`` and ``anomaly`` need reference data: either files, or a seeded
    sample drawn from ``generator``.
    """
    section = section or {}
    base = Path(base_dir)
    regions = (tuple(RegionMask(r["name"], tuple(r["rect"])) for r in section["regions"])
               if "regions" in section else DEFAULT_FACE_REGIONS)
    neck = RegionMask("neck", tuple(section["neck"])) if "neck" in section else DEFAULT_NECK
    thresholds = thresholds_from_config(section.get("thresholds"))

    tint_model = None
    tint = section.get("tint")
    if tint is not None:
        tint_model = TintClassifier(k=int(tint.get("k", 5)), regions=regions)
        if "curation" in tint:
            rows = read_jsonl(_resolve(base, tint["curation"], "tint curation"))
            cur_base = _resolve(base, tint["curation"], "tint curation").parent
            texs = [Texture(read_png(cur_base / r["texture_path"])) for r in rows]
            tint_model.fit_textures(texs, [r["label"] for r in rows])
        else:
            syn = _require(tint, "synthetic", "qa.tint")
            if generator is None:
                raise ConfigError("qa.tint.synthetic needs a generator")
            syn_seed = int(_require(syn, "seed", "qa.tint.synthetic"))
            clean = [r.texture for r in generator.sample_batch(int(syn.get("n", 80)), syn_seed)]
            texs, labels = synthetic_tint_curation(clean, float(syn.get("shift", 40.0)))
            tint_model.fit_textures(texs, labels)

    scorer = None
    anomaly = section.get("anomaly")
    if anomaly is not None:
        if "scores" in anomaly:
            scorer = ExternalScorer.from_jsonl(_resolve(base, anomaly["scores"], "anomaly scores"))
        else:
            ref = _require(anomaly, "mahalanobis", "qa.anomaly")
            if generator is None:
                raise ConfigError("qa.anomaly.mahalanobis needs a generator")
            texs = [r.texture for r in generator.sample_batch(int(ref.get("n_reference", 200)),
                                                              int(_require(ref, "seed", "qa.anomaly.mahalanobis")))]
            scorer = MahalanobisScorer(shrinkage=float(ref.get("shrinkage", 0.01))).fit_textures(texs)

    return QaConfig(tint_model, regions, neck, thresholds, scorer, bool(section.get("short_circuit", True)))


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    digest: str

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = path.read_bytes()
        try:
            raw = json.loads(data)
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        cfg = cls(raw, path.resolve().parent, hashlib.sha256(data).hexdigest())
        cfg.check()
        return cfg

    @classmethod
    def from_dict(cls, raw: dict, base_dir="."):
        cfg = cls(raw, Path(base_dir).resolve(), hashlib.sha256(dumps_json(raw).encode()).hexdigest())
        cfg.check()
        return cfg

    def check(self):
        raw = self.raw
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("seed", "generator", "output_dir"):
            _require(raw, key, "config")
        wm = raw.get("w_mean", {})
        if "path" in wm:
            _resolve(self.base_dir, wm["path"], "w_mean")
        elif raw.get("edits") or raw.get("truncation_psi", 1.0) != 1.0:
            _require(wm, "seed", "w_mean")
        for e in raw.get("edits", []):
            _resolve(self.base_dir, _require(e, "direction", "edits[]"), "direction")
        metrics = raw.get("metrics")
        if metrics:
            if not metrics.get("reference"):
                raise ConfigError("metrics requested but no reference embedding file given")
            _resolve(self.base_dir, metrics["reference"], "metrics reference")
        if "render" in raw:
            _require(raw["render"], "seed", "render")
        qa = raw.get("qa", {})
        if "tint" in qa and "synthetic" in qa["tint"]:
            _require(qa["tint"]["synthetic"], "seed", "qa.tint.synthetic")
        if "anomaly" in qa and "mahalanobis" in qa["anomaly"]:
            _require(qa["anomaly"]["mahalanobis"], "seed", "qa.anomaly.mahalanobis")

    @property
    def output_dir(self) -> Path:
        out = Path(self.raw["output_dir"])
        return out if out.is_absolute() else self.base_dir / out


# -- run --------------------------------------------------------------------

@dataclass
class PipelineResult:
    manifest: InstanceManifest
    qa_summary: dict
    metrics: list
    status: str


def _metric_results(section, base_dir, textures):
    ref_feats, _ = read_femb(_resolve(base_dir, section["reference"], "metrics reference"))
    fake = PixelStatExtractor().transform(textures) if textures else np.empty((0, ref_feats.shape[1]))
    if fake.shape[1] != ref_feats.shape[1]:
        raise ConfigError(f"reference embedding has dim {ref_feats.shape[1]}, extractor gives {fake.shape[1]}")
    results = []
    if len(fake) < 2:
        log.warning("fewer than two passing textures; corpus metrics skipped")
        return results
    if section.get("fid", True):
        results.append(fid(corpus_stats(ref_feats), corpus_stats(fake)))
    if section.get("kid", False):
        results.append(kid(ref_feats, fake, int(section.get("blocks", 1)), int(section.get("seed", 0))))
    if section.get("pr", False):
        pr = precision_recall(ref_feats, fake, int(section.get("k", 3)))
        results.append(MetricResult("precision", pr["precision"], 0.0, {"k": int(section.get("k", 3))}))
        results.append(MetricResult("recall", pr["recall"], 0.0, {"k": int(section.get("k", 3))}))
    return results


def run_pipeline(cfg: PipelineConfig, n: int | None = None) -> PipelineResult:
    """Generate ``n`` candidates, edit, validate, keep passers and write all reports.

    Outputs under ``cfg.output_dir``: ``w_mean.lvec``, ``candidates/`` (a corpus
    directory of edited textures), ``qa.jsonl``, ``manifest.json``,
    ``metrics.json`` (when configured), optional ``renders/`` and ``summary.json``.
    """
    raw = cfg.raw
    n = int(raw.get("n", 0) if n is None else n)
    if n < 0:
        raise InvalidArgumentError("n must be >= 0")
    seed = int(raw["seed"])
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    generator = generator_from_config(raw["generator"], cfg.base_dir)

    # edits and truncation
    edits = []
    for e in raw.get("edits", []):
        d = read_direction(_resolve(cfg.base_dir, e["direction"], "direction"))
        if "attribute" in e and e["attribute"] != d.attribute_name:
            raise ConfigError(f"direction file holds {d.attribute_name!r}, config names {e['attribute']!r}")
        edits.append(EditSpec(d, StepPolicy(float(e.get("alpha_max", 3.0)), float(e.get("s_floor", -3.0)),
                                            float(e.get("s_cap", 1.0)))))
    psi = float(raw.get("truncation_psi", 1.0))
    truncation = None
    if edits or psi != 1.0:
        wm = raw.get("w_mean", {})
        if "path" in wm:
            w_mean = read_lvec(_resolve(cfg.base_dir, wm["path"], "w_mean"))
        else:
            w_mean = estimate_w_mean(generator, int(wm.get("n", 1000)), int(wm["seed"]))
        write_lvec(out / "w_mean.lvec", w_mean)
        truncation = TruncationConfig(psi, w_mean)

    records = generator.sample_latent_records(n, seed)
    steps = [[] for _ in records]
    if records and (edits or truncation is not None):
        W, steps = apply_edits(np.stack([r.w.values for r in records]), edits, truncation)
        records = [SampleRecord(r.z, LatentVec(w, Space.W), None, r.sample_id) for r, w in zip(records, W)]
    records = [SampleRecord(r.z, r.w, generator.synthesize(r.w), r.sample_id) for r in records]
    rows = write_corpus(out / "candidates", records, getattr(generator, "config", lambda: None)())

    # validation
    qa_cfg = qa_config_from_dict(raw.get("qa"), cfg.base_dir, generator)
    reports = [validate_texture(r.texture, qa_cfg, r.sample_id) for r in records]
    write_jsonl(out / "qa.jsonl", [rep.to_dict() for rep in reports])

    manifest = assemble_instances(
        str(raw.get("base_model_id", "base-pedestrian")),
        [(f"candidates/{row['texture_path']}", rep) for row, rep in zip(rows, reports)],
        {r.sample_id: s for r, s in zip(records, steps)},
    )
    write_json(out / "manifest.json", manifest.to_dict())

    passed = [r for r, rep in zip(records, reports) if rep.overall_pass]
    pass_rate = len(passed) / n if n else None

    metrics = []
    if raw.get("metrics"):
        metrics = _metric_results(raw["metrics"], cfg.base_dir, [r.texture for r in passed])
        write_json(out / "metrics.json", [m.to_dict() for m in metrics])

    if "render" in raw and passed:
        _render_stage(raw["render"], cfg.base_dir, passed, out / "renders")

    status = "ok" if passed else "empty"
    if not passed:
        log.warning("no candidate passed QA; manifest is empty")
    summary = {"config_sha256": cfg.digest, "n": n, "n_passed": len(passed), "pass_rate": pass_rate,
               "status": status, "metrics": [m.name for m in metrics]}
    write_json(out / "summary.json", summary)
    return PipelineResult(manifest, {"pass_rate": pass_rate, "n": n, "n_passed": len(passed)}, metrics, status)


def view_from_config(section: dict):
    from .render import ViewSpec

    kw = {"seed": int(section.get("seed", 0))}
    if "camera_distance" in section:
        kw["camera_distance"] = float(section["camera_distance"])
    for key in ("yaw_range", "pitch_range"):
        if key in section:
            kw[key] = tuple(math.radians(v) for v in section[key])
    if "fov" in section:
        kw["fov"] = math.radians(section["fov"])
    if "image_size" in section:
        kw["image_size"] = tuple(int(v) for v in section["image_size"])
    if "background" in section:
        kw["background"] = tuple(int(v) for v in section["background"])
    return ViewSpec(**kw)


def _render_stage(section, base_dir, records, out_dir):
    from .render import head_mesh, load_mesh, render_corpus

    mesh = load_mesh(_resolve(Path(base_dir), section["mesh"], "mesh")) if section.get("mesh") else head_mesh()
    view = view_from_config(section)
    images = render_corpus(mesh, [r.texture for r in records], view, [r.sample_id for r in records])
    write_render_outputs(out_dir, images)


def write_render_outputs(out_dir, images):
    out_dir = Path(out_dir)
    sidecar = []
    for img in images:
        write_png(out_dir / f"{img.sample_id}.png", img.pixels)
        sidecar.append({"sample_id": img.sample_id, "yaw": math.degrees(img.view_used[0]),
                        "pitch": math.degrees(img.view_used[1])})
    write_jsonl(out_dir / "views.jsonl", sidecar)


def embed_corpus(in_dir, out_path):
    """Write a pixelstat FEMB cache for every texture of a corpus directory."""
    records = read_corpus(in_dir)
    feats = PixelStatExtractor().transform([r.texture for r in records])
    write_femb(out_path, feats, [r.sample_id for r in records])
    return feats.shape


def load_reports(path) -> dict:
    return {rep.sample_id: rep for rep in (QaReport.from_dict(o) for o in read_jsonl(path))}


def read_config_section(path, key=None):
    obj = read_json(path)
    return obj.get(key, obj) if key else obj
