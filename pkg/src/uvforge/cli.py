"""``uvforge`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 capacity or infeasibility.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import (CapacityError, ConfigError, DegenerateDataError, InfeasibleError, InvalidArgumentError,
                         LookupMissError, ParseError)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CAPACITY = 0, 2, 3, 4

log = logging.getLogger("uvforge")


def fingerprint(config_path=None) -> str:
    """Package version plus the SHA-256 of the config file bytes (or ``none``)."""
    digest = "none"
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return f"uvforge {__version__} config-sha256:{digest}"


def _out(args, default=None):
    out = getattr(args, "out", None) or default
    if out is None:
        raise ConfigError("--out is required")
    return Path(out)


# -- verbs ------------------------------------------------------------------

def cmd_generate(args):
    from .generator import generator_from_config
    from .io import read_json
    from .pipeline import write_corpus

    gcfg = read_json(args.config).get("generator", read_json(args.config)) if args.config else {"kind": "Toy"}
    if args.latent_dim is not None:
        gcfg["latent_dim"] = args.latent_dim
    if args.texture_size is not None:
        gcfg["texture_size"] = [args.texture_size, args.texture_size]
    gen = generator_from_config(gcfg, Path(args.config).parent if args.config else None)
    records = gen.sample_batch(args.n, args.seed)
    write_corpus(_out(args), records, getattr(gen, "config", lambda: None)())
    print(f"wrote {len(records)} textures to {_out(args)}")


def cmd_learn_direction(args):
    from .direction import PlantedLabelProvider, SvmConfig, learn_direction_pipeline, load_labeled_set, \
        train_linear_svm
    from .generator import ToyGenerator, generator_from_config
    from .io import read_json, write_direction

    svm = SvmConfig(args.C, args.epochs, args.learning_rate, args.seed)
    if args.labels:
        data = load_labeled_set(args.labels, args.attr, args.n)
        d = train_linear_svm(data, svm)
    else:
        gcfg = read_json(args.config).get("generator", {"kind": "Toy"}) if args.config else {"kind": "Toy"}
        gen = generator_from_config(gcfg, Path(args.config).parent if args.config else None)
        if not isinstance(gen, ToyGenerator):
            raise ConfigError("planted labels need the toy generator; pass --labels otherwise")
        provider = PlantedLabelProvider(gen.attribute_axis(args.attr), 0.0, args.flip, args.seed)
        d = learn_direction_pipeline(gen, provider, args.n, args.attr, svm, args.seed)
    write_direction(_out(args), d)
    print(f"{d.attribute_name}: accuracy {d.train_meta['accuracy']:.4f} on {d.train_meta['n_samples']} samples")


def cmd_edit(args):
    from .generator import SampleRecord, generator_from_config
    from .io import read_direction, read_json, read_lvec, write_jsonl, write_lvec
    from .latent import LatentVec, Space, StepPolicy, TruncationConfig, estimate_w_mean
    from .pipeline import EditSpec, apply_edits, read_corpus, write_corpus

    src = Path(args.input)
    records = read_corpus(src, with_textures=False)
    if any(r.w is None for r in records):
        raise InvalidArgumentError("edit needs W latents in the corpus directory")
    gen_cfg_path = src / "generator.json"
    if not gen_cfg_path.exists():
        raise ConfigError(f"{gen_cfg_path} not found; the corpus does not name its generator")
    gen = generator_from_config(read_json(gen_cfg_path), src)
    policy = StepPolicy(args.alpha_max, args.s_floor, args.s_cap)
    edits = [EditSpec(read_direction(p), policy) for p in args.direction]
    w_mean = read_lvec(args.w_mean) if args.w_mean else estimate_w_mean(gen, args.w_mean_n, args.seed)
    W, steps = apply_edits(np.stack([r.w.values for r in records]), edits, TruncationConfig(args.psi, w_mean))
    out = _out(args)
    edited = [SampleRecord(r.z, LatentVec(w, Space.W), gen.synthesize(LatentVec(w, Space.W)), r.sample_id)
              for r, w in zip(records, W)]
    write_corpus(out, edited, read_json(gen_cfg_path))
    write_lvec(out / "w_mean.lvec", w_mean)
    write_jsonl(out / "edits.jsonl", [{"sample_id": r.sample_id, "attribute_edits": [[a, s] for a, s in st]}
                                      for r, st in zip(records, steps)])
    print(f"edited {len(edited)} latents into {out}")


def _qa_config(args, src):
    from .generator import generator_from_config
    from .io import read_json
    from .pipeline import qa_config_from_dict

    section, base = {}, Path(".")
    if args.config:
        obj = read_json(args.config)
        section, base = obj.get("qa", obj), Path(args.config).parent
    gen = None
    if (src / "generator.json").exists():
        gen = generator_from_config(read_json(src / "generator.json"), src)
    return qa_config_from_dict(section, base, gen)


def cmd_validate(args):
    from .io import write_jsonl
    from .pipeline import read_corpus
    from .qa import validate_texture

    src = Path(args.input)
    cfg = _qa_config(args, src)
    reports = [validate_texture(r.texture, cfg, r.sample_id) for r in read_corpus(src)]
    report_path = Path(args.report or src / "qa.jsonl")
    write_jsonl(report_path, [r.to_dict() for r in reports])
    passed = sum(r.overall_pass for r in reports)
    print(f"{passed}/{len(reports)} textures passed; report at {report_path}")


def cmd_embed(args):
    from .pipeline import embed_corpus

    n, dim = embed_corpus(args.input, _out(args))
    print(f"embedded {n} textures (dim {dim}) into {_out(args)}")


def cmd_metrics(args):
    from .io import read_femb, write_json
    from .metrics import MetricResult, corpus_stats, fid, kid, precision_recall

    real, _ = read_femb(args.real)
    fake, _ = read_femb(args.fake)
    if not (args.fid or args.kid or args.pr):
        args.fid = True
    results = []
    if args.fid:
        results.append(fid(corpus_stats(real), corpus_stats(fake)))
    if args.kid:
        results.append(kid(real, fake, args.blocks, args.seed))
    if args.pr:
        pr = precision_recall(real, fake, args.k)
        results += [MetricResult("precision", pr["precision"], 0.0, {"k": args.k}),
                    MetricResult("recall", pr["recall"], 0.0, {"k": args.k})]
    payload = [r.to_dict() for r in results]
    if args.out:
        write_json(args.out, payload)
    for r in results:
        print(f"{r.name}: {r.value:.6g}" + (f" +- {r.dispersion:.3g}" if r.dispersion else ""))


def cmd_render(args):
    from .pipeline import read_corpus, view_from_config, write_render_outputs
    from .render import head_mesh, load_mesh, render_corpus

    mesh = load_mesh(args.mesh) if args.mesh else head_mesh()
    records = read_corpus(args.textures)
    view = view_from_config({"seed": args.seed, "image_size": [args.size, args.size]})
    images = render_corpus(mesh, [r.texture for r in records], view, [r.sample_id for r in records])
    write_render_outputs(_out(args), images)
    print(f"rendered {len(images)} views into {_out(args)}")


def _load_sources(spec, base):
    from .detection import DatasetManifest, Source
    from .io import read_jsonl

    sources = {}
    for name, src in spec.get("sources", {}).items():
        name = Source(name).value
        if isinstance(src, int):
            # a synthetic frame pool of the given size
            entries = [{"frame_id": f"{name}/{i:06d}", "source": name, "uri": f"{name}/{i:06d}"} for i in range(src)]
        else:
            path = Path(src) if Path(src).is_absolute() else base / src
            if not path.exists():
                raise ConfigError(f"source list not found: {path}")
            entries = [{"frame_id": r["frame_id"], "source": name, "uri": r.get("uri", r["frame_id"])}
                       for r in read_jsonl(path)]
        sources[name] = DatasetManifest(entries)
    return sources


def cmd_mixbuild(args):
    from .detection import PRESET_MIXES, MixSpec, build_mix
    from .io import read_json, write_jsonl

    spec = read_json(args.spec)
    if "preset" in spec:
        if spec["preset"] not in PRESET_MIXES:
            raise ConfigError(f"unknown preset {spec['preset']!r}")
        counts = PRESET_MIXES[spec["preset"]]
    else:
        if "counts" not in spec:
            raise ConfigError("mix spec needs 'counts' or 'preset'")
        counts = spec["counts"]
    seed = args.seed if args.seed is not None else spec.get("seed")
    if seed is None:
        raise ConfigError("mix spec needs an explicit seed")
    manifest = build_mix(_load_sources(spec, Path(args.spec).parent), MixSpec(counts, int(seed)))
    write_jsonl(_out(args), manifest.to_records())
    comp = ", ".join(f"{k}={v}" for k, v in manifest.composition.items())
    print(f"{len(manifest.entries)} frames ({comp})")


def _load_boxes(path):
    from .detection import boxes_from_jsonl, load_kitti_dir
    from .io import read_jsonl

    path = Path(path)
    return load_kitti_dir(path) if path.is_dir() else boxes_from_jsonl(read_jsonl(path))


def cmd_evalmap(args):
    from .detection import map_at_50
    from .io import write_json

    result = map_at_50(_load_boxes(args.det), _load_boxes(args.gt), iou_thresh=args.iou)
    if args.out:
        write_json(args.out, result.to_dict())
    print(f"{result.name}: {result.value:.6f}")
    for cls, v in result.meta["per_class"].items():
        ap = "n/a" if v["ap"] is None else f"{v['ap']:.6f}"
        print(f"  {cls}: AP {ap} ({v['n_gt']} gt, {v['n_det']} det)")


def cmd_assemble(args):
    from .io import write_json
    from .pipeline import assemble_instances, load_reports, texture_paths

    src = Path(args.input)
    reports = load_reports(args.qa or src / "qa.jsonl")
    paths = texture_paths(src)
    missing = sorted(set(paths) - set(reports))
    if missing:
        raise InvalidArgumentError(f"no QA report for {len(missing)} textures, e.g. {missing[0]!r}")
    manifest = assemble_instances(args.base_model_id, [(paths[sid], reports[sid]) for sid in paths])
    write_json(_out(args), manifest.to_dict())
    print(f"{len(manifest.instances)} instances, {len(manifest.exclusions)} excluded")


def cmd_run(args):
    from .pipeline import PipelineConfig, run_pipeline

    if not args.config:
        raise ConfigError("run needs --config")
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if args.out:
        cfg.raw["output_dir"] = str(Path(args.out).resolve())
    result = run_pipeline(cfg, args.n)
    rate = result.qa_summary["pass_rate"]
    print(f"status {result.status}: {len(result.manifest.instances)} instances, "
          f"pass rate {'n/a' if rate is None else f'{rate:.3f}'}")
    for m in result.metrics:
        print(f"{m.name}: {m.value:.6g}")


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uvforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="store_true", help="print version and config fingerprint")
    parser.add_argument("--config", dest="root_config", help="config whose hash --version reports")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    sub = parser.add_subparsers(dest="verb")

    p = sub.add_parser("generate", parents=[common], help="sample textures from a generator")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out-dir", dest="out")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--texture-size", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("learn-direction", parents=[common], help="train an attribute direction")
    p.add_argument("--attr", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--labels", help="JSON-lines labeled set; planted toy labels when omitted")
    p.add_argument("--C", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=1.0)
    p.add_argument("--flip", type=float, default=0.0, help="label noise for planted labels")
    p.set_defaults(func=cmd_learn_direction)

    p = sub.add_parser("edit", parents=[common], help="apply attribute edits to a corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--direction", action="append", required=True)
    p.add_argument("--psi", type=float, default=1.0)
    p.add_argument("--alpha-max", type=float, default=3.0)
    p.add_argument("--s-floor", type=float, default=-3.0)
    p.add_argument("--s-cap", type=float, default=1.0)
    p.add_argument("--w-mean")
    p.add_argument("--w-mean-n", type=int, default=1000)
    p.add_argument("--out-dir", dest="out")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("validate", parents=[common], help="run texture QA")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("embed", parents=[common], help="write pixelstat embeddings (FEMB)")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("metrics", parents=[common], help="FID / KID / precision-recall")
    p.add_argument("--real", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--fid", action="store_true")
    p.add_argument("--kid", action="store_true")
    p.add_argument("--pr", action="store_true")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--blocks", type=int, default=1)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", parents=[common], help="render textures on a head mesh")
    p.add_argument("--mesh")
    p.add_argument("--textures", required=True)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("mixbuild", parents=[common], help="build a mixed detection dataset manifest")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_mixbuild)

    p = sub.add_parser("evalmap", parents=[common], help="mAP over JSON-lines or KITTI label dirs")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_evalmap)

    p = sub.add_parser("assemble", parents=[common], help="bind passing textures to a base asset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--qa")
    p.add_argument("--base-model-id", required=True)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("run", parents=[common], help="full pipeline from a config file")
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (CapacityError, InfeasibleError)):
        return EXIT_CAPACITY
    if isinstance(exc, (InvalidArgumentError, ParseError, LookupMissError, DegenerateDataError, ValueError,
                        KeyError, OSError)):
        return EXIT_DATA
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.version:
            print(fingerprint(getattr(args, "config", None) or args.root_config))
            return EXIT_OK
        if not args.verb:
            parser.print_help()
            return EXIT_CONFIG
        if args.seed is None and args.verb != "run":
            args.seed = 0
        args.func(args)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to the exit-code contract
        code = _exit_code(exc)
        print(f"uvforge: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
