"""Exit criteria.  Each test prints one ``PASS``/``FAIL`` line with its wall time.

Run on their own with ``pytest -m acceptance -s tests/test_acceptance.py``.
"""

import json
import math
import shutil
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import make_run_config
from uvforge.detection import PRESET_MIXES, BoundingBox, DatasetManifest, MixSpec, average_precision, build_mix
from uvforge.direction import LabeledLatentSet, SvmConfig, train_linear_svm
from uvforge.exceptions import CapacityError
from uvforge.generator import Texture, ToyGenerator
from uvforge.latent import AttributeDirection, LatentVec, StepPolicy, TruncationConfig, adaptive_step, manipulate, \
    truncate
from uvforge.metrics import CorpusStats, corpus_stats, fid, kid, precision_recall
from uvforge.qa import (RegionMask, Tint, TintClassifier, brightness_symmetry_error, classify_tint,
                        luminance_consistency, synthetic_tint_curation)
from uvforge.render import ViewSpec, head_mesh, rasterize, render, render_corpus, three_d_fid

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(number, title, limit_s, capsys):
    start = time.perf_counter()
    failure = None
    try:
        yield
    except Exception as exc:  # noqa: BLE001 - reported, then re-raised
        failure = exc
    elapsed = time.perf_counter() - start
    if failure is None and elapsed >= limit_s:
        failure = AssertionError(f"took {elapsed:.2f}s, limit {limit_s}s")
    verdict = "PASS" if failure is None else "FAIL"
    with capsys.disabled():
        print(f"\n[{verdict}] criterion {number:2d}: {title} ({elapsed:.2f}s / {limit_s}s)")
    if failure is not None:
        raise failure


def test_01_latent_arithmetic(capsys):
    with criterion(1, "truncation identities and manipulate linearity, 10k trials", 5, capsys):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10_000):
            w = LatentVec(rng.normal(0, 3, 16))
            mean = LatentVec(rng.normal(0, 3, 16))
            d = AttributeDirection(rng.standard_normal(16), 0.0, "a")
            a, b = rng.normal(0, 5, 2)
            worst = max(worst,
                        np.abs(truncate(w, TruncationConfig(0.0, mean)).values - mean.values).max(),
                        np.abs(truncate(w, TruncationConfig(1.0, mean)).values - w.values).max(),
                        np.abs(manipulate(manipulate(w, d, a), d, b).values - manipulate(w, d, a + b).values).max())
        assert worst <= 1e-9, worst


def test_02_direction_recovery(capsys):
    with criterion(2, "planted direction, 5000 samples: cosine >= 0.99, accuracy >= 0.99", 30, capsys):
        rng = np.random.default_rng(2024)
        u = rng.standard_normal(512)
        u /= np.linalg.norm(u)
        y = rng.integers(0, 2, 5000) * 2 - 1
        X = y[:, None] * 2.0 * u + math.sqrt(0.5) * rng.standard_normal((5000, 512))
        d = train_linear_svm(LabeledLatentSet([LatentVec(r) for r in X], list(y), "planted"), SvmConfig(seed=0))
        cosine = float(d.normal @ u)
        assert cosine >= 0.99, cosine
        assert d.train_meta["accuracy"] >= 0.99, d.train_meta


def test_03_adaptive_step(capsys):
    with criterion(3, "adaptive step monotone with exact endpoints", 1, capsys):
        for alpha_max, s_floor, s_cap in [(3.0, -3.0, 1.0), (0.5, 0.0, 0.1), (10.0, -50.0, 50.0)]:
            policy = StepPolicy(alpha_max, s_floor, s_cap)
            grid = np.linspace(s_floor - 5, s_cap + 5, 5001)
            steps = [adaptive_step(float(s), policy) for s in grid]
            assert all(x >= y for x, y in zip(steps, steps[1:]))
            assert adaptive_step(s_floor, policy) == alpha_max and adaptive_step(s_cap, policy) == 0.0
            assert all(adaptive_step(float(s), policy) == alpha_max for s in grid[grid <= s_floor])
            assert all(adaptive_step(float(s), policy) == 0.0 for s in grid[grid >= s_cap])


def test_04_fid_closed_forms(capsys):
    with criterion(4, "FID closed forms and rotation invariance", 5, capsys):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((6, 6))
        a = CorpusStats(rng.standard_normal(6), A @ A.T, 50)
        assert fid(a, a).value <= 1e-6
        one = fid(CorpusStats(np.zeros(1), np.eye(1), 2), CorpusStats(np.ones(1), np.eye(1), 2)).value
        assert abs(one - 1.0) <= 1e-9
        three = fid(CorpusStats(np.zeros(3), np.eye(3), 2), CorpusStats(np.zeros(3), 4 * np.eye(3), 2)).value
        assert abs(three - 3.0) <= 1e-9
        for _ in range(20):
            B = rng.standard_normal((6, 6))
            b = CorpusStats(rng.standard_normal(6), B @ B.T, 50)
            Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
            ra = CorpusStats(Q @ a.mean, Q @ a.covariance @ Q.T, 50)
            rb = CorpusStats(Q @ b.mean, Q @ b.covariance @ Q.T, 50)
            assert abs(fid(ra, rb).value - fid(a, b).value) <= 1e-6


def test_05_oracle_equivalence(capsys):
    with criterion(5, "FID, KID, P/R and AP equal brute-force oracles, 100 instances each", 60, capsys):
        rng = np.random.default_rng(5)
        for _ in range(100):
            dim = int(rng.integers(1, 5))
            n_a, n_b = int(rng.integers(dim + 1, 11)), int(rng.integers(dim + 1, 11))
            A, B = rng.standard_normal((n_a, dim)), rng.standard_normal((n_b, dim)) + rng.normal(0, 1, dim)
            want = oracles.fid(A.tolist(), B.tolist())
            assert abs(fid(corpus_stats(A), corpus_stats(B)).value - want) <= 1e-9 * max(1.0, want)
        for _ in range(100):
            dim, blocks = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            A = rng.standard_normal((int(rng.integers(2 * blocks, 11)), dim))
            B = rng.standard_normal((int(rng.integers(2 * blocks, 11)), dim)) * 1.3
            seed = int(rng.integers(1000))
            got = kid(A, B, blocks, seed)
            mean, std = oracles.kid(A.tolist(), B.tolist(), blocks, seed)
            assert abs(got.value - mean) <= 1e-9 * max(1.0, abs(mean)) and abs(got.dispersion - std) <= 1e-9
        for _ in range(100):
            dim, k = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            R = rng.standard_normal((int(rng.integers(k + 1, 11)), dim))
            F = rng.standard_normal((int(rng.integers(k + 1, 11)), dim)) + 0.5
            got = precision_recall(R, F, k)
            prec, rec = oracles.precision_recall(R, F, k)
            assert abs(got["precision"] - prec) <= 1e-9 and abs(got["recall"] - rec) <= 1e-9
        for _ in range(100):
            gts = []
            for _ in range(int(rng.integers(1, 6))):
                x, y = rng.integers(0, 8, 2)
                gts.append((float(x), float(y), float(x + rng.integers(2, 6)), float(y + rng.integers(2, 6))))
            dets = []
            for _ in range(int(rng.integers(0, 6))):
                x, y = rng.integers(0, 8, 2)
                dets.append((float(x), float(y), float(x + rng.integers(2, 6)), float(y + rng.integers(2, 6)),
                             float(rng.choice([0.3, 0.6, 0.9]))))
            got = average_precision([BoundingBox(*d[:4], confidence=d[4]) for d in dets],
                                    [BoundingBox(*g) for g in gts])
            assert abs(got - oracles.average_precision(dets, gts)) <= 1e-9


def test_06_qa_gate(capsys):
    with criterion(6, "QA defect suite: symmetry 0, luminance 0.392 fails at 0.1, blue tint detected", 10, capsys):
        rng = np.random.default_rng(6)
        half = rng.integers(0, 256, (64, 32, 3), dtype=np.uint8)
        assert brightness_symmetry_error(Texture(np.concatenate([half, half[:, ::-1]], axis=1))) == 0.0

        px = np.full((256, 256, 3), 100, dtype=np.uint8)
        px[:, 128:] = 200
        regions = [RegionMask("a", (0.1, 0.1, 0.4, 0.4)), RegionMask("b", (0.6, 0.6, 0.9, 0.9))]
        lum = luminance_consistency(Texture(px), regions)
        assert abs(lum["max_pair_l1"] - 100 / 255) <= 1e-6 and not lum["passed"]

        gen = ToyGenerator(latent_dim=32, texture_size=(128, 128))
        clean = [r.texture for r in gen.sample_batch(80, 61)]
        curation, labels = synthetic_tint_curation(clean, 40.0)
        assert len(curation) == 80
        model = TintClassifier(k=5).fit_textures(curation, labels)
        probe = gen.sample_batch(1, 62)[0].texture
        blue = probe.pixels.astype(int)
        blue[..., 2] += 40
        assert classify_tint(Texture(np.clip(blue, 0, 255).astype(np.uint8)), model) == Tint.BlueTint
        assert classify_tint(probe, model) == Tint.Normal


def test_07_renderer(capsys):
    with criterion(7, "renderer: two-colour uniform render, depth test, determinism, 3D-FID self = 0", 30, capsys):
        mesh = head_mesh()
        view = ViewSpec(image_size=(64, 64), background=(0, 0, 0), seed=7)
        flat = Texture(np.full((64, 64, 3), (180, 120, 90), dtype=np.uint8))
        colours = {tuple(c) for c in render(mesh, flat, view, 1).pixels.reshape(-1, 3)}
        assert colours == {(180, 120, 90), (0, 0, 0)}

        quad = np.array([[[-1, -1], [40, -1], [-1, 40]], [[40, -1], [40, 40], [-1, 40]]], dtype=float)
        screen = np.concatenate([quad, quad])
        depth = np.concatenate([np.full((2, 3), 2.0), np.full((2, 3), 1.0)])
        uv = np.concatenate([np.full((2, 3, 2), 0.9), np.full((2, 3, 2), 0.1)])
        covered, u, _, _ = rasterize(screen, depth, uv, 32, 32)
        assert covered.all() and np.allclose(u, 0.1)

        tex = Texture(np.random.default_rng(7).integers(0, 256, (64, 64, 3), dtype=np.uint8))
        a = render_corpus(mesh, [tex, flat], view)
        b = render_corpus(mesh, [tex, flat], view)
        assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a, b))

        corpus = [Texture(np.random.default_rng(s).integers(0, 256, (64, 64, 3), dtype=np.uint8)) for s in range(6)]
        assert three_d_fid(mesh, corpus, corpus, ViewSpec(image_size=(32, 32), seed=3)).value <= 1e-6


def test_08_mixing(capsys):
    with criterion(8, "MIX++ 6K + 6K = 12K, oversubscription error, seed determinism", 5, capsys):
        pools = {s: DatasetManifest([{"frame_id": f"{s}/{i}", "source": s, "uri": f"{s}/{i}"} for i in range(6000)])
                 for s in ("Synthetic", "KITTI")}
        spec = MixSpec(PRESET_MIXES["2d_model_3++"], seed=8)
        m = build_mix(pools, spec)
        assert len(m.entries) == 12000 and m.composition == {"Synthetic": 6000, "KITTI": 6000}
        with pytest.raises(CapacityError):
            build_mix(pools, MixSpec({"KITTI": 7000}))
        assert build_mix(pools, spec).to_records() == m.to_records()


def test_09_map_micro_cases(capsys):
    with criterion(9, "AP micro-cases 1.0 / 0.5 / 0.0 and confidence-rescaling invariance", 5, capsys):
        gt = [BoundingBox(0, 0, 10, 10)]
        assert average_precision([BoundingBox(0, 0, 10, 10, confidence=0.9)], gt) == 1.0
        assert average_precision([BoundingBox(30, 30, 40, 40, confidence=0.9),
                                  BoundingBox(0, 0, 10, 10, confidence=0.8)], gt) == 0.5
        assert average_precision([], gt) == 0.0
        rng = np.random.default_rng(9)
        for _ in range(500):
            boxes = [(x, y, x + rng.integers(2, 6), y + rng.integers(2, 6)) for x, y in rng.integers(0, 8, (4, 2))]
            gts = [BoundingBox(*map(float, b)) for b in boxes[:2]]
            conf = rng.uniform(0.05, 1.0, 4)
            scale = rng.uniform(0.01, 1.0)
            base = average_precision([BoundingBox(*map(float, b), confidence=c) for b, c in zip(boxes, conf)], gts)
            scaled = average_precision([BoundingBox(*map(float, b), confidence=c * scale)
                                        for b, c in zip(boxes, conf)], gts)
            assert base == scaled


def _uvforge():
    exe = shutil.which("uvforge")
    return [exe] if exe else [sys.executable, "-m", "uvforge.cli"]


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_10_end_to_end(tmp_path, capsys):
    path = make_run_config(tmp_path, n=100, latent_dim=512, texture_size=256, w_mean={"n": 2000, "seed": 3},
                           render={"seed": 5, "image_size": [64, 64]})
    with criterion(10, "uvforge run, n=100: all instances pass QA, byte-identical rerun", 60, capsys):
        start = time.perf_counter()
        proc = subprocess.run(_uvforge() + ["run", "--config", str(path)], capture_output=True, text=True)
        first_run = time.perf_counter() - start
        assert proc.returncode == 0, proc.stderr
        assert first_run < 60, first_run
        out = tmp_path / "out"
        manifest = json.loads((out / "manifest.json").read_text())
        reports = {r["sample_id"]: r for r in map(json.loads, (out / "qa.jsonl").read_text().splitlines())}
        assert len(reports) == 100 and manifest["n_instances"] > 0
        for inst in manifest["instances"]:
            assert reports[inst["qa_report_ref"].split("#")[1]]["overall_pass"] is True
        snapshot = _tree(out)
        shutil.rmtree(out)
        proc = subprocess.run(_uvforge() + ["run", "--config", str(path)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert _tree(out) == snapshot
