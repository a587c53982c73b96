import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uvforge.exceptions import InvalidArgumentError, LookupMissError
from uvforge.generator import Texture
from uvforge.metrics import (PIXELSTAT_DIM, CorpusStats, FeatureVector, PixelStatExtractor, PrecomputedExtractor,
                             corpus_stats, extract_features, fid, kid, mmd2_unbiased, pixelstat_features,
                             precision_recall)


def _stats(rows):
    return corpus_stats(np.asarray(rows, dtype=float))


def test_pixelstat_shape_and_uniform():
    tex = Texture(np.full((64, 64, 3), (51, 102, 204), dtype=np.uint8))
    f = pixelstat_features(tex)
    assert f.shape == (PIXELSTAT_DIM,) == (774,)
    assert np.allclose(f[-6:-3], [0.2, 0.4, 0.8])
    assert np.all(f[-3:] == 0)
    same = extract_features([tex, tex])
    assert np.array_equal(same[0].values, same[1].values) and same[0].extractor_id == "pixelstat"


@pytest.mark.parametrize("size", [(64, 64), (100, 72)])
def test_pixelstat_box_average_oracle(size):
    w, h = size
    px = np.random.default_rng(0).integers(0, 256, (h, w, 3), dtype=np.uint8)
    f = pixelstat_features(Texture(px))[:-6].reshape(16, 16, 3)
    for i in range(16):
        for j in range(16):
            r0, r1 = i * h // 16, (i + 1) * h // 16
            c0, c1 = j * w // 16, (j + 1) * w // 16
            block = [px[r, c] / 255.0 for r in range(r0, r1) for c in range(c0, c1)]
            assert np.allclose(f[i, j], np.mean(block, axis=0), atol=1e-6)


def test_extractor_estimator_api():
    texs = [Texture(np.random.default_rng(s).integers(0, 256, (32, 32, 3), dtype=np.uint8)) for s in range(3)]
    X = PixelStatExtractor().fit(texs).transform(texs)
    assert X.shape == (3, 774)
    with pytest.raises(InvalidArgumentError):
        extract_features([])


def test_precomputed_lookup():
    ext = PrecomputedExtractor(np.eye(3), ["a", "b", "c"], "clip")
    feats = extract_features([None, None], ext, sample_ids=["c", "a"])
    assert [f.values.tolist() for f in feats] == [[0, 0, 1], [1, 0, 0]]
    assert feats[0].extractor_id == "clip"
    with pytest.raises(LookupMissError):
        extract_features([None], ext, sample_ids=["zz"])


def test_corpus_stats_examples():
    s = _stats([[1.0, 0.0], [-1.0, 0.0]])
    assert np.array_equal(s.mean, [0, 0])
    assert np.array_equal(s.covariance, [[2, 0], [0, 0]])
    assert np.all(_stats([[3.0, 4.0]] * 5).covariance == 0)
    with pytest.raises(InvalidArgumentError):
        _stats([[1.0, 2.0]])
    with pytest.raises(InvalidArgumentError):
        CorpusStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 3)


def test_corpus_stats_monte_carlo():
    rng = np.random.default_rng(1)
    mu = np.array([1.0, -2.0, 0.5])
    L = np.array([[1.0, 0, 0], [0.5, 1.0, 0], [0.2, -0.3, 0.7]])
    X = mu + rng.standard_normal((1000, 3)) @ L.T
    s = _stats(X)
    truth = L @ L.T
    assert np.all(np.abs(s.mean - mu) <= 4 * np.sqrt(np.diag(truth) / 1000))
    # var of a sample covariance entry ~ (S_ii S_jj + S_ij^2) / n
    se = np.sqrt((np.outer(np.diag(truth), np.diag(truth)) + truth ** 2) / 1000)
    assert np.all(np.abs(s.covariance - truth) <= 5 * se)
    ref_mean, ref_cov = oracles.mean_cov(X[:50].tolist())
    s50 = _stats(X[:50])
    assert np.allclose(s50.mean, ref_mean, atol=1e-12) and np.allclose(s50.covariance, ref_cov, atol=1e-12)


def test_fid_closed_forms():
    a = CorpusStats(np.zeros(1), np.eye(1), 10)
    b = CorpusStats(np.ones(1), np.eye(1), 10)
    assert abs(fid(a, b).value - 1.0) <= 1e-9
    a, b = CorpusStats(np.zeros(3), np.eye(3), 5), CorpusStats(np.zeros(3), 4 * np.eye(3), 5)
    assert abs(fid(a, b).value - 3.0) <= 1e-9
    assert fid(a, a).value <= 1e-6
    with pytest.raises(InvalidArgumentError):
        fid(a, CorpusStats(np.zeros(2), np.eye(2), 3))


def _random_psd(rng, dim, rank=None):
    A = rng.standard_normal((dim, rank or dim))
    return A @ A.T


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8))
def test_fid_symmetric_and_matches_sqrtm(seed, dim):
    rng = np.random.default_rng(seed)
    sa, sb = _random_psd(rng, dim), _random_psd(rng, dim)
    a = CorpusStats(rng.standard_normal(dim), sa, 10)
    b = CorpusStats(rng.standard_normal(dim), sb, 10)
    ab, ba = fid(a, b).value, fid(b, a).value
    assert abs(ab - ba) <= 1e-6 * max(1.0, ab)
    assert abs(ab - oracles.fid_gaussians(a.mean, sa, b.mean, sb)) <= 1e-6 * max(1.0, ab)
    assert fid(a, a).value <= 1e-6 * max(1.0, np.trace(sa))


def test_fid_rank_deficient_is_finite():
    rng = np.random.default_rng(3)
    s = _random_psd(rng, 6, rank=2)
    r = fid(CorpusStats(np.zeros(6), s, 3), CorpusStats(np.zeros(6), s, 3))
    assert 0 <= r.value <= 1e-6 * np.trace(s)


def test_fid_oracle_small():
    rng = np.random.default_rng(4)
    A, B = rng.standard_normal((10, 4)), rng.standard_normal((9, 4)) + 0.5
    assert abs(fid(_stats(A), _stats(B)).value - oracles.fid(A.tolist(), B.tolist())) <= 1e-9


def test_kid_three_point_self():
    X = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    r = kid(X, X, blocks=1)
    k = oracles.poly_kernel
    off = sum(k(X[i], X[j]) for i in range(3) for j in range(3) if i != j) / 6
    full = sum(k(X[i], X[j]) for i in range(3) for j in range(3)) / 9
    assert abs(r.value - 2 * (off - full)) <= 1e-12
    assert r.value <= 0


def test_kid_far_clusters_positive():
    rng = np.random.default_rng(5)
    A = rng.normal(0, 0.1, (5, 3))
    B = rng.normal(10, 0.1, (5, 3))
    r = kid(A, B, blocks=1)
    assert r.value > 0
    assert abs(r.value - oracles.mmd2(A.tolist(), B.tolist())) <= 1e-9 * max(1, abs(r.value))


def test_kid_two_blocks_oracle():
    rng = np.random.default_rng(6)
    A, B = rng.standard_normal((4, 3)), rng.standard_normal((4, 3)) + 1
    r = kid(A, B, blocks=2, seed=9)
    mean, std = oracles.kid(A.tolist(), B.tolist(), 2, 9)
    assert abs(r.value - mean) <= 1e-9 and abs(r.dispersion - std) <= 1e-9
    assert len(r.meta["block_values"]) == 2


def test_kid_errors():
    X = np.zeros((5, 2))
    with pytest.raises(InvalidArgumentError):
        kid(X, X, blocks=3)
    with pytest.raises(InvalidArgumentError):
        kid(X, X, blocks=0)
    with pytest.raises(InvalidArgumentError):
        kid(X, np.zeros((5, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 10), st.integers(1, 4))
def test_kid_identical_sets_nonpositive(seed, n, dim):
    X = np.random.default_rng(seed).standard_normal((n, dim))
    assert mmd2_unbiased(X, X) <= 1e-9


def test_precision_recall_examples():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((10, 3))
    assert precision_recall(X, X, k=1) == {"precision": 1.0, "recall": 1.0}
    far = precision_recall(X, X + 100, k=2)
    assert far["precision"] == 0.0 and far["recall"] == 0.0
    with pytest.raises(InvalidArgumentError):
        precision_recall(X, X, k=10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(3, 10), st.integers(3, 10), st.integers(1, 4), st.integers(1, 2))
def test_metrics_match_brute_force(seed, n_real, n_fake, dim, k):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((n_real, dim))
    F = rng.standard_normal((n_fake, dim)) * 1.5 + 0.3
    got = precision_recall(R, F, k)
    prec, rec = oracles.precision_recall(R, F, k)
    assert got["precision"] == pytest.approx(prec, abs=1e-9) and got["recall"] == pytest.approx(rec, abs=1e-9)
    perm_r, perm_f = rng.permutation(n_real), rng.permutation(n_fake)
    assert precision_recall(R[perm_r], F[perm_f], k) == got
    assert abs(mmd2_unbiased(R, F) - oracles.mmd2(R.tolist(), F.tolist())) <= 1e-9 * max(1.0, abs(mmd2_unbiased(R, F)))
    if n_real > dim and n_fake > dim:
        want = oracles.fid(R.tolist(), F.tolist())
        assert abs(fid(_stats(R), _stats(F)).value - want) <= 1e-9 * max(1.0, want)


def test_feature_vector_lists_accepted():
    feats = [FeatureVector(np.array([float(i), 1.0])) for i in range(4)]
    assert corpus_stats(feats).n == 4
