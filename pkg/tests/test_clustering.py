import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ari_by_pairs
from pathway_miner import clustering
from pathway_miner.clustering import (
    FittedVariable,
    adjusted_rand_index,
    kmeans,
    rand_index,
    read_fitted,
    recommend_k,
    relabel_by_centroid,
    stability_estimate,
    stability_sweep,
    write_fitted,
)


def blobs_1d(centers=(0.0, 10.0, 20.0, 30.0), n=100, sd=2.0, seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([c + sd * rng.standard_normal(n) for c in centers])[:, None]


# ---------------------------------------------------------------- ARI


def test_ari_worked_example():
    # contingency [[2,1],[0,2]]: index 2, row and column pair sums 4 and 4 of 10 pairs
    # expected 1.6, max 4, so ARI = 0.4 / 2.4
    a = [0, 0, 0, 1, 1]
    b = [0, 0, 1, 1, 1]
    assert adjusted_rand_index(a, b) == pytest.approx(ari_by_pairs(a, b), abs=1e-15)
    assert adjusted_rand_index(a, b) == pytest.approx(1 / 6, abs=1e-15)


def test_ari_identical_and_relabeled():
    a = [0, 0, 1, 1, 2, 2]
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, [5, 5, 9, 9, 7, 7]) == 1.0
    assert rand_index(a, a) == 1.0


def test_ari_degenerate_single_cluster():
    assert adjusted_rand_index([0, 0, 0], [1, 1, 1]) == 1.0
    assert adjusted_rand_index([0, 1, 2], [2, 0, 1]) == 1.0


def test_ari_minimum_is_minus_half():
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)


def test_ari_shape_errors():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        adjusted_rand_index([0], [0])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 30).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 5), min_size=n, max_size=n),
    st.lists(st.integers(0, 5), min_size=n, max_size=n),
)))
def test_ari_matches_pair_oracle(ab):
    a, b = ab
    v = adjusted_rand_index(a, b)
    assert v == pytest.approx(ari_by_pairs(a, b), abs=1e-12)
    assert -0.5 - 1e-12 <= v <= 1 + 1e-12
    assert v == adjusted_rand_index(b, a)


# ---------------------------------------------------------------- k-means


def test_kmeans_fixed_point():
    x = np.random.default_rng(3).normal(size=(200, 3))
    c = kmeans(x, 4, seed=1)
    labels, _ = clustering._assign(x, c.centroids)
    np.testing.assert_array_equal(labels, c.labels)
    for j in range(4):
        np.testing.assert_allclose(c.centroids[j], x[c.labels == j].mean(axis=0), atol=1e-6)


def test_kmeans_matches_exhaustive_two_partition_optimum():
    # 1-D optimal 2-clusterings are contiguous splits of the sorted points
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = np.sort(rng.normal(size=12))
        best = min(
            ((x[:s] - x[:s].mean()) ** 2).sum() + ((x[s:] - x[s:].mean()) ** 2).sum() for s in range(1, 12)
        )
        got = min(kmeans(x, 2, seed=s).inertia for s in range(10))
        assert got == pytest.approx(best, rel=1e-12)


def test_kmeans_exhaustive_oracle_small_2d():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 2))
    best = np.inf
    for assign in itertools.product(range(2), repeat=7):
        lab = np.array((0,) + assign)
        if lab.min() == lab.max():
            continue
        best = min(best, sum(((x[lab == j] - x[lab == j].mean(0)) ** 2).sum() for j in (0, 1)))
    got = min(kmeans(x, 2, seed=s).inertia for s in range(20))
    assert got == pytest.approx(best, rel=1e-12)


def test_kmeans_deterministic():
    x = np.random.default_rng(0).normal(size=(300, 2))
    a, b = kmeans(x, 5, seed=42), kmeans(x, 5, seed=42)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_kmeans_duplicate_points_and_constant_field():
    x = np.zeros((10, 2))
    c = kmeans(x, 3, seed=0)
    assert c.inertia == 0.0
    assert np.isfinite(c.centroids).all()
    c1 = kmeans(x, 1)
    assert (c1.labels == 0).all()


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 1)), 3)
    with pytest.raises(ValueError):
        kmeans(np.array([[0.0], [np.nan]]), 1)
    with pytest.raises(ValueError):
        kmeans(np.zeros((4, 1)), 2, init="bogus")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.sampled_from(["plusplus", "random"]))
def test_inertia_non_increasing(seed, k, init):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(int(rng.integers(k, 80)), int(rng.integers(1, 4))))
    h = kmeans(x, k, init=init, seed=seed).inertia_history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_relabel_orders_by_centroid_mean():
    x = blobs_1d(centers=(30, 0, 20, 10), sd=0.3)
    c = relabel_by_centroid(kmeans(x, 4, seed=0))
    assert np.all(np.diff(c.centroids[:, 0]) > 0)
    assert c.labels[0] == 3 and c.labels[-1] == 1  # first blob at 30, last at 10
    assert sorted(c.permutation) == [0, 1, 2, 3]


def test_relabel_keeps_invalid():
    c = clustering.Clustering(k=2, centroids=np.array([[5.0], [1.0]]), labels=np.array([0, -1, 1]), inertia=0.0)
    r = relabel_by_centroid(c)
    assert r.labels.tolist() == [1, -1, 0]
    assert r.permutation == (1, 0)


# ---------------------------------------------------------------- stability


@pytest.mark.parametrize("seed", range(5))
def test_stability_recommends_four_blobs(seed):
    res = stability_sweep(blobs_1d(seed=seed), range(2, 9), seed=seed)
    k, peaks, _ = res.recommended[(None, None)]
    assert k == 4
    by_k = {r.k: r.averaged_ari for r in res.rows}
    assert by_k[4] > by_k[5]


def test_stability_low_for_uniform_points_and_large_k():
    x = np.random.default_rng(0).random((300, 2))
    assert stability_estimate(x, 10, seed=0).averaged_ari < 0.9


def test_stability_single_k_row():
    res = stability_sweep(blobs_1d(), [4], seed=0)
    assert len(res.rows) == 1 and len(res.rows[0].aris) == 6


def test_stability_empty_range_errors():
    with pytest.raises(ValueError):
        stability_sweep(blobs_1d(), [], seed=0)


def test_stability_threads_do_not_change_result():
    x = blobs_1d(n=25)
    a = stability_estimate(x, 5, seed=3, threads=1)
    b = stability_estimate(x, 5, seed=3, threads=4)
    assert a.aris == b.aris and a.inertia == b.inertia


@pytest.mark.parametrize(
    "ks, scores, expect",
    [
        ([2, 3, 4, 5, 6], [1, 1, 0.9, 0.7, 0.8], 4),
        ([2, 3, 4, 5, 6, 7], [1, 1, 0.5, 0.9, 0.6, 0.95], 5),
        ([4, 5, 6], [0.8, 0.8, 0.8], 4),
        ([3], [1.0], None),
    ],
)
def test_recommend_k_first_peak_above_three(ks, scores, expect):
    assert recommend_k(ks, scores)[0] == expect


# ---------------------------------------------------------------- persistence


def test_fitted_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(-1, 4, size=(4, 6, 10))
    fv = FittedVariable("T050", 4, rng.normal(size=(4, 5)), 0, (2, 0, 3, 1), 12.5,
                        {"kind": "percentile", "quantiles": [0, 0.5, 1]},
                        ["forced/0", "forced/1", "baseline/0", "baseline/1"], labels)
    write_fitted(fv, tmp_path / "a")
    back = read_fitted(tmp_path / "a" / "T050.json")
    np.testing.assert_array_equal(back.labels, labels)
    np.testing.assert_array_equal(back.centroids, fv.centroids)
    write_fitted(back, tmp_path / "b")
    for name in ("T050.json", "T050_labels.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_label_file_encoding():
    raw = clustering.labels_to_u16(np.array([0, 3, -1]))
    assert raw == b"\x00\x00\x03\x00\xff\xff"
    assert clustering.labels_from_u16(raw, (3,)).tolist() == [0, 3, -1]
