from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benchdiag import diagnose as dg
from oracles import blobs, brute_silhouette, nearest_centroid_labels


def test_avg_distance_hand_cases():
    v = np.array([0.6, 0.8])
    assert dg.avg_pairwise_cosine_distance([v, v]) == pytest.approx(0.0, abs=1e-12)
    assert dg.avg_pairwise_cosine_distance([[1, 0], [0, 1]]) == pytest.approx(1.0)
    three = [[1, 0], [0, 1], [1 / math.sqrt(2), 1 / math.sqrt(2)]]
    assert dg.avg_pairwise_cosine_distance(three) == pytest.approx(0.52860, abs=5e-6)


def test_avg_distance_errors():
    with pytest.raises(ValueError):
        dg.avg_pairwise_cosine_distance([[1.0, 0.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_avg_distance_matches_pairs_and_is_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    expected = np.mean([1 - U[i] @ U[j] for i, j in itertools.combinations(range(n), 2)])
    got = dg.avg_pairwise_cosine_distance(X)
    assert got == pytest.approx(expected, abs=1e-12)
    assert 0.0 <= got <= 2.0
    assert dg.avg_pairwise_cosine_distance(X[rng.permutation(n)]) == pytest.approx(got, abs=1e-12)


def test_kmeans_two_far_groups():
    X = np.array([[1.0, 0.01], [1.0, -0.01], [-0.01, 1.0], [0.01, 1.0]])
    res = dg.kmeans(X, 2, seed=3)
    labels, centroids = res
    assert labels[0] == labels[1] != labels[2] == labels[3]
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    assert np.array_equal(labels, nearest_centroid_labels(U, centroids))


def test_kmeans_k_equals_n_zero_objective():
    X = np.random.default_rng(0).normal(size=(6, 4))
    res = dg.kmeans(X, 6, seed=0)
    assert sorted(res.labels.tolist()) == list(range(6))
    assert res.objective == pytest.approx(0.0, abs=1e-12)


def test_kmeans_errors():
    with pytest.raises(ValueError):
        dg.kmeans(np.eye(3), 4, seed=0)
    with pytest.raises(ValueError):
        dg.kmeans(np.eye(3), 0, seed=0)


def test_kmeans_handles_duplicate_points():
    X = np.array([[1.0, 0.0]] * 5 + [[0.0, 1.0]])
    res = dg.kmeans(X, 3, seed=1)
    assert len(set(res.labels.tolist())) == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 40), st.integers(1, 6), st.integers(0, 10_000))
def test_kmeans_monotone_deterministic_and_stable(n, k, seed):
    k = min(k, n)
    X = np.random.default_rng(seed).normal(size=(n, 6))
    a = dg.kmeans(X, k, seed=seed)
    b = dg.kmeans(X, k, seed=seed)
    assert np.array_equal(a.labels, b.labels)
    h = a.history
    scale = max(1.0, h[0])
    assert all(h[i + 1] <= h[i] + 1e-12 * scale for i in range(len(h) - 1))
    assert set(a.labels.tolist()) == set(range(k))


def test_silhouette_identical_points_far_apart():
    X = np.array([[1.0, 0.0]] * 3 + [[-1.0, 0.0]] * 3)
    assert dg.silhouette(X, [0, 0, 0, 1, 1, 1]) == pytest.approx(1.0)


def test_silhouette_singleton_contributes_zero():
    X = np.array([[1.0, 0.0], [0.99, 0.1], [0.0, 1.0]])
    s = dg.silhouette_samples(X, [0, 0, 1])
    assert s[2] == 0.0


def test_silhouette_single_cluster_error():
    with pytest.raises(ValueError):
        dg.silhouette(np.eye(3), [1, 1, 1])


def test_silhouette_twelve_points_k3_matches_oracle():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(12, 4))
    labels = dg.kmeans(X, 3, seed=0).labels
    assert dg.silhouette(X, labels) == pytest.approx(brute_silhouette(X, labels), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 50), st.integers(2, 5), st.integers(0, 10_000))
def test_silhouette_random_labels_match_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    labels = rng.integers(k, size=n)
    if len(set(labels.tolist())) < 2:
        labels[0], labels[1] = 0, 1
    got = dg.silhouette(X, labels)
    assert abs(got - brute_silhouette(X, labels)) <= 1e-9
    assert -1.0 <= got <= 1.0


def test_select_optimal_k_three_blobs():
    X, _ = blobs(3, 8, dim=16, seed=5)
    sel = dg.select_optimal_k(X, 2, 8, seed=0)
    assert sel.k == 3
    k, s = sel
    assert s == max(sel.scores.values())


def test_select_optimal_k_two_blobs():
    X, _ = blobs(2, 10, dim=8, seed=1)
    assert dg.select_optimal_k(X, 2, 5, seed=0).k == 2


def test_select_optimal_k_tie_prefers_smaller(monkeypatch):
    monkeypatch.setattr(dg, "silhouette", lambda X, labels: 0.5)
    X, _ = blobs(2, 5, dim=4, seed=0)
    assert dg.select_optimal_k(X, 2, 6, seed=0).k == 2


def test_select_optimal_k_errors():
    with pytest.raises(ValueError):
        dg.select_optimal_k(np.eye(2), seed=0)
    with pytest.raises(ValueError):
        dg.select_optimal_k(np.eye(5), 4, 3, seed=0)


def test_select_optimal_k_default_range():
    X, _ = blobs(2, 3, dim=4, seed=0)
    sel = dg.select_optimal_k(X, seed=0)
    assert max(sel.scores) <= len(X) - 1


def test_entropy_hand_values():
    assert dg.topic_entropy([i for i in range(20) for _ in range(4)], 20) == pytest.approx(1.0, abs=1e-12)
    assert dg.topic_entropy([7] * 9, 3) == 0.0
    assert dg.topic_entropy([0, 0, 0, 1], 2) == pytest.approx(0.81128, abs=5e-6)


def test_entropy_errors():
    with pytest.raises(ValueError):
        dg.topic_entropy([], 2)
    with pytest.raises(ValueError):
        dg.topic_entropy([0, 1, 2], 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=60), st.permutations(list(range(7))))
def test_entropy_relabeling_invariant(labels, perm):
    h = dg.topic_entropy(labels, 7)
    assert 0.0 <= h <= 1.0
    assert dg.topic_entropy([perm[x] for x in labels], 7) == pytest.approx(h, abs=1e-12)


def test_projection_planar_isometry():
    rng = np.random.default_rng(4)
    basis, _ = np.linalg.qr(rng.normal(size=(8, 2)))
    pts2 = rng.normal(size=(10, 2))
    X = pts2 @ basis.T + rng.normal(size=8)
    proj = dg.project_2d({f"p{i}": x for i, x in enumerate(X)})
    P = np.array(list(proj.values()))
    for i, j in itertools.combinations(range(10), 2):
        assert np.linalg.norm(P[i] - P[j]) == pytest.approx(np.linalg.norm(X[i] - X[j]), abs=1e-9)
    assert np.allclose(P.mean(axis=0), 0.0, atol=1e-12)


def test_projection_duplicates_and_determinism():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 6))
    vecs = {f"a{i}": x for i, x in enumerate(X)} | {f"b{i}": x for i, x in enumerate(X)}
    proj = dg.project_2d(vecs)
    for i in range(5):
        assert proj[f"a{i}"] == pytest.approx(proj[f"b{i}"])
    assert dg.project_2d(vecs) == proj


def test_projection_sign_convention():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(7, 4))
    ids = [str(i) for i in range(7)]
    Xc = X - X.mean(axis=0)
    P = np.array(list(dg.project_2d(dict(zip(ids, X))).values()))
    # each output axis is a principal direction whose largest loading is positive
    for axis in range(2):
        comp = np.linalg.lstsq(Xc, P[:, axis], rcond=None)[0]
        assert comp[np.argmax(np.abs(comp))] > 0


def test_projection_errors():
    with pytest.raises(ValueError):
        dg.project_2d({"a": [1.0, 2.0], "b": [1.0, 2.0]})
    with pytest.raises(ValueError):
        dg.project_2d({"a": [1.0, 2.0]})


def test_profile_three_orthogonal():
    vecs = {"x": [1.0, 0, 0], "y": [0, 1.0, 0], "z": [0, 0, 1.0]}
    p = dg.profile_benchmark(vecs, seed=0)
    assert p.avg_cosine_distance == pytest.approx(1.0)
    assert p.optimal_k == 2
    assert set(p.assignments) == set(vecs)
    assert all(0 <= c < p.optimal_k for c in p.assignments.values())


def test_profile_deterministic_and_field_order(tmp_path):
    X, _ = blobs(3, 6, dim=10, seed=2)
    vecs = {f"c{i:02d}": x for i, x in enumerate(X)}
    p1 = dg.profile_benchmark(vecs, seed=7, name="demo")
    p2 = dg.profile_benchmark(vecs, seed=7, name="demo")
    assert p1 == p2
    assert list(p1.metrics()) == ["avg_cosine_distance", "optimal_k", "silhouette", "topic_entropy"]
    assert len(p1.assignments) == p1.n_contexts == 18
    assert 0.0 <= p1.topic_entropy <= 1.0
    dg.save_profile(tmp_path / "p.json", p1)
    back = dg.load_profile(tmp_path / "p.json")
    assert back.metrics() == p1.metrics()
    assert back.assignments == p1.assignments
    csv_text = p1.projection_csv()
    lines = csv_text.splitlines()
    assert lines[0] == "id,x,y,cluster"
    assert len(lines) == 19


def test_profile_too_small():
    with pytest.raises(ValueError):
        dg.profile_benchmark({"a": [1.0, 0.0], "b": [0.0, 1.0]}, seed=0)


def test_compare_profiles_published_values():
    a = {"avg_cosine_distance": 0.2321, "optimal_k": 20, "silhouette": 0.1030, "topic_entropy": 0.9577}
    b = {"avg_cosine_distance": 0.2579, "optimal_k": 19, "silhouette": 0.0791, "topic_entropy": 0.9765}
    shown = [d.display(1) for d in dg.compare_profiles(a, b)]
    assert shown == ["+11.1%", "-5.0%", "-23.2%", "+2.0%"]


def test_compare_profiles_zero_reference():
    a = {"avg_cosine_distance": 0.0, "optimal_k": 2, "silhouette": 0.1, "topic_entropy": 0.5}
    diffs = dg.compare_profiles(a, a)
    assert diffs[0].percent is None and diffs[0].display() == "undefined"
    assert diffs[1].percent == 0.0
