from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcni.datagen import ClientDataset, corrupt_labels
from fedcni.detector import (
    build_prototypes,
    cosine_matrix,
    cosine_similarity,
    detect_from_embeddings,
    detection_metrics,
    small_loss_detect,
)
from fedcni.model import embed, init_params
from fedcni.scenarios import compare_detectors, imbalanced_client


def _client(n=200, c=5, d=6, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    y = rng.integers(c, size=n)
    x = rng.standard_normal((n, d))
    client = ClientDataset(x, y.copy(), y, np.arange(n), c, client_id=0)
    return corrupt_labels(client, noise, "symmetric", seed) if noise else client


def _separable(n_per=100, c=5, noise=0.4, spread=0.05, seed=0):
    """Embeddings built directly from class corners plus small noise."""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(c), n_per)
    client = corrupt_labels(
        ClientDataset(np.zeros((len(y), 1)), y.copy(), y, np.arange(len(y)), c), noise, "symmetric", seed
    )
    emb = np.eye(c)[y] + spread * np.abs(rng.standard_normal((len(y), c)))
    return client, emb


def test_prototypes_match_per_class_mean_oracle():
    client = _client(noise=0.3)
    params = init_params(6, 8, 5, np.random.default_rng(1))
    protos = build_prototypes(params, client, client.given_labels)
    emb = embed(params, client.features)
    for c in range(5):
        members = [i for i in range(len(client)) if client.given_labels[i] == c]
        oracle = sum(emb[i] for i in members) / len(members)
        assert np.allclose(protos.prototypes[c], oracle, atol=1e-12)
        assert protos.counts[c] == len(members)


def test_absent_class_has_invalid_prototype():
    client = _client(c=4)
    labels = np.where(client.given_labels == 3, 0, client.given_labels)
    protos = build_prototypes(init_params(6, 3, 4, np.random.default_rng(0)), client, labels)
    assert not protos.valid[3] and np.all(protos.prototypes[3] == 0)


def test_cosine_zero_norm_convention():
    assert cosine_similarity([0, 0], [1, 2]) == 0.0
    assert cosine_similarity([1, 0], [2, 0]) == pytest.approx(1.0)
    m = cosine_matrix(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert m[0, 0] == 0.0 and m[1, 0] == pytest.approx(np.sqrt(0.5))


def test_separable_forty_percent_noise_detected():
    client, emb = _separable()
    result, _ = detect_from_embeddings(emb, client.given_labels, 5)
    precision, recall = detection_metrics(result, client)
    assert precision >= 0.8 and recall >= 0.8


def test_clean_separable_client_flags_little():
    client, emb = _separable(noise=0.0)
    result, _ = detect_from_embeddings(emb, client.given_labels, 5)
    assert len(result.noisy_indices) / len(client) <= 0.1


def test_small_classes_declared_clean():
    client, emb = _separable(n_per=4, noise=0.5)
    result, _ = detect_from_embeddings(emb, client.given_labels, 5, min_class_size=10)
    assert len(result.noisy_indices) == 0


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_scale_invariance(scale, seed):
    client, emb = _separable(n_per=30, seed=seed, spread=0.3)
    a, _ = detect_from_embeddings(emb, client.given_labels, 5)
    b, _ = detect_from_embeddings(emb * scale, client.given_labels, 5)
    assert np.array_equal(a.noisy_indices, b.noisy_indices)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), noise=st.floats(0.0, 1.0))
def test_partition_invariant(seed, noise):
    client = _client(n=60, seed=seed, noise=noise)
    params = init_params(6, 8, 5, np.random.default_rng(seed))
    emb = embed(params, client.features)
    result, _ = detect_from_embeddings(emb, client.given_labels, 5)
    result.check_partition()
    small = small_loss_detect(params, client, client.given_labels)
    small.check_partition()


def test_detection_metrics_oracle():
    client = _client(n=10, noise=0.5)
    noisy = np.flatnonzero(client.is_noisy)
    flagged = np.array(sorted(set(noisy[:3]) | {int(np.flatnonzero(~client.is_noisy)[0])}))
    result, _ = detect_from_embeddings(np.ones((10, 2)), client.given_labels, 5)
    fake = replace(result, noisy_indices=flagged,
                   clean_indices=np.setdiff1d(np.arange(10), flagged))
    p, r = detection_metrics(fake, client)
    assert p == pytest.approx(3 / 4) and r == pytest.approx(3 / len(noisy))
    # nothing flagged and nothing noisy: both rates are defined as 1
    clean = _client(n=10)
    assert detection_metrics(replace(fake, noisy_indices=np.empty(0, int),
                                     clean_indices=np.arange(10)), clean) == (1.0, 1.0)


def test_metrics_against_working_labels():
    client = _client(n=50, noise=0.4)
    fixed = client.true_labels.copy()
    result, _ = detect_from_embeddings(np.ones((50, 2)), fixed, 5)
    # every label corrected: no actual positives left
    assert detection_metrics(result, client, labels=fixed)[1] == 1.0


def test_imbalanced_scenario_minority_recall_gap():
    cmp_ = compare_detectors(imbalanced_client())
    assert cmp_.recall["small_loss"]["majority"] >= 0.9
    assert cmp_.minority_recall_gap >= 0.2


def test_tiny_minority_variant():
    # 5 clean + 3 noisy minority samples, all with moderate loss
    sc = imbalanced_client(majority_size=100, minority_size=8, noise_rate=3 / 8)
    cmp_ = compare_detectors(sc)
    assert cmp_.recall["prototypical"]["minority"] > cmp_.recall["small_loss"]["minority"]
