import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedcni.datagen import (
    ClientDataset,
    build_federation,
    corrupt_labels,
    dirichlet_partition,
    federation_from_json,
    federation_to_json,
    generate_blobs,
    load_snapshot,
    sample_noise_levels,
    save_snapshot,
)
from fedcni.errors import ConfigError, PartitionError


def _client(n=100, num_classes=10, seed=0, client_id=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(num_classes, size=n)
    return ClientDataset(rng.standard_normal((n, 4)), y.copy(), y, np.arange(n), num_classes,
                         client_id=client_id)


class TestBlobs:
    def test_split_sizes_and_ids(self):
        train, test = generate_blobs(3, 5, [10, 20, 7], 0.3, seed=1)
        # 20% of each class rounded half up: 2, 4, 1
        assert len(test) == 7 and len(train) == 30
        assert np.array_equal(np.bincount(test.true_labels), [2, 4, 1])
        assert set(train.ids).isdisjoint(test.ids)
        assert np.array_equal(train.given_labels, train.true_labels)

    def test_centers_are_scaled_corners(self):
        train, _ = generate_blobs(4, 6, [400] * 4, 0.01, seed=0, center_scale=2.0)
        for c in range(4):
            mean = train.features[train.true_labels == c].mean(axis=0)
            expect = np.zeros(6)
            expect[c] = 2.0
            assert np.allclose(mean, expect, atol=0.01)

    @pytest.mark.parametrize("kwargs", [
        dict(num_classes=1), dict(samples_per_class=[1, 5]), dict(cluster_spread=0.0),
        dict(feature_dim=1),
    ])
    def test_invalid_counts_rejected(self, kwargs):
        args = dict(num_classes=2, feature_dim=3, samples_per_class=[5, 5], cluster_spread=0.1, seed=0)
        args.update(kwargs)
        if "num_classes" in kwargs:
            args["samples_per_class"] = [5] * kwargs["num_classes"]
        with pytest.raises(ConfigError):
            generate_blobs(**args)


class TestDirichletPartition:
    def test_single_client_gets_everything(self):
        labels = np.repeat(np.arange(3), 10)
        (only,) = dirichlet_partition(labels, 1, 0.5, seed=0)
        assert np.array_equal(only, np.arange(30))

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(1, 12), alpha=st.floats(0.05, 10.0), seed=st.integers(0, 10_000))
    def test_exact_disjoint_partition(self, k, alpha, seed):
        labels = np.repeat(np.arange(5), 30)
        parts = dirichlet_partition(labels, k, alpha, seed)
        assert len(parts) == k
        assert all(len(p) >= 1 for p in parts)
        assert np.array_equal(np.sort(np.concatenate(parts)), np.arange(len(labels)))

    def test_large_alpha_is_near_even(self):
        labels = np.repeat(np.arange(2), 1000)
        for seed in range(10):
            parts = dirichlet_partition(labels, 2, 1e6, seed)
            for p in parts:
                counts = np.bincount(labels[p], minlength=2)
                assert np.all(np.abs(counts - 500) <= 25)

    def test_exhausted_retries_name_empty_client(self):
        labels = np.zeros(3, dtype=int)
        with pytest.raises(PartitionError, match=r"client \d+"):
            dirichlet_partition(labels, 3, 1e-3, seed=0, max_retries=0)


class TestNoiseLevels:
    def test_truncated_normal_mean(self):
        levels = sample_noise_levels(20000, 0.4, 0.2, seed=3)
        assert all(0.0 <= v <= 1.0 for v in levels)
        oracle = stats.truncnorm((0 - 0.4) / 0.2, (1 - 0.4) / 0.2, loc=0.4, scale=0.2).mean()
        assert abs(np.mean(levels) - oracle) < 0.005

    @pytest.mark.parametrize("mu", [-1.0, 2.0, -3.0, 5.0])
    def test_out_of_range_mu_rejected(self, mu):
        with pytest.raises(ConfigError):
            sample_noise_levels(3, mu, 0.2, seed=0)

    def test_deterministic(self):
        assert sample_noise_levels(5, 0.4, 0.2, 9) == sample_noise_levels(5, 0.4, 0.2, 9)


class TestCorruptLabels:
    @pytest.mark.parametrize("noise_type", ["symmetric", "pair"])
    def test_exact_flip_count(self, noise_type):
        client = _client(n=101)
        out = corrupt_labels(client, 0.37, noise_type, seed=4)
        assert out.is_noisy.sum() == 37  # round(37.37)
        assert np.array_equal(out.true_labels, client.true_labels)
        assert out.noise_level == pytest.approx(37 / 101)

    def test_pair_maps_to_next_class(self):
        out = corrupt_labels(_client(n=200), 0.5, "pair", seed=0)
        flipped = out.is_noisy
        assert np.array_equal(out.given_labels[flipped], (out.true_labels[flipped] + 1) % 10)

    def test_symmetric_uniform_over_other_classes(self):
        client = _client(n=20000, num_classes=5)
        out = corrupt_labels(client, 1.0, "symmetric", seed=0)
        offsets = (out.given_labels - out.true_labels) % 5
        assert offsets.min() >= 1
        freq = np.bincount(offsets, minlength=5)[1:] / len(offsets)
        assert np.allclose(freq, 0.25, atol=0.02)

    def test_zero_and_full_noise(self):
        client = _client()
        assert corrupt_labels(client, 0.0, "symmetric", 0).is_noisy.sum() == 0
        assert corrupt_labels(client, 1.0, "symmetric", 0).is_noisy.all()

    def test_unknown_type_rejected(self):
        with pytest.raises(ConfigError):
            corrupt_labels(_client(), 0.2, "asymmetric", 0)


def _small_federation(seed=0):
    return build_federation(3, 4, [20, 20, 20], 0.2, 4, 1.0, "symmetric", 0.4, 0.2, seed)


def test_federation_is_pure_function_of_seed():
    a, b = _small_federation(5), _small_federation(5)
    for ca, cb in zip(a.clients, b.clients):
        assert np.array_equal(ca.features, cb.features)
        assert np.array_equal(ca.given_labels, cb.given_labels)
    assert len({int(i) for c in a.clients for i in c.ids}) == a.total_samples == 48


def test_snapshot_round_trip(tmp_path):
    data = _small_federation()
    path = tmp_path / "federation.json"
    save_snapshot(data, path)
    back = load_snapshot(path)
    for ca, cb in zip(data.clients, back.clients):
        assert np.array_equal(ca.features, cb.features)
        assert np.array_equal(ca.given_labels, cb.given_labels)
        assert np.array_equal(ca.true_labels, cb.true_labels)
        assert np.array_equal(ca.ids, cb.ids)
    doc = federation_to_json(data)
    assert set(doc["clients"][0]["samples"][0]) == {"id", "features", "given_label", "true_label"}
    assert federation_from_json(doc).num_classes == 3
