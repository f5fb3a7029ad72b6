"""Synthetic federated datasets with per-client label noise.

Data is kept as struct-of-arrays: a :class:`LabeledDataset` holds a feature
matrix plus given labels, ground-truth labels and global sample ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, PartitionError
from .rng import derive_rng

TEST_FRACTION = 0.2
NOISE_TYPES = ("symmetric", "pair")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (n, d)
    given_labels: np.ndarray  # (n,) int
    true_labels: np.ndarray  # (n,) int
    ids: np.ndarray  # (n,) int, globally unique
    num_classes: int

    def __post_init__(self):
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ConfigError("features must be an (n, d) matrix aligned with ids")
        if len(self.given_labels) != n or len(self.true_labels) != n:
            raise ConfigError("label arrays must align with ids")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features must be finite")
        for labels in (self.given_labels, self.true_labels):
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ConfigError("labels must lie in 0..num_classes-1")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_noisy(self) -> np.ndarray:
        return self.given_labels != self.true_labels

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(
            self.features[idx],
            self.given_labels[idx],
            self.true_labels[idx],
            self.ids[idx],
            self.num_classes,
        )


@dataclass(frozen=True)
class ClientDataset(LabeledDataset):
    client_id: int = 0
    noise_level: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if len(self.ids) < 1:
            raise ConfigError(f"client {self.client_id} holds no samples")


@dataclass(frozen=True)
class FederationData:
    clients: list[ClientDataset]
    test_set: LabeledDataset
    num_classes: int
    feature_dim: int
    noise_levels: list[float] = field(default_factory=list)

    @property
    def total_samples(self) -> int:
        return sum(len(c) for c in self.clients)


def class_centers(num_classes: int, feature_dim: int, scale: float = 1.0) -> np.ndarray:
    """Scaled one-hot corners: class c sits at ``scale * e_c``."""
    if feature_dim < num_classes:
        raise ConfigError("feature_dim must be >= num_classes for one-hot class centers")
    centers = np.zeros((num_classes, feature_dim))
    centers[np.arange(num_classes), np.arange(num_classes)] = scale
    return centers


def generate_blobs(
    num_classes: int,
    feature_dim: int,
    samples_per_class: Sequence[int],
    cluster_spread: float,
    seed: int,
    center_scale: float = 1.0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Isotropic Gaussian blobs, 20% of each class held out for testing.

    Returns ``(train, test)``; train ids are ``0..N-1`` and test ids follow.
    """
    counts = [int(n) for n in samples_per_class]
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if len(counts) != num_classes:
        raise ConfigError("samples_per_class needs one entry per class")
    if any(n < 2 for n in counts):
        raise ConfigError("every class needs at least 2 samples")
    if not cluster_spread > 0:
        raise ConfigError("cluster_spread must be positive")
    if not center_scale > 0:
        raise ConfigError("center_scale must be positive")

    rng = derive_rng(seed, "blobs")
    centers = class_centers(num_classes, feature_dim, center_scale)
    train_x, train_y, test_x, test_y = [], [], [], []
    for c, n in enumerate(counts):
        x = centers[c] + cluster_spread * rng.standard_normal((n, feature_dim))
        n_test = round_half_up(TEST_FRACTION * n)
        order = rng.permutation(n)
        test_x.append(x[order[:n_test]])
        train_x.append(x[order[n_test:]])
        test_y.append(np.full(n_test, c))
        train_y.append(np.full(n - n_test, c))

    xtr, ytr = np.concatenate(train_x), np.concatenate(train_y).astype(int)
    xte, yte = np.concatenate(test_x), np.concatenate(test_y).astype(int)
    train = LabeledDataset(xtr, ytr.copy(), ytr, np.arange(len(ytr)), num_classes)
    test = LabeledDataset(
        xte, yte.copy(), yte, np.arange(len(ytr), len(ytr) + len(yte)), num_classes
    )
    return train, test


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short > 0:
        # stable sort keeps ties deterministic (lowest client index first)
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(
    labels: np.ndarray, num_clients: int, alpha: float, seed: int, max_retries: int = 100
) -> list[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet proportions.

    Every client is guaranteed at least one sample; allocations are redrawn
    (fresh sub-seed per attempt) up to ``max_retries`` times.
    """
    labels = np.asarray(labels)
    if num_clients < 1:
        raise ConfigError("num_clients must be >= 1")
    if not alpha > 0:
        raise ConfigError("dirichlet alpha must be positive")
    if len(labels) < num_clients:
        raise ConfigError("need at least one sample per client")

    classes = np.unique(labels)
    empty = None
    for attempt in range(max_retries + 1):
        rng = derive_rng(seed, "partition", attempt)
        parts: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            props = rng.dirichlet(np.full(num_clients, alpha))
            counts = _largest_remainder(props, len(idx))
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(num_clients):
                parts[k].append(idx[bounds[k] : bounds[k + 1]])
        result = [np.sort(np.concatenate(p)).astype(int) for p in parts]
        sizes = np.array([len(r) for r in result])
        if sizes.min() >= 1:
            return result
        empty = int(np.argmin(sizes))
    raise PartitionError(
        f"client {empty} received no samples after {max_retries} Dirichlet redraws"
    )


def sample_noise_levels(num_clients: int, mu: float, sigma: float, seed: int) -> list[float]:
    """Per-client noise rates from Normal(mu, sigma^2) truncated to [0, 1]."""
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    if not -1.0 < mu < 2.0:
        raise ConfigError(f"mu={mu} not inside (-1, 2); rejection sampling would stall")
    rng = derive_rng(seed, "noise-levels")
    levels = []
    while len(levels) < num_clients:
        x = rng.normal(mu, sigma)
        if 0.0 <= x <= 1.0:
            levels.append(float(x))
    return levels


def corrupt_labels(
    client: ClientDataset, noise_level: float, noise_type: str, seed: int
) -> ClientDataset:
    """Flip exactly ``round(noise_level * n)`` labels, chosen without replacement.

    Flips start from the ground truth; ``true_labels`` and features are shared
    untouched with the input.
    """
    if not 0.0 <= noise_level <= 1.0:
        raise ConfigError("noise_level must lie in [0, 1]")
    if noise_type not in NOISE_TYPES:
        raise ConfigError(f"unknown noise type {noise_type!r}")
    n, num_classes = len(client), client.num_classes
    rng = derive_rng(seed, "corrupt", client.client_id)
    m = round_half_up(noise_level * n)
    chosen = rng.choice(n, size=m, replace=False)
    given = client.true_labels.copy()
    if noise_type == "symmetric":
        offsets = rng.integers(1, num_classes, size=m)
        given[chosen] = (client.true_labels[chosen] + offsets) % num_classes
    else:
        given[chosen] = (client.true_labels[chosen] + 1) % num_classes
    return replace(client, given_labels=given, noise_level=m / n)


def build_federation(
    num_classes: int,
    feature_dim: int,
    samples_per_class: Sequence[int],
    cluster_spread: float,
    num_clients: int,
    dirichlet_alpha: float,
    noise_type: str,
    noise_mu: float,
    noise_sigma: float,
    seed: int,
    center_scale: float = 1.0,
) -> FederationData:
    """Full generation pipeline; a pure function of its arguments."""
    train, test = generate_blobs(
        num_classes, feature_dim, samples_per_class, cluster_spread, seed, center_scale
    )
    parts = dirichlet_partition(train.true_labels, num_clients, dirichlet_alpha, seed)
    levels = sample_noise_levels(num_clients, noise_mu, noise_sigma, seed)
    clients = []
    for k, idx in enumerate(parts):
        sub = train.subset(idx)
        client = ClientDataset(
            sub.features, sub.given_labels, sub.true_labels, sub.ids, num_classes,
            client_id=k, noise_level=0.0,
        )
        clients.append(corrupt_labels(client, levels[k], noise_type, seed))
    return FederationData(clients, test, num_classes, feature_dim, levels)


# -- JSON snapshots -----------------------------------------------------------

def _samples_json(ds: LabeledDataset) -> list[dict]:
    return [
        {
            "id": int(ds.ids[i]),
            "features": [float(v) for v in ds.features[i]],
            "given_label": int(ds.given_labels[i]),
            "true_label": int(ds.true_labels[i]),
        }
        for i in range(len(ds))
    ]


def federation_to_json(data: FederationData) -> dict:
    return {
        "num_classes": data.num_classes,
        "feature_dim": data.feature_dim,
        "clients": [
            {"client_id": c.client_id, "noise_level": c.noise_level, "samples": _samples_json(c)}
            for c in data.clients
        ],
        "test_set": _samples_json(data.test_set),
    }


def _arrays(samples: list[dict], feature_dim: int):
    x = np.array([s["features"] for s in samples], dtype=float).reshape(-1, feature_dim)
    given = np.array([s["given_label"] for s in samples], dtype=int)
    true = np.array([s["true_label"] for s in samples], dtype=int)
    ids = np.array([s["id"] for s in samples], dtype=int)
    return x, given, true, ids


def federation_from_json(doc: dict) -> FederationData:
    c_, d = int(doc["num_classes"]), int(doc["feature_dim"])
    clients = []
    for entry in doc["clients"]:
        x, given, true, ids = _arrays(entry["samples"], d)
        clients.append(
            ClientDataset(x, given, true, ids, c_, client_id=int(entry["client_id"]),
                          noise_level=float(entry["noise_level"]))
        )
    x, given, true, ids = _arrays(doc["test_set"], d)
    test = LabeledDataset(x, given, true, ids, c_)
    return FederationData(clients, test, c_, d, [c.noise_level for c in clients])


def save_snapshot(data: FederationData, path) -> None:
    Path(path).write_text(json.dumps(federation_to_json(data)))


def load_snapshot(path) -> FederationData:
    return federation_from_json(json.loads(Path(path).read_text()))
