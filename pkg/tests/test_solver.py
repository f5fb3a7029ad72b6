import numpy as np
import pytest

from fedcni.curriculum import CurriculumState
from fedcni.datagen import ClientDataset, corrupt_labels
from fedcni.detector import DetectionResult, build_prototypes
from fedcni.model import ModelParams, embed, init_params, predict
from fedcni.solver import (
    LossSpec,
    MixedBatch,
    TrainHyper,
    batch_loss,
    denoise_mixup_batch,
    local_train,
    loss_and_grad,
    mixup_pair,
    one_hot,
    plain_train,
    sim_loss,
)


def _client(n=120, c=4, d=6, seed=0, noise=0.3):
    rng = np.random.default_rng(seed)
    y = rng.integers(c, size=n)
    x = np.eye(d)[y] * 2 + 0.3 * rng.standard_normal((n, d))
    return corrupt_labels(ClientDataset(x, y.copy(), y, np.arange(n), c), noise, "symmetric", seed)


def _detection(n, noisy):
    noisy = np.asarray(sorted(noisy), dtype=int)
    return DetectionResult(np.setdiff1d(np.arange(n), noisy), noisy, np.zeros(n))


def test_mixup_pair_oracle():
    x, y = mixup_pair(([1.0, 2.0], [1.0, 0.0]), ([3.0, 6.0], [0.0, 1.0]), 0.25)
    assert np.allclose(x, [2.5, 5.0]) and np.allclose(y, [0.25, 0.75])


def test_denoise_mixup_partner_rules():
    client = _client()
    n = len(client)
    det = _detection(n, np.flatnonzero(client.is_noisy))
    labels = client.given_labels
    batch = denoise_mixup_batch(np.arange(n), det, labels, client, np.random.default_rng(0))
    # replay the same draws: noisy partners first, then clean partners, then weights
    rng = np.random.default_rng(0)
    clean, noisy = det.clean_indices, det.noisy_indices
    noisy_partners = []
    for i in noisy:
        pool = clean[labels[clean] == labels[i]]
        noisy_partners.append(pool[rng.integers(len(pool))] if len(pool) else i)
    noisy_partners = np.array(noisy_partners)
    clean_partners = clean[rng.integers(len(clean), size=len(clean))]
    lams = rng.beta(1.0, 1.0, size=n)[:, None]
    ln, lc = lams[: len(noisy)], lams[len(noisy):]
    x = client.features
    assert np.array_equal(labels[noisy_partners], labels[noisy])
    assert np.allclose(batch.x_noisy, ln * x[noisy] + (1 - ln) * x[noisy_partners])
    # same-label partners leave the noisy branch's soft label one-hot
    assert np.allclose(batch.y_noisy, one_hot(labels[noisy], 4))
    assert np.allclose(batch.x_clean, lc * x[clean] + (1 - lc) * x[clean_partners])
    assert np.all((0 <= lams) & (lams <= 1))


def test_noisy_sample_without_clean_partner_pairs_with_itself():
    client = _client(n=10, noise=0.0)
    labels = client.given_labels.copy()
    lone = int(np.flatnonzero(labels == labels[0])[0])
    mates = np.flatnonzero(labels == labels[lone])
    det = _detection(len(client), mates)  # every member of that class is noisy
    batch = denoise_mixup_batch(mates, det, labels, client, np.random.default_rng(1))
    assert np.allclose(batch.x_noisy, client.features[mates])


def test_branch_means_add_up():
    rng = np.random.default_rng(0)
    params = init_params(3, 5, 2, rng)
    xa, xb, xs = rng.standard_normal((4, 3)), rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
    ya, yb = one_hot([0, 1, 1, 0], 2), one_hot([1, 1], 2)
    targets = np.abs(rng.standard_normal((3, 5)))
    total, mix, sim, _ = loss_and_grad(params, MixedBatch(xa, ya, xb, yb, xs, targets), 0.7)

    def ce(x, y):
        return float(np.mean(-(y * np.log(predict(params, x))).sum(axis=1)))

    emb = embed(params, xs)
    norms = np.linalg.norm(emb, axis=1) * np.linalg.norm(targets, axis=1)
    # a dead embedding row has similarity 0 by convention
    cos = np.divide((emb * targets).sum(1), norms, out=np.zeros(3), where=norms > 0)
    assert mix == pytest.approx(ce(xa, ya) + ce(xb, yb))
    assert sim == pytest.approx(float(np.mean(1 - cos)))
    assert total == pytest.approx(mix + 0.7 * sim)


def test_sim_loss_is_zero_at_prototype():
    client = _client(noise=0.0)
    params = init_params(6, 8, 4, np.random.default_rng(0))
    protos = build_prototypes(params, client, client.given_labels)
    # a sample identical to its class mean embedding has similarity 1
    x = client.features[:1]
    labels = np.array([client.given_labels[0]])
    direct = sim_loss(params, protos, x, labels)
    emb = embed(params, x)[0]
    p = protos.prototypes[labels[0]]
    assert direct == pytest.approx(1 - emb @ p / np.linalg.norm(emb) / np.linalg.norm(p))
    assert sim_loss(params, protos, x[:0], labels[:0]) == 0.0


def test_empty_batch_rejected():
    params = init_params(2, 2, 2, np.random.default_rng(0))
    e = np.empty((0, 2))
    with pytest.raises(ValueError):
        batch_loss(params, MixedBatch(e, e, e, e, e, e), 0.7)


def test_plain_train_reduces_loss():
    client = _client(noise=0.0)
    params = init_params(6, 16, 4, np.random.default_rng(0))
    _, losses = plain_train(params, client, client.given_labels, TrainHyper(epochs=20, lr=0.1), seed=0)
    assert losses[-1] < losses[0]


def _trained(client, seed=0):
    params = init_params(6, 16, 4, np.random.default_rng(seed))
    return plain_train(params, client, client.given_labels, TrainHyper(epochs=30, lr=0.1), seed)[0]


def test_local_train_warmup_and_determinism():
    client = _client()
    params = _trained(client)
    state = CurriculumState.initial(4, 0.5)
    spec, hyper = LossSpec(temperature=0.05), TrainHyper(epochs=2, batch_size=32)
    warm = local_train(params, client, state, spec, hyper, seed=3, warmup=True)
    assert warm.warmup and len(warm.pseudo_outcome.changed) == 0
    assert np.array_equal(warm.curriculum.tau_per_class, state.tau_per_class)
    a = local_train(params, client, state, spec, hyper, seed=3)
    b = local_train(params, client, state, spec, hyper, seed=3)
    assert np.array_equal(a.updated_params.to_vector(), b.updated_params.to_vector())
    assert a.clean_count == len(a.detection.clean_indices)
    assert a.data_size == len(client) and len(a.epoch_losses) == 2


def test_ablation_flags_change_training():
    client = _client()
    params = _trained(client)
    state = CurriculumState.initial(4, 0.5)
    hyper = TrainHyper(epochs=1, batch_size=32)
    full = local_train(params, client, state, LossSpec(temperature=0.05), hyper, seed=0)
    off = local_train(params, client, state, LossSpec(enable_curriculum=False), hyper, seed=0)
    assert len(off.pseudo_outcome.changed) == 0
    assert np.array_equal(off.curriculum.tau_per_class, state.tau_per_class)
    no_mix = local_train(params, client, state, LossSpec(enable_denoise_mixup=False, enable_sim_loss=False,
                                                           enable_curriculum=False), hyper, seed=0)
    plain, _ = plain_train(params, client, client.given_labels, hyper, seed=0)
    assert np.allclose(no_mix.updated_params.to_vector(), plain.to_vector())
    assert not np.allclose(full.updated_params.to_vector(), plain.to_vector())


def test_epoch_cadence_reruns_detection():
    client = _client()
    params = _trained(client)
    calls = []

    def spy(p, ds, labels):
        from fedcni.detector import detect_noise
        calls.append(1)
        return detect_noise(p, ds, labels)

    hyper = TrainHyper(epochs=3, batch_size=32)
    local_train(params, client, CurriculumState.initial(4, 0.5), LossSpec(detection_cadence="epoch"),
                hyper, 0, detect_fn=spy)
    assert len(calls) == 3
    calls.clear()
    local_train(params, client, CurriculumState.initial(4, 0.5), LossSpec(), hyper, 0, detect_fn=spy)
    assert len(calls) == 1


def test_starting_labels_drive_detection():
    client = _client()
    params = _trained(client)
    fixed = client.true_labels
    rep = local_train(params, client, CurriculumState.initial(4, 0.5), LossSpec(), TrainHyper(epochs=1),
                      0, labels=fixed)
    assert np.array_equal(rep.input_labels, fixed)


def test_non_finite_params_surface_sample_id():
    from fedcni.errors import NumericError
    client = _client()
    p = init_params(6, 8, 4, np.random.default_rng(0))
    bad = ModelParams(p.W1 * np.inf, p.b1, p.W2, p.b2)
    with pytest.raises(NumericError) as err:
        plain_train(bad, client, client.given_labels, TrainHyper(epochs=1), 0)
    assert err.value.sample_id is not None
