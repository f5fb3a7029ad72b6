"""Noise-resilient local training.

Per round a client detects noisy samples with prototypes, optionally
relabels them, and then runs E epochs of mini-batch SGD on

    L_sum = L_mix + lambda_sim * L_sim

where ``L_mix`` is the mean soft cross-entropy of Mixup pairs built separately
for the detected-noisy (same-class partners) and detected-clean (random clean
partners) samples, and ``L_sim`` pulls detected-noisy embeddings towards the
prototype of their working label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .curriculum import (
    CurriculumState,
    PseudoLabelOutcome,
    compute_difficulty,
    pseudo_label,
    update_thresholds,
)
from .datagen import LabeledDataset
from .detector import NORM_EPS, DetectionResult, PrototypeSet, build_prototypes, detect_noise
from .model import ModelParams, Optimizer, backward, forward, sgd_step

CADENCES = ("round", "epoch")


@dataclass(frozen=True)
class LossSpec:
    lambda_sim: float = 0.7
    mixup_alpha: float = 1.0
    enable_denoise_mixup: bool = True
    enable_sim_loss: bool = True
    enable_curriculum: bool = True
    temperature: float = 1.0
    detection_cadence: str = "round"
    min_class_size: int = 2

    def __post_init__(self):
        if self.lambda_sim < 0:
            raise ValueError("lambda_sim must be >= 0")
        if not self.mixup_alpha > 0:
            raise ValueError("mixup_alpha must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.detection_cadence not in CADENCES:
            raise ValueError(f"detection_cadence must be one of {CADENCES}")


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 5
    batch_size: int = 100
    lr: float = 0.01
    momentum: float = 0.5


@dataclass
class MixedBatch:
    """One mini-batch split into the loss branches.

    ``x_noisy``/``y_noisy`` and ``x_clean``/``y_clean`` are (possibly mixed)
    inputs with soft labels; ``x_sim`` are raw detected-noisy inputs paired
    row-wise with the (constant) prototype in ``sim_targets``.
    """

    x_noisy: np.ndarray
    y_noisy: np.ndarray
    x_clean: np.ndarray
    y_clean: np.ndarray
    x_sim: np.ndarray
    sim_targets: np.ndarray
    ids: np.ndarray | None = None


@dataclass
class LocalTrainReport:
    updated_params: ModelParams
    data_size: int
    clean_count: int
    detection: DetectionResult | None = None
    curriculum: CurriculumState | None = None
    pseudo_outcome: PseudoLabelOutcome | None = None
    epoch_losses: list[float] = field(default_factory=list)
    warmup: bool = False
    input_labels: np.ndarray | None = None  # working labels the round started from


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def mixup_pair(a, b, lam: float):
    """Convex combination ``lam * a + (1 - lam) * b`` of (features, soft label) pairs."""
    (xa, ya), (xb, yb) = a, b
    xa, ya, xb, yb = (np.asarray(v, dtype=float) for v in (xa, ya, xb, yb))
    return lam * xa + (1.0 - lam) * xb, lam * ya + (1.0 - lam) * yb


def _cos_rows(f: np.ndarray, p: np.ndarray):
    fn = np.linalg.norm(f, axis=1)
    pn = np.linalg.norm(p, axis=1)
    ok = (fn >= NORM_EPS) & (pn >= NORM_EPS)
    cos = np.zeros(len(f))
    np.divide((f * p).sum(axis=1), fn * pn, out=cos, where=ok)
    return cos, fn, pn, ok


def loss_and_grad(params: ModelParams, batch: MixedBatch, lambda_sim: float):
    """Returns ``(total, mix_loss, sim_loss, grad)`` for one batch.

    Each non-empty branch contributes its own mean; empty branches contribute 0.
    """
    n1, n2, n3 = len(batch.x_noisy), len(batch.x_clean), len(batch.x_sim)
    if n1 + n2 + n3 == 0:
        raise ValueError("empty batch")
    x = np.concatenate([batch.x_noisy, batch.x_clean, batch.x_sim])
    cache = forward(params, x, ids=batch.ids)
    logp = np.log(np.clip(cache.probs, 1e-300, None))
    d_logits = np.zeros_like(cache.logits)
    mix = 0.0
    for lo, hi, y in ((0, n1, batch.y_noisy), (n1, n1 + n2, batch.y_clean)):
        m = hi - lo
        if m == 0:
            continue
        mix += float(-(y * logp[lo:hi]).sum() / m)
        d_logits[lo:hi] = (cache.probs[lo:hi] * y.sum(axis=1, keepdims=True) - y) / m

    sim = 0.0
    d_embed = None
    if n3 and lambda_sim != 0.0:
        f = cache.hidden[n1 + n2:]
        cos, fn, pn, ok = _cos_rows(f, batch.sim_targets)
        sim = float(np.mean(1.0 - cos))
        g = np.zeros_like(f)
        rows = np.flatnonzero(ok)
        if len(rows):
            fr, pr = f[rows], batch.sim_targets[rows]
            dcos = pr / (fn[rows] * pn[rows])[:, None] - cos[rows][:, None] * fr / (fn[rows] ** 2)[:, None]
            g[rows] = -lambda_sim * dcos / n3
        d_embed = np.zeros_like(cache.hidden)
        d_embed[n1 + n2:] = g
    elif n3:
        f = cache.hidden[n1 + n2:]
        sim = float(np.mean(1.0 - _cos_rows(f, batch.sim_targets)[0]))

    grad = backward(params, cache, d_logits, d_embed)
    return mix + lambda_sim * sim, mix, sim, grad


def batch_loss(params: ModelParams, batch: MixedBatch, lambda_sim: float) -> float:
    return loss_and_grad(params, batch, lambda_sim)[0]


def backward_loss(params: ModelParams, batch: MixedBatch, spec: LossSpec) -> ModelParams:
    """Gradient of the batch's summed loss under ``spec``."""
    lam = spec.lambda_sim if spec.enable_sim_loss else 0.0
    return loss_and_grad(params, batch, lam)[3]


def sim_loss(params: ModelParams, prototypes: PrototypeSet, x_noisy, labels) -> float:
    """Mean of ``1 - cos(prototype[label], embedding)`` over the given samples."""
    x_noisy = np.asarray(x_noisy, dtype=float)
    if len(x_noisy) == 0:
        return 0.0
    f = forward(params, x_noisy).hidden
    cos = _cos_rows(f, prototypes.prototypes[np.asarray(labels, dtype=int)])[0]
    return float(np.mean(1.0 - cos))


def _empty(d: int) -> np.ndarray:
    return np.empty((0, d))


def denoise_mixup_batch(
    batch_indices, detection: DetectionResult, working_labels, dataset: LabeledDataset,
    rng: np.random.Generator, mixup_alpha: float = 1.0,
) -> MixedBatch:
    """Mix detected-noisy samples with clean partners of their own working label
    (self-pair if that class has no clean sample) and clean samples with
    uniformly drawn clean partners. One Beta(alpha, alpha) weight per pair.

    The returned batch has empty similarity rows; callers add them.
    """
    idx = np.asarray(batch_indices, dtype=int)
    labels = np.asarray(working_labels, dtype=int)
    c_ = dataset.num_classes
    d = dataset.feature_dim
    noisy_mask = detection.noisy_mask()
    clean_all = np.asarray(detection.clean_indices, dtype=int)
    in_noisy = idx[noisy_mask[idx]]
    in_clean = idx[~noisy_mask[idx]]

    partners_noisy = np.empty(len(in_noisy), dtype=int)
    if len(in_noisy):
        clean_labels = labels[clean_all]
        for r, i in enumerate(in_noisy):
            pool = clean_all[clean_labels == labels[i]]
            partners_noisy[r] = pool[rng.integers(len(pool))] if len(pool) else i
    partners_clean = clean_all[rng.integers(len(clean_all), size=len(in_clean))] if len(in_clean) else np.empty(0, dtype=int)
    lams = rng.beta(mixup_alpha, mixup_alpha, size=len(in_noisy) + len(in_clean))

    y = one_hot(labels, c_)
    x = dataset.features
    ln, lc = lams[: len(in_noisy), None], lams[len(in_noisy):, None]
    if len(in_noisy):
        xn = ln * x[in_noisy] + (1 - ln) * x[partners_noisy]
        yn = ln * y[in_noisy] + (1 - ln) * y[partners_noisy]
    else:
        xn, yn = _empty(d), _empty(c_)
    if len(in_clean):
        xc = lc * x[in_clean] + (1 - lc) * x[partners_clean]
        yc = lc * y[in_clean] + (1 - lc) * y[partners_clean]
    else:
        xc, yc = _empty(d), _empty(c_)
    return MixedBatch(xn, yn, xc, yc, _empty(d), np.empty((0, 0)),
                      ids=np.concatenate([dataset.ids[in_noisy], dataset.ids[in_clean]]))


def plain_batch(batch_indices, labels, dataset: LabeledDataset) -> MixedBatch:
    idx = np.asarray(batch_indices, dtype=int)
    d, c_ = dataset.feature_dim, dataset.num_classes
    return MixedBatch(_empty(d), _empty(c_), dataset.features[idx],
                      one_hot(np.asarray(labels)[idx], c_), _empty(d), np.empty((0, 0)),
                      ids=dataset.ids[idx])


def _attach_sim(batch: MixedBatch, batch_indices, detection, labels, dataset, protos: PrototypeSet):
    idx = np.asarray(batch_indices, dtype=int)
    noisy = idx[detection.noisy_mask()[idx]]
    rows = noisy[protos.valid[np.asarray(labels)[noisy]]]
    batch.x_sim = dataset.features[rows]
    batch.sim_targets = protos.prototypes[np.asarray(labels)[rows]]
    if batch.ids is not None:
        batch.ids = np.concatenate([batch.ids, dataset.ids[rows]])
    return batch


StepHook = Callable[[int, int, ModelParams, MixedBatch, float], None]


def plain_train(
    params: ModelParams, dataset: LabeledDataset, labels, hyper: TrainHyper, seed: int,
    on_step: StepHook | None = None,
) -> tuple[ModelParams, list[float]]:
    """Mini-batch SGD on plain cross-entropy against ``labels``."""
    rng = np.random.default_rng(seed)
    opt = Optimizer.create(params, hyper.lr, hyper.momentum)
    n = len(dataset)
    losses = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        step_losses = []
        for b, start in enumerate(range(0, n, hyper.batch_size)):
            batch = plain_batch(order[start:start + hyper.batch_size], labels, dataset)
            loss, _, _, grad = loss_and_grad(params, batch, 0.0)
            if on_step is not None:
                on_step(epoch, b, params, batch, loss)
            params, opt = sgd_step(params, grad, opt)
            step_losses.append(loss)
        losses.append(float(np.mean(step_losses)))
    return params, losses


DetectFn = Callable[[ModelParams, LabeledDataset, np.ndarray], DetectionResult]


def _relabel(params, dataset, detection, state, labels, spec: LossSpec):
    protos = build_prototypes(params, dataset, labels)
    rho = compute_difficulty(params, dataset, detection, state, labels)
    state = update_thresholds(state, rho)
    outcome = pseudo_label(params, protos, dataset, detection, state, labels, spec.temperature)
    return state, outcome


def local_train(
    global_params: ModelParams,
    dataset: LabeledDataset,
    state: CurriculumState,
    spec: LossSpec,
    hyper: TrainHyper,
    seed: int,
    warmup: bool = False,
    detect_fn: DetectFn | None = None,
    on_step: StepHook | None = None,
    labels=None,
) -> LocalTrainReport:
    """One client's round of noise-resilient training.

    ``labels`` are the working labels carried over from the previous round
    (the given labels when omitted). Detection always runs on the received
    global model against them, so diagnostics exist even in warm-up. During
    warm-up the client trains with plain cross-entropy on those labels and
    leaves the thresholds untouched.
    """
    if detect_fn is None:
        def detect_fn(p, ds, lab):
            return detect_noise(p, ds, lab, spec.min_class_size)

    labels_in = np.asarray(dataset.given_labels if labels is None else labels, dtype=int).copy()
    if len(labels_in) != len(dataset):
        raise ValueError("labels must have one entry per sample")
    detection = detect_fn(global_params, dataset, labels_in)
    detection.check_partition()

    if warmup:
        params, losses = plain_train(global_params, dataset, labels_in, hyper, seed, on_step)
        return LocalTrainReport(params, len(dataset), len(detection.clean_indices), detection,
                                state, PseudoLabelOutcome.unchanged(labels_in), losses, warmup=True,
                                input_labels=labels_in)

    state = CurriculumState(state.tau_base, state.tau_per_class, state.rho_per_class, True)
    if spec.enable_curriculum:
        state, outcome = _relabel(global_params, dataset, detection, state, labels_in, spec)
    else:
        outcome = PseudoLabelOutcome.unchanged(labels_in)
    labels = outcome.working_labels

    rng = np.random.default_rng(seed)
    opt = Optimizer.create(global_params, hyper.lr, hyper.momentum)
    params = global_params
    n = len(dataset)
    losses = []
    lam = spec.lambda_sim if spec.enable_sim_loss else 0.0
    for epoch in range(hyper.epochs):
        if epoch > 0 and spec.detection_cadence == "epoch":
            detection = detect_fn(params, dataset, labels)
            detection.check_partition()
            if spec.enable_curriculum:
                state, outcome = _relabel(params, dataset, detection, state, labels, spec)
                labels = outcome.working_labels
        protos = build_prototypes(params, dataset, labels) if spec.enable_sim_loss else None
        order = rng.permutation(n)
        step_losses = []
        for b, start in enumerate(range(0, n, hyper.batch_size)):
            chunk = order[start:start + hyper.batch_size]
            if spec.enable_denoise_mixup:
                batch = denoise_mixup_batch(chunk, detection, labels, dataset, rng, spec.mixup_alpha)
            else:
                batch = plain_batch(chunk, labels, dataset)
            if spec.enable_sim_loss:
                batch = _attach_sim(batch, chunk, detection, labels, dataset, protos)
            loss, _, _, grad = loss_and_grad(params, batch, lam)
            if on_step is not None:
                on_step(epoch, b, params, batch, loss)
            params, opt = sgd_step(params, grad, opt)
            step_losses.append(loss)
        losses.append(float(np.mean(step_losses)))

    return LocalTrainReport(params, n, len(detection.clean_indices), detection, state,
                            outcome, losses, warmup=False, input_labels=labels_in)
