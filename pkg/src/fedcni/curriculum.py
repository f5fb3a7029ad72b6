"""Curriculum pseudo labeling with per-class dynamic thresholds."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datagen import LabeledDataset
from .detector import DetectionResult, PrototypeSet, cosine_matrix
from .model import ModelParams, embed, predict, softmax


@dataclass(frozen=True)
class CurriculumState:
    tau_base: float
    tau_per_class: np.ndarray
    rho_per_class: np.ndarray
    warmup_done: bool = False

    @classmethod
    def initial(cls, num_classes: int, tau: float) -> "CurriculumState":
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        return cls(tau, np.full(num_classes, tau), np.zeros(num_classes))


@dataclass(frozen=True)
class PseudoLabelOutcome:
    working_labels: np.ndarray
    changed: np.ndarray  # sample indices whose label was replaced
    pseudo_labels: np.ndarray  # argmax class per detected-noisy sample (-1 if none)
    confidences: np.ndarray  # softmax confidence per detected-noisy sample
    noisy_indices: np.ndarray

    @classmethod
    def unchanged(cls, labels) -> "PseudoLabelOutcome":
        empty = np.empty(0, dtype=int)
        return cls(np.asarray(labels, dtype=int).copy(), empty, empty, np.empty(0), empty)


def difficulty_from_predictions(probs: np.ndarray, labels, detection: DetectionResult,
                                tau_per_class: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    num_classes = len(tau_per_class)
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    clean = np.zeros(len(labels), dtype=bool)
    clean[detection.clean_indices] = True
    hit = clean & (pred == labels) & (conf > tau_per_class[labels])
    numer = np.bincount(labels[hit], minlength=num_classes).astype(float)
    denom = np.bincount(labels, minlength=num_classes).astype(float)
    return np.divide(numer, denom, out=np.zeros(num_classes), where=denom > 0)


def compute_difficulty(
    params: ModelParams, dataset: LabeledDataset, detection: DetectionResult,
    state: CurriculumState, labels,
) -> np.ndarray:
    """Fraction of each class's samples that are detected-clean, predicted as
    that class, and predicted with confidence above the class threshold.

    The denominator is the full class size under ``labels``, clean or not.
    """
    probs = predict(params, dataset.features)
    return difficulty_from_predictions(probs, labels, detection, state.tau_per_class)


def update_thresholds(state: CurriculumState, rho=None) -> CurriculumState:
    rho = state.rho_per_class if rho is None else np.asarray(rho, dtype=float)
    top = rho.max() if rho.size else 0.0
    if top <= 0.0:
        tau = np.full(len(rho), state.tau_base)
    else:
        tau = rho / top * state.tau_base
    return replace(state, rho_per_class=rho.copy(), tau_per_class=tau)


def pseudo_label_from_embeddings(
    emb: np.ndarray, prototypes: PrototypeSet, labels, detection: DetectionResult,
    state: CurriculumState, temperature: float = 1.0,
) -> PseudoLabelOutcome:
    labels = np.asarray(labels, dtype=int)
    working = labels.copy()
    noisy = np.asarray(detection.noisy_indices, dtype=int)
    valid = np.flatnonzero(prototypes.valid)
    if len(valid) == 0 or len(noisy) == 0:
        return PseudoLabelOutcome(working, np.empty(0, dtype=int),
                                  np.full(len(noisy), -1), np.zeros(len(noisy)), noisy)
    sims = cosine_matrix(emb[noisy], prototypes.prototypes[valid])
    probs = softmax(sims / temperature, axis=1)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    best = np.argmax(sims, axis=1)
    pseudo = valid[best]
    conf = probs[np.arange(len(noisy)), best]
    accept = conf > state.tau_per_class[pseudo]
    changed_rows = accept & (pseudo != labels[noisy])
    working[noisy[accept]] = pseudo[accept]
    return PseudoLabelOutcome(working, np.sort(noisy[changed_rows]), pseudo, conf, noisy)


def pseudo_label(
    params: ModelParams, prototypes: PrototypeSet, dataset: LabeledDataset,
    detection: DetectionResult, state: CurriculumState, labels, temperature: float = 1.0,
) -> PseudoLabelOutcome:
    """Relabel detected-noisy samples by nearest prototype (cosine).

    A sample takes its pseudo label only when the softmax confidence over its
    prototype similarities exceeds the threshold of the proposed class;
    otherwise it keeps ``labels``. Only classes with a prototype compete.
    """
    emb = embed(params, dataset.features)
    return pseudo_label_from_embeddings(emb, prototypes, labels, detection, state, temperature)


def pseudo_label_accuracy(outcome: PseudoLabelOutcome, dataset: LabeledDataset) -> float:
    """Share of relabeled samples whose new label is the ground truth (1.0 if none)."""
    if len(outcome.changed) == 0:
        return 1.0
    idx = outcome.changed
    return float(np.mean(outcome.working_labels[idx] == dataset.true_labels[idx]))
