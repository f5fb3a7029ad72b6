"""Prototype-based local noise detection and the small-loss baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import LabeledDataset
from .gmm import fit_gmm, fit_gmm_many, split_by_component
from .model import ModelParams, embed, predict

NORM_EPS = 1e-12
MIN_CLASS_SIZE = 2


@dataclass(frozen=True)
class PrototypeSet:
    prototypes: np.ndarray  # (C, h); rows of invalid classes are zero
    counts: np.ndarray  # (C,)
    valid: np.ndarray  # (C,) bool

    @property
    def num_classes(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class DetectionResult:
    clean_indices: np.ndarray
    noisy_indices: np.ndarray
    similarities: np.ndarray  # similarity (or -loss for small-loss) per sample
    per_class_splits: dict = field(default_factory=dict)  # class -> (clean, noisy)

    @property
    def n(self) -> int:
        return len(self.similarities)

    def noisy_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.noisy_indices] = True
        return mask

    def check_partition(self) -> None:
        """Raise if the clean and noisy sets do not partition all samples."""
        both = np.concatenate([self.clean_indices, self.noisy_indices])
        if len(both) != self.n or not np.array_equal(np.sort(both), np.arange(self.n)):
            raise AssertionError("clean/noisy sets must be disjoint and cover every sample")


def prototypes_from_embeddings(emb: np.ndarray, labels, num_classes: int) -> PrototypeSet:
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=num_classes)
    sums = np.zeros((num_classes, emb.shape[1]))
    np.add.at(sums, labels, emb)
    valid = counts > 0
    protos = np.where(valid[:, None], sums / np.maximum(counts, 1)[:, None], 0.0)
    return PrototypeSet(protos, counts, valid)


def build_prototypes(params: ModelParams, dataset: LabeledDataset, labels) -> PrototypeSet:
    """Per-class arithmetic mean of embeddings under ``labels``."""
    if len(labels) != len(dataset):
        raise ValueError("labels must have one entry per sample")
    return prototypes_from_embeddings(embed(params, dataset.features), labels, dataset.num_classes)


def cosine_similarity(p, f) -> float:
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    np_, nf = np.linalg.norm(p), np.linalg.norm(f)
    if np_ < NORM_EPS or nf < NORM_EPS:
        return 0.0
    return float(np.clip(p @ f / (np_ * nf), -1.0, 1.0))


def cosine_matrix(emb: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """(n, C) cosine similarities; zero wherever either norm vanishes."""
    en = np.linalg.norm(emb, axis=1)
    pn = np.linalg.norm(protos, axis=1)
    dots = emb @ protos.T
    denom = en[:, None] * pn[None, :]
    ok = (en[:, None] >= NORM_EPS) & (pn[None, :] >= NORM_EPS)
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=ok)
    return np.clip(out, -1.0, 1.0)


def detect_from_embeddings(
    emb: np.ndarray, labels, num_classes: int, min_class_size: int = MIN_CLASS_SIZE
) -> tuple[DetectionResult, PrototypeSet]:
    labels = np.asarray(labels, dtype=int)
    protos = prototypes_from_embeddings(emb, labels, num_classes)
    sims = cosine_matrix(emb, protos.prototypes)[np.arange(len(labels)), labels]
    groups = [np.flatnonzero(labels == c) for c in range(num_classes)]
    fit_classes = [c for c in range(num_classes) if len(groups[c]) >= max(min_class_size, 2)]
    fits = dict(zip(fit_classes, fit_gmm_many([sims[groups[c]] for c in fit_classes])))
    clean_parts, noisy_parts, splits = [], [], {}
    for c in range(num_classes):
        members = groups[c]
        if len(members) == 0:
            continue
        if c in fits:
            low, high = split_by_component(fits[c])
        else:
            low, high = np.empty(0, dtype=int), np.arange(len(members))
        splits[c] = (members[high], members[low])
        clean_parts.append(members[high])
        noisy_parts.append(members[low])
    result = DetectionResult(
        np.sort(np.concatenate(clean_parts)) if clean_parts else np.empty(0, dtype=int),
        np.sort(np.concatenate(noisy_parts)) if noisy_parts else np.empty(0, dtype=int),
        sims,
        splits,
    )
    result.check_partition()
    return result, protos


def detect_noise(
    params: ModelParams, dataset: LabeledDataset, labels, min_class_size: int = MIN_CLASS_SIZE
) -> DetectionResult:
    """Per-class GMM split of prototype similarities; the low component is noisy.

    Classes with fewer than ``min_class_size`` samples are declared clean.
    """
    emb = embed(params, dataset.features)
    return detect_from_embeddings(emb, labels, dataset.num_classes, min_class_size)[0]


def small_loss_detect(params: ModelParams, dataset: LabeledDataset, labels) -> DetectionResult:
    """Baseline: one GMM over all per-sample cross-entropy losses.

    The fit is done on negated losses so that the shared split rule (high
    component and ties are clean) sends low-loss samples to the clean set.
    """
    labels = np.asarray(labels, dtype=int)
    probs = predict(params, dataset.features)
    losses = -np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-300, None))
    score = -losses
    if len(labels) < 2:
        low, high = np.empty(0, dtype=int), np.arange(len(labels))
    else:
        low, high = split_by_component(fit_gmm(score), score)
    result = DetectionResult(np.sort(high), np.sort(low), score, {})
    result.check_partition()
    return result


def detection_metrics(
    result: DetectionResult, dataset: LabeledDataset, subset=None, labels=None
) -> tuple[float, float]:
    """Precision and recall of the noisy set against ``labels != true``.

    ``labels`` are the labels detection ran on (the given labels by default).
    ``subset`` restricts both the detected and actual positives to a set of
    sample indices (e.g. one class). Empty denominators give 1.0.
    """
    if labels is None:
        actual = dataset.is_noisy
    else:
        actual = np.asarray(labels, dtype=int) != dataset.true_labels
    flagged = result.noisy_mask()
    if subset is not None:
        keep = np.zeros(len(actual), dtype=bool)
        keep[np.asarray(subset, dtype=int)] = True
        actual = actual & keep
        flagged = flagged & keep
    tp = int(np.sum(actual & flagged))
    n_flagged, n_actual = int(flagged.sum()), int(actual.sum())
    precision = tp / n_flagged if n_flagged else 1.0
    recall = tp / n_actual if n_actual else 1.0
    return precision, recall
