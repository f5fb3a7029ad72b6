"""Server-side model combination: data-size weighting, switching to
detected-clean-size weighting from round ``switch_round`` on."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AggregationError
from .model import ModelParams

log = logging.getLogger(__name__)

MODES = ("fedcni_switching", "fedavg")


@dataclass(frozen=True)
class AggregationPolicy:
    switch_round: int = 15
    mode: str = "fedcni_switching"

    def __post_init__(self):
        if self.switch_round < 0:
            raise ValueError("switch_round must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class AggregationOutcome:
    params: ModelParams
    weights: np.ndarray
    used_clean_sizes: bool
    fallback: bool  # clean branch was due but every clean set was empty


def aggregation_weights(data_sizes, clean_counts, round_index: int, policy: AggregationPolicy):
    """Returns ``(weights, used_clean_sizes, fallback)``."""
    sizes = np.asarray(data_sizes, dtype=float)
    if policy.mode == "fedcni_switching" and round_index >= policy.switch_round:
        clean = np.asarray(clean_counts, dtype=float)
        total_clean = clean.sum()
        if total_clean > 0:
            return clean / total_clean, True, False
        log.warning("round %d: no client reported clean samples; using data-size weights", round_index)
        return sizes / sizes.sum(), False, True
    return sizes / sizes.sum(), False, False


def weighted_average(params_list: Sequence[ModelParams], weights) -> ModelParams:
    ref = params_list[0]
    for k, p in enumerate(params_list):
        for a, b in zip(p.arrays(), ref.arrays()):
            if a.shape != b.shape:
                raise AggregationError(f"client {k} sent parameters of shape {a.shape}, expected {b.shape}")
    if len(params_list) == 1:
        return ref
    stacked = [np.stack(arrs) for arrs in zip(*(p.arrays() for p in params_list))]
    w = np.asarray(weights, dtype=float)
    return ModelParams(*(np.tensordot(w, s, axes=1) for s in stacked))


def aggregate(reports, round_index: int, policy: AggregationPolicy) -> AggregationOutcome:
    """Combine client reports (objects with ``updated_params``, ``data_size``,
    ``clean_count``) into the next global model."""
    if len(reports) == 0:
        raise AggregationError("no client reports to aggregate")
    weights, used_clean, fallback = aggregation_weights(
        [r.data_size for r in reports], [r.clean_count for r in reports], round_index, policy
    )
    params = weighted_average([r.updated_params for r in reports], weights)
    return AggregationOutcome(params, weights, used_clean, fallback)
