"""Constructed single-client scenario contrasting the two detectors.

One client holds a majority given label and a minority given label, both
with the same noise rate. The embedding is the identity on non-negative
features, so prototype geometry is known exactly. The classifier head is
confident on the classes behind the majority label and weak on the classes
behind the minority label, which is the situation a global model reaches when
the minority is rare across the federation: every minority sample, clean or
noisy, then carries a moderate loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import ClientDataset, round_half_up
from .detector import DetectionResult, detect_noise, detection_metrics, small_loss_detect
from .errors import ConfigError
from .model import ModelParams
from .rng import derive_rng

NUM_CLASSES = 4
MAJORITY, MINORITY = 0, 1
# true classes that the noisy samples of each given label come from
MAJORITY_SOURCE, MINORITY_SOURCE = 2, 3


@dataclass(frozen=True)
class ImbalancedScenario:
    params: ModelParams
    client: ClientDataset

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.client.given_labels == label)


@dataclass(frozen=True)
class DetectorComparison:
    prototypical: DetectionResult
    small_loss: DetectionResult
    recall: dict  # detector -> {"majority": r, "minority": r}
    precision: dict

    @property
    def minority_recall_gap(self) -> float:
        return self.recall["prototypical"]["minority"] - self.recall["small_loss"]["minority"]


def _scenario_params(confident: float = 6.0, weak: float = 0.6) -> ModelParams:
    w1 = np.eye(NUM_CLASSES)
    w2 = np.zeros((NUM_CLASSES, NUM_CLASSES))
    w2[MAJORITY, MAJORITY] = confident
    w2[MAJORITY_SOURCE, MAJORITY_SOURCE] = confident
    w2[MINORITY, MINORITY] = weak
    w2[MINORITY_SOURCE, MINORITY] = weak / 2
    w2[MINORITY_SOURCE, MINORITY_SOURCE] = weak
    return ModelParams(w1, np.zeros(NUM_CLASSES), w2, np.zeros(NUM_CLASSES))


def imbalanced_client(
    majority_size: int = 100,
    minority_size: int = 10,
    noise_rate: float = 0.3,
    spread: float = 0.05,
    seed: int = 0,
) -> ImbalancedScenario:
    """Build the client and the fixed model that scores it.

    Features are ``e_true + spread * |N(0, I)|`` so they stay non-negative
    and pass through the ReLU unchanged.
    """
    if majority_size < 2 or minority_size < 2:
        raise ConfigError("both labels need at least 2 samples")
    if not 0.0 <= noise_rate < 1.0:
        raise ConfigError("noise_rate must lie in [0, 1)")
    rng = derive_rng(seed, "scenario")
    true, given = [], []
    for label, source, size in (
        (MAJORITY, MAJORITY_SOURCE, majority_size),
        (MINORITY, MINORITY_SOURCE, minority_size),
    ):
        n_noisy = round_half_up(noise_rate * size)
        true += [label] * (size - n_noisy) + [source] * n_noisy
        given += [label] * size
    true_arr = np.array(true)
    x = np.eye(NUM_CLASSES)[true_arr] + spread * np.abs(rng.standard_normal((len(true), NUM_CLASSES)))
    client = ClientDataset(
        x, np.array(given), true_arr, np.arange(len(true)), NUM_CLASSES,
        client_id=0, noise_level=float(np.mean(true_arr != np.array(given))),
    )
    return ImbalancedScenario(_scenario_params(), client)


def compare_detectors(scenario: ImbalancedScenario) -> DetectorComparison:
    """Run both detectors on the given labels; recall is split by given label."""
    client, params = scenario.client, scenario.params
    results = {
        "prototypical": detect_noise(params, client, client.given_labels),
        "small_loss": small_loss_detect(params, client, client.given_labels),
    }
    recall, precision = {}, {}
    for name, res in results.items():
        recall[name], precision[name] = {}, {}
        for group, label in (("majority", MAJORITY), ("minority", MINORITY)):
            p, r = detection_metrics(res, client, subset=scenario.members(label))
            recall[name][group], precision[name][group] = r, p
    return DetectorComparison(results["prototypical"], results["small_loss"], recall, precision)
