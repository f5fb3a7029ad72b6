"""Federation orchestrator: data generation, client rounds, aggregation, evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..aggregator import AggregationPolicy, aggregate
from ..curriculum import CurriculumState, pseudo_label_accuracy
from ..datagen import FederationData, LabeledDataset, build_federation, save_snapshot
from ..detector import detection_metrics
from ..errors import NumericError
from ..model import ModelParams, init_params, predict, save_params
from ..rng import derive_rng, derive_seed
from ..solver import LocalTrainReport, local_train, plain_train
from .config import FederationConfig
from .metrics import MetricsWriter, RoundMetrics

log = logging.getLogger(__name__)


@dataclass
class FederationResult:
    metrics: list[RoundMetrics]
    final_params: ModelParams
    data: FederationData
    initial_params: ModelParams
    elapsed_seconds: float = 0.0
    reports: list[list[LocalTrainReport]] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1].test_accuracy if self.metrics else float("nan")


def evaluate(params: ModelParams, test: LabeledDataset) -> float:
    """Top-1 accuracy against ground-truth labels (ties go to the lowest class)."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    pred = np.argmax(predict(params, test.features), axis=1)
    return float(np.mean(pred == test.true_labels))


def make_federation(config: FederationConfig) -> FederationData:
    d = config.data
    return build_federation(
        d.num_classes, d.feature_dim, d.class_counts(), d.cluster_spread, d.num_clients,
        d.dirichlet_alpha, d.noise.type, d.noise.mu, d.noise.sigma, config.seed, d.center_scale,
    )


def _mean(values):
    return float(np.mean(values)) if values else None


def _client_round(config, params, client, state, labels, t, seed):
    hyper = config.train_hyper()
    if config.method == "fedcni":
        warm = t < config.training.warmup_rounds
        return local_train(params, client, state, config.loss_spec(), hyper, seed, warmup=warm,
                           labels=labels)
    labels = client.true_labels if config.method == "fedavg_clean" else client.given_labels
    new_params, losses = plain_train(params, client, labels, hyper, seed)
    return LocalTrainReport(new_params, len(client), len(client), epoch_losses=losses)


def _trace_round(writer: MetricsWriter, t: int, reports, clients, outcome) -> None:
    for k, (rep, client) in enumerate(zip(reports, clients)):
        writer.trace("losses", {"round": t, "client": k, "epoch_losses": rep.epoch_losses})
        det = rep.detection
        if det is not None:
            for c, (clean, noisy) in sorted(det.per_class_splits.items()):
                members = np.sort(np.concatenate([clean, noisy]))
                writer.trace("detections", {
                    "round": t, "client": k, "class": int(c),
                    "similarities": [float(v) for v in det.similarities[members]],
                    "noisy_ids": [int(i) for i in client.ids[noisy]],
                    "clean_ids": [int(i) for i in client.ids[clean]],
                })
        if det is not None and rep.curriculum is not None and rep.pseudo_outcome is not None:
            writer.trace("curriculum", {
                "round": t, "client": k,
                "rho": [float(v) for v in rep.curriculum.rho_per_class],
                "tau": [float(v) for v in rep.curriculum.tau_per_class],
                "num_changed": int(len(rep.pseudo_outcome.changed)),
                "pseudo_accuracy": pseudo_label_accuracy(rep.pseudo_outcome, client),
            })
    writer.trace("aggregation", {"round": t, "weights": [float(w) for w in outcome.weights],
                                 "used_clean_sizes": outcome.used_clean_sizes,
                                 "fallback": outcome.fallback})


def run_federation(
    config: FederationConfig, out_dir=None, trace: bool = False, dump_data: bool = False,
    keep_reports: bool = False,
) -> FederationResult:
    """Run ``config.training.rounds`` rounds; a pure function of ``config``.

    With ``out_dir`` set, writes ``config.resolved.json``, streams
    ``metrics.csv`` and writes ``model.final.bin`` at the end.
    """
    config.validate()
    start = time.process_time()
    data = make_federation(config)
    c_, d = data.num_classes, data.feature_dim
    params = init_params(d, config.model.hidden_width, c_, derive_rng(config.seed, "init"))
    initial = params
    policy_mode = (
        "fedcni_switching"
        if config.method == "fedcni" and config.fedcni.enable_switching_aggregation
        else "fedavg"
    )
    policy = AggregationPolicy(config.fedcni.switch_round, policy_mode)
    states = [CurriculumState.initial(c_, config.fedcni.tau) for _ in data.clients]
    # with carry_labels, pseudo-corrected labels persist and later detections run on them
    working = [c.given_labels.copy() for c in data.clients]
    carry = config.method == "fedcni" and config.fedcni.carry_labels

    writer = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        if dump_data:
            save_snapshot(data, out / "federation.json")
        writer = MetricsWriter(out, trace=trace)

    metrics: list[RoundMetrics] = []
    history = []
    try:
        for t in range(config.training.rounds):
            reports = []
            for k, client in enumerate(data.clients):
                seed = derive_seed(config.seed, "local", k, t)
                rep = _client_round(config, params, client, states[k], working[k], t, seed)
                if rep.curriculum is not None:
                    states[k] = rep.curriculum
                if carry and rep.pseudo_outcome is not None:
                    working[k] = rep.pseudo_outcome.working_labels
                reports.append(rep)
            outcome = aggregate(reports, t, policy)
            params = outcome.params
            if not params.all_finite():
                raise NumericError(f"aggregated parameters are not finite in round {t}")

            m = _round_metrics(t, evaluate(params, data.test_set), reports, data, outcome)
            metrics.append(m)
            if writer is not None:
                writer.write_round(m)
                if writer.tracing:
                    _trace_round(writer, t, reports, data.clients, outcome)
            if keep_reports:
                history.append(reports)
            log.info("round %d acc=%.4f", t, m.test_accuracy)
        if writer is not None:
            save_params(params, Path(out_dir) / "model.final.bin")
    finally:
        if writer is not None:
            writer.close()
    return FederationResult(metrics, params, data, initial, time.process_time() - start, history)


def _round_metrics(t, accuracy, reports, data: FederationData, outcome) -> RoundMetrics:
    precisions, recalls, pseudo = [], [], []
    changed_total = changed_right = 0
    relabeled = []
    for rep, client in zip(reports, data.clients):
        if rep.detection is not None:
            p, r = detection_metrics(rep.detection, client, labels=rep.input_labels)
            precisions.append(p)
            recalls.append(r)
        po = rep.pseudo_outcome
        if po is not None:
            pseudo.append(pseudo_label_accuracy(po, client))
            changed_total += len(po.changed)
            changed_right += int(np.sum(po.working_labels[po.changed] == client.true_labels[po.changed]))
            relabeled.append(len(po.changed))
        else:
            relabeled.append(0)
    has_detection = bool(precisions)
    return RoundMetrics(
        round=t,
        test_accuracy=accuracy,
        mean_detection_precision=_mean(precisions),
        mean_detection_recall=_mean(recalls),
        mean_pseudo_accuracy=_mean(pseudo),
        clean_counts=[r.clean_count for r in reports],
        noisy_counts=[r.data_size - r.clean_count for r in reports],
        relabeled_counts=relabeled,
        aggregation_weights=[float(w) for w in outcome.weights],
        aggregation_fallback=outcome.fallback,
        pooled_pseudo_accuracy=(changed_right / changed_total if changed_total else None) if has_detection else None,
        client_precision=precisions,
        client_recall=recalls,
    )
