"""Per-round metrics and their on-disk formats.

``metrics.csv`` columns:

    round                     round index t (0-based)
    test_accuracy             top-1 accuracy of the aggregated model on the test set
    mean_detection_precision  unweighted client mean (blank for baselines)
    mean_detection_recall     unweighted client mean (blank for baselines)
    mean_pseudo_accuracy      unweighted client mean (blank for baselines)
    pooled_pseudo_accuracy    correct relabels / all relabels this round (blank if none)
    num_relabeled             total relabeled samples across clients
    aggregation_fallback      1 if the clean-size branch fell back to data sizes
    clean_counts              ';'-joined per-client |C_k|
    noisy_counts              ';'-joined per-client |N_k|
    relabeled_counts          ';'-joined per-client relabel counts
    aggregation_weights       ';'-joined per-client weights

Floats are written with ``repr`` so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

CSV_COLUMNS = [
    "round",
    "test_accuracy",
    "mean_detection_precision",
    "mean_detection_recall",
    "mean_pseudo_accuracy",
    "pooled_pseudo_accuracy",
    "num_relabeled",
    "aggregation_fallback",
    "clean_counts",
    "noisy_counts",
    "relabeled_counts",
    "aggregation_weights",
]


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    mean_detection_precision: float | None
    mean_detection_recall: float | None
    mean_pseudo_accuracy: float | None
    clean_counts: list[int]
    noisy_counts: list[int]
    relabeled_counts: list[int]
    aggregation_weights: list[float]
    aggregation_fallback: bool = False
    pooled_pseudo_accuracy: float | None = None
    client_precision: list[float] = field(default_factory=list)
    client_recall: list[float] = field(default_factory=list)

    @property
    def num_relabeled(self) -> int:
        return int(sum(self.relabeled_counts))

    def csv_row(self) -> list[str]:
        def num(v):
            return "" if v is None else repr(float(v))

        return [
            str(self.round),
            num(self.test_accuracy),
            num(self.mean_detection_precision),
            num(self.mean_detection_recall),
            num(self.mean_pseudo_accuracy),
            num(self.pooled_pseudo_accuracy),
            str(self.num_relabeled),
            str(int(self.aggregation_fallback)),
            ";".join(str(int(v)) for v in self.clean_counts),
            ";".join(str(int(v)) for v in self.noisy_counts),
            ";".join(str(int(v)) for v in self.relabeled_counts),
            ";".join(repr(float(v)) for v in self.aggregation_weights),
        ]


class MetricsWriter:
    """Streams rows to ``metrics.csv`` (and optional JSON-lines traces) as
    rounds complete, so a failed run still leaves its partial history."""

    def __init__(self, out_dir, trace: bool = False):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._csv_file = open(self.out_dir / "metrics.csv", "w", newline="")
        self._csv = csv.writer(self._csv_file, lineterminator="\n")
        self._csv.writerow(CSV_COLUMNS)
        self._traces = {}
        if trace:
            for name in ("detections", "curriculum", "losses", "aggregation"):
                self._traces[name] = open(self.out_dir / f"{name}.jsonl", "w")

    def write_round(self, m: RoundMetrics) -> None:
        self._csv.writerow(m.csv_row())
        self._csv_file.flush()

    def trace(self, name: str, record: dict) -> None:
        fh = self._traces.get(name)
        if fh is not None:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    @property
    def tracing(self) -> bool:
        return bool(self._traces)

    def close(self) -> None:
        self._csv_file.close()
        for fh in self._traces.values():
            fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
