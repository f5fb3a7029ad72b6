"""Command-line entry point: ``fedcni run`` and ``fedcni inspect-detection``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..datagen import load_snapshot
from ..detector import detect_noise, detection_metrics, small_loss_detect
from ..errors import ConfigError, FedCNIError, NumericError
from ..model import init_params, load_params
from ..rng import derive_rng
from ..scenarios import compare_detectors, imbalanced_client
from .config import METHODS, FederationConfig, load_config
from .runner import run_federation

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("fedcni")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedcni", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federation and write metrics")
    run.add_argument("--config", help="JSON config; defaults are used when omitted")
    run.add_argument("--seed", type=int, help="override config seed")
    run.add_argument("--method", choices=METHODS, help="override config method")
    run.add_argument("--rounds", type=int, help="override training.rounds")
    run.add_argument("--out", default="runs/latest", help="output directory")
    run.add_argument("--trace", action="store_true", help="also write JSONL detection/curriculum traces")
    run.add_argument("--dump-data", action="store_true", help="write the corrupted federation snapshot")

    insp = sub.add_parser("inspect-detection", help="dump per-class detection splits")
    src = insp.add_mutually_exclusive_group(required=True)
    src.add_argument("--snapshot", help="federation.json written by run --dump-data")
    src.add_argument("--scenario", choices=["imbalanced"], help="built-in single-client scenario")
    insp.add_argument("--model", help="model.final.bin; random init when omitted")
    insp.add_argument("--hidden-width", type=int, default=64, help="width for random init")
    insp.add_argument("--seed", type=int, default=0)
    insp.add_argument("--out", help="write JSON lines here instead of stdout")
    return p


def _resolve_config(args) -> FederationConfig:
    cfg = load_config(args.config) if args.config else FederationConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.method is not None:
        overrides["method"] = args.method
    if args.rounds is not None:
        overrides["training.rounds"] = args.rounds
    return cfg.replace(**overrides) if overrides else cfg.validate()


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    result = run_federation(cfg, out_dir=args.out, trace=args.trace, dump_data=args.dump_data)
    print(f"method={cfg.method} seed={cfg.seed} rounds={len(result.metrics)} "
          f"final_accuracy={result.final_accuracy:.4f} cpu_seconds={result.elapsed_seconds:.1f} "
          f"out={args.out}")
    return EXIT_OK


def _infer_dims(path, d: int, c: int) -> tuple[int, int, int]:
    n = Path(path).stat().st_size // 8
    h, rem = divmod(n - c, d + 1 + c)
    if rem or h < 1:
        raise ConfigError(f"{path} does not hold parameters for d={d}, C={c}")
    return d, h, c


def _detection_lines(detector: str, client, result):
    for c, (clean, noisy) in sorted(result.per_class_splits.items()):
        members = np.sort(np.concatenate([clean, noisy]))
        yield {
            "detector": detector, "client": client.client_id, "class": int(c),
            "similarities": [float(v) for v in result.similarities[members]],
            "noisy_ids": [int(i) for i in client.ids[noisy]],
            "clean_ids": [int(i) for i in client.ids[clean]],
        }
    if not result.per_class_splits:
        yield {
            "detector": detector, "client": client.client_id, "class": None,
            "scores": [float(v) for v in result.similarities],
            "noisy_ids": [int(i) for i in client.ids[result.noisy_indices]],
            "clean_ids": [int(i) for i in client.ids[result.clean_indices]],
        }


def cmd_inspect(args) -> int:
    lines, summary = [], []
    if args.scenario:
        sc = imbalanced_client(seed=args.seed)
        cmp_ = compare_detectors(sc)
        for name, res in (("prototypical", cmp_.prototypical), ("small_loss", cmp_.small_loss)):
            lines += _detection_lines(name, sc.client, res)
            r = cmp_.recall[name]
            summary.append(f"{name:12s} majority_recall={r['majority']:.3f} minority_recall={r['minority']:.3f}")
    else:
        data = load_snapshot(args.snapshot)
        d, c = data.feature_dim, data.num_classes
        if args.model:
            params = load_params(args.model, _infer_dims(args.model, d, c))
        else:
            params = init_params(d, args.hidden_width, c, derive_rng(args.seed, "init"))
        for client in data.clients:
            for name, fn in (("prototypical", detect_noise), ("small_loss", small_loss_detect)):
                res = fn(params, client, client.given_labels)
                lines += _detection_lines(name, client, res)
                p, r = detection_metrics(res, client)
                summary.append(f"client {client.client_id:3d} {name:12s} precision={p:.3f} recall={r:.3f}")
    text = "".join(json.dumps(line) + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for s in summary:
        print(s, file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_run(args) if args.command == "run" else cmd_inspect(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FedCNIError, OSError, json.JSONDecodeError, KeyError) as exc:
        # malformed snapshot or unreadable input counts as a configuration problem
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
