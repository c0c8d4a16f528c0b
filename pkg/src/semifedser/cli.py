"""Command-line entry point: ``fedser run | synth | eval``.

Exit codes: 0 success, 1 runtime error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import snapshot
from .config import benchmark_config_path, load_config
from .data import by_speaker, load_features, synth_generate, write_features, znorm_records
from .errors import ConfigError, FedSerError
from .experiment import run_experiment
from .federated import ALGORITHMS
from .metrics import per_class_recall, uar
from .nn import predict

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.label_rate is not None:
        out["train.label_rate"] = str(args.label_rate)
    if args.seed is not None:
        out["experiment.seed"] = str(args.seed)
    return out


def cmd_run(args: argparse.Namespace) -> int:
    path = benchmark_config_path() if args.config == "benchmark" else args.config
    cfg = load_config(path, _overrides(args))
    if args.mode is not None:
        cfg = cfg.with_overrides({"experiment.runs": f"{args.mode}:{cfg['train.mode']}"})
    report = run_experiment(cfg, args.out)
    print(f"config {report.fingerprint} -> {args.out}")
    for name, run in report.runs.items():
        print(
            f"{name:<32} test UAR {run.mean_test_uar:.4f} +/- {run.std_test_uar:.4f}"
            f"  (final {run.mean_final_test_uar:.4f}, {report.seconds[name]:.1f}s)"
        )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args.spec)
    records = synth_generate(cfg.synth, seed=cfg["synth.seed"])
    write_features(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = snapshot.load(args.model)
    records = load_features(args.features)
    if not records:
        raise FedSerError(f"{args.features}: no records")
    if not args.no_normalize:
        # same per-speaker normalization the held-out speakers get in training
        groups = by_speaker(records)
        records = [r for spk in sorted(groups) for r in znorm_records(groups[spk])]
    x = np.stack([r.features for r in records])
    if x.shape[1] != model.layer_sizes[0]:
        raise FedSerError(f"features have {x.shape[1]} dims, model expects {model.layer_sizes[0]}")
    pred = predict(model, x)
    n_classes = model.layer_sizes[-1]
    result: dict = {"n": len(records), "predictions": {r.utterance_id: int(p) for r, p in zip(records, pred)}}
    labeled = [i for i, r in enumerate(records) if r.label is not None]
    if labeled:
        y = np.array([records[i].label for i in labeled])
        result["uar"] = uar(pred[labeled], y, n_classes)
        result["per_class_recall"] = per_class_recall(pred[labeled], y, n_classes)
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"uar {result.get('uar')}" if labeled else f"wrote {len(records)} predictions")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedser", description="Semi-supervised federated emotion recognition")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a cross-validated experiment")
    run.add_argument("--config", required=True, help="config file, or 'benchmark' for the bundled one")
    run.add_argument("--mode", choices=ALGORITHMS, help="run a single algorithm instead of experiment.runs")
    run.add_argument("--label-rate", type=float)
    run.add_argument("--seed", type=int, help="base seed; fold f uses seed + f")
    run.add_argument("--out", default="fedser-out")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic feature corpus")
    synth.add_argument("--spec", required=True, help="config file with synth.* keys")
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="score a model snapshot on a feature file")
    ev.add_argument("--model", required=True)
    ev.add_argument("--features", required=True)
    ev.add_argument("--no-normalize", action="store_true", help="features are already normalized")
    ev.add_argument("--out", help="write the JSON result here instead of stdout")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedSerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
