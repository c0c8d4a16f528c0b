"""Cross-validated experiment runner: folds x runs, JSON report and round log."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import snapshot
from .config import ExperimentConfig, RunSpec, load_config
from .data import FeatureRecord, PartitionedDataset, load_features, make_folds, synth_generate
from .errors import ConfigError
from .federated import RunHistory, run_training
from .metrics import pseudo_label_accuracy

log = logging.getLogger(__name__)


@dataclass
class FoldResult:
    fold: int
    seed: int
    test_speakers: list[str]
    best_round: int
    best_val_uar: float
    best_test_uar: float | None
    final_test_uar: float | None
    pseudo_labels: int
    pl_accuracy: float | None


@dataclass
class RunSummary:
    name: str
    algorithm: str
    mode: str
    folds: list[FoldResult] = field(default_factory=list)

    def _values(self, attr: str) -> list[float]:
        return [getattr(f, attr) for f in self.folds if getattr(f, attr) is not None]

    @property
    def mean_test_uar(self) -> float:
        return float(np.mean(self._values("best_test_uar")))

    @property
    def std_test_uar(self) -> float:
        return float(np.std(self._values("best_test_uar")))

    @property
    def mean_final_test_uar(self) -> float:
        return float(np.mean(self._values("final_test_uar")))

    def to_json(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "mode": self.mode,
            "mean_test_uar": self.mean_test_uar,
            "std_test_uar": self.std_test_uar,
            "mean_final_test_uar": self.mean_final_test_uar,
            "std_final_test_uar": float(np.std(self._values("final_test_uar"))),
            "folds": [asdict(f) for f in self.folds],
        }


@dataclass
class ExperimentReport:
    fingerprint: str
    config: dict[str, str]
    runs: dict[str, RunSummary]
    seconds: dict[str, float] = field(default_factory=dict)

    def mean(self, run: str) -> float:
        return self.runs[run].mean_test_uar

    def to_json(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "seed": int(self.config["experiment.seed"]),
            "config": self.config,
            "runs": {k: v.to_json() for k, v in self.runs.items()},
        }


def load_records(cfg: ExperimentConfig) -> tuple[list[FeatureRecord], int]:
    """Feature records and class count for the configured data source."""
    if cfg["data.source"] == "synthetic":
        spec = cfg.synth
        return synth_generate(spec, seed=cfg["synth.seed"]), spec.classes
    records = load_features(cfg["data.features"])
    labels = [r.label for r in records if r.label is not None]
    if not labels:
        raise ConfigError(f"{cfg['data.features']}: no labeled records")
    return records, max(labels) + 1


def build_folds(cfg: ExperimentConfig) -> list[PartitionedDataset]:
    records, n_classes = load_records(cfg)
    return make_folds(
        records,
        n_folds=cfg["data.folds"],
        seed=cfg["data.seed"],
        n_classes=n_classes,
        shards_per_speaker=cfg["data.shards_per_speaker"],
        classes_per_shard=cfg["data.classes_per_shard"],
        val_fraction=cfg["data.val_fraction"],
    )


def _fold_result(fold: int, seed: int, data: PartitionedDataset, hist: RunHistory) -> FoldResult:
    return FoldResult(
        fold=fold,
        seed=seed,
        test_speakers=list(data.test_speakers),
        best_round=hist.best_round,
        best_val_uar=hist.best_val_uar,
        best_test_uar=hist.best_test_uar,
        final_test_uar=hist.final_test_uar,
        pseudo_labels=sum(len(c.pseudo) for c in hist.clients),
        pl_accuracy=pseudo_label_accuracy(hist.clients),
    )


def run_one(cfg: ExperimentConfig, run: RunSpec, fold: int, data: PartitionedDataset) -> RunHistory:
    seed = cfg["experiment.seed"] + fold
    return run_training(cfg.train_config(seed, run), data)


def run_experiment(
    config: ExperimentConfig | str | Path,
    out_dir: str | Path | None = None,
) -> ExperimentReport:
    """Run every configured run on every fold.

    Fold ``f`` trains with seed ``experiment.seed + f``. When ``out_dir`` is
    given, writes ``report.json``, ``rounds.jsonl`` (one line per round, in
    run then fold order) and, if enabled, best-validation model snapshots.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    folds = build_folds(cfg)
    out = Path(out_dir) if out_dir is not None else None
    rounds_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        rounds_fh = open(out / "rounds.jsonl", "w")
    runs: dict[str, RunSummary] = {}
    seconds: dict[str, float] = {}
    try:
        for run in cfg.runs:
            summary = RunSummary(run.name, run.algorithm, run.mode)
            started = time.perf_counter()
            for f, data in enumerate(folds):
                hist = run_one(cfg, run, f, data)
                summary.folds.append(_fold_result(f, cfg["experiment.seed"] + f, data, hist))
                log.info("%s fold %d: best test UAR %s", run.name, f, hist.best_test_uar)
                if rounds_fh is not None:
                    for rep in hist.reports:
                        rounds_fh.write(json.dumps({"run": run.name, "fold": f, **rep.to_json()}) + "\n")
                if out is not None and cfg["experiment.save_models"]:
                    (out / "models").mkdir(exist_ok=True)
                    snapshot.save(hist.best_model, out / "models" / f"{run.name.replace(':', '-')}_fold{f}.bin")
            seconds[run.name] = time.perf_counter() - started
            runs[run.name] = summary
    finally:
        if rounds_fh is not None:
            rounds_fh.close()
    report = ExperimentReport(cfg.fingerprint, cfg.echo(), runs, seconds)
    if out is not None:
        (out / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return report
