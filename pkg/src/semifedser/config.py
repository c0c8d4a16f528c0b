"""Flat ``key = value`` experiment configuration.

Every key is dotted (``pl.kappa``, ``train.lr``); lines starting with ``#``
are comments. Defaults reproduce the full-scale training recipe; the bundled
benchmark file overrides what is needed to run at desk scale.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping

from .augment import AugmentConfig
from .data import SynthSpec
from .errors import ConfigError
from .federated import ALGORITHMS, MODES, TrainConfig
from .pseudolabel import PlConfig

# Short names for the runs compared in a benchmark; anything else must be
# spelled ``algorithm:mode``.
RUN_ALIASES = {
    "centralized": ("centralized", "fully_supervised"),
    "scaffold": ("scaffold", "fully_supervised"),
    "fedavg": ("fedavg", "fully_supervised"),
    "supervised_only": ("scaffold", "supervised_only"),
    "semi": ("scaffold", "semi"),
}


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _str(v: str) -> str:
    return v


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(t) for t in v.split(",") if t.strip())


def _names(v: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in v.split(",") if t.strip())


def _proportions(v: str) -> tuple[float, ...] | None:
    v = v.strip()
    if v in ("", "none", "uniform"):
        return None
    return tuple(float(t) for t in v.split(","))


# key -> (parser, default as written in a config file)
SCHEMA: dict[str, tuple[Callable[[str], object], str]] = {
    "model.hidden": (_ints, "256,128"),
    "model.dropout": (_float, "0.2"),
    "train.lr": (_float, "0.0001"),
    "train.local_epochs": (_int, "1"),
    "train.batch_size": (_int, "16"),
    "train.rounds": (_int, "500"),
    "train.participation": (_float, "0.1"),
    "train.label_rate": (_float, "0.2"),
    "train.algorithm": (_str, "scaffold"),
    "train.mode": (_str, "semi"),
    "pl.m": (_int, "10"),
    "pl.temperature": (_float, "2.0"),
    "pl.tau_start": (_float, "0.5"),
    "pl.tau_end": (_float, "0.9"),
    "pl.tau_ramp_epochs": (_int, "300"),
    "pl.kappa": (_float, "0.005"),
    "pl.per_class_budget": (_int, "1"),
    "sfa.weak.sigma1": (_float, "0.1"),
    "sfa.strong.sigma1": (_float, "0.25"),
    "sfa.sigma2": (_float, "0.1"),
    "data.source": (_str, "synthetic"),
    "data.features": (_str, ""),
    "data.folds": (_int, "5"),
    "data.shards_per_speaker": (_int, "4"),
    "data.classes_per_shard": (_int, "3"),
    "data.val_fraction": (_float, "0.2"),
    "data.seed": (_int, "0"),
    "synth.speakers": (_int, "8"),
    "synth.per_speaker": (_int, "160"),
    "synth.classes": (_int, "4"),
    "synth.dim": (_int, "32"),
    "synth.class_sep": (_float, "3.0"),
    "synth.speaker_shift": (_float, "1.0"),
    "synth.noise": (_float, "1.0"),
    "synth.proportions": (_proportions, "uniform"),
    "synth.seed": (_int, "0"),
    "experiment.seed": (_int, "0"),
    "experiment.runs": (_names, "scaffold"),
    "experiment.save_models": (_int, "1"),
}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; rejects unknown and repeated keys."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class RunSpec:
    name: str
    algorithm: str
    mode: str


@dataclass(frozen=True)
class ExperimentConfig:
    values: Mapping[str, object]
    raw: Mapping[str, str]

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def fingerprint(self) -> str:
        text = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def echo(self) -> dict[str, str]:
        return {k: self.raw[k] for k in sorted(self.raw)}

    @property
    def pl(self) -> PlConfig:
        v = self.values
        return PlConfig(
            m=v["pl.m"],
            temperature=v["pl.temperature"],
            tau_start=v["pl.tau_start"],
            tau_end=v["pl.tau_end"],
            tau_ramp_epochs=v["pl.tau_ramp_epochs"],
            kappa=v["pl.kappa"],
            per_class_budget=v["pl.per_class_budget"],
        )

    @property
    def aug(self) -> AugmentConfig:
        v = self.values
        return AugmentConfig(
            weak_sigma1=v["sfa.weak.sigma1"], strong_sigma1=v["sfa.strong.sigma1"], sigma2=v["sfa.sigma2"]
        )

    @property
    def synth(self) -> SynthSpec:
        v = self.values
        return SynthSpec(
            speakers=v["synth.speakers"],
            per_speaker=v["synth.per_speaker"],
            classes=v["synth.classes"],
            dim=v["synth.dim"],
            class_sep=v["synth.class_sep"],
            speaker_shift=v["synth.speaker_shift"],
            noise=v["synth.noise"],
            proportions=v["synth.proportions"],
        )

    def train_config(self, seed: int, run: RunSpec | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            lr=v["train.lr"],
            local_epochs=v["train.local_epochs"],
            batch_size=v["train.batch_size"],
            global_rounds=v["train.rounds"],
            participation=v["train.participation"],
            seed=seed,
            hidden=v["model.hidden"],
            dropout=v["model.dropout"],
            algorithm=run.algorithm if run else v["train.algorithm"],
            mode=run.mode if run else v["train.mode"],
            label_rate=v["train.label_rate"],
            pl=self.pl,
            aug=self.aug,
        )

    @property
    def runs(self) -> list[RunSpec]:
        out = []
        for name in self.values["experiment.runs"]:
            if name in RUN_ALIASES:
                algorithm, mode = RUN_ALIASES[name]
            elif ":" in name:
                algorithm, mode = name.split(":", 1)
            elif name in ALGORITHMS:
                algorithm, mode = name, self.values["train.mode"]
            else:
                raise ConfigError(f"experiment.runs: unknown run {name!r}")
            out.append(RunSpec(name, algorithm, mode))
        return out

    def with_overrides(self, overrides: Mapping[str, str]) -> "ExperimentConfig":
        return build_config({**self.raw, **overrides})


def build_config(raw: Mapping[str, str]) -> ExperimentConfig:
    """Parse values, fill defaults and validate every derived object."""
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    full = {k: raw.get(k, default) for k, (_, default) in SCHEMA.items()}
    values = {}
    for key, text in full.items():
        try:
            values[key] = SCHEMA[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {text!r}: {exc}") from None
    cfg = ExperimentConfig(values, full)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v["data.source"] not in ("synthetic", "csv"):
        raise ConfigError("data.source must be 'synthetic' or 'csv'")
    if v["data.source"] == "csv" and not v["data.features"]:
        raise ConfigError("data.features is required when data.source = csv")
    if v["data.folds"] < 1:
        raise ConfigError("data.folds must be >= 1")
    if not 0 <= v["data.val_fraction"] < 1:
        raise ConfigError("data.val_fraction must be in [0, 1)")
    if not v["experiment.runs"]:
        raise ConfigError("experiment.runs is empty")
    names = [r.name for r in cfg.runs]
    if len(set(names)) != len(names):
        raise ConfigError("experiment.runs has duplicates")
    for run in cfg.runs:
        if run.algorithm not in ALGORITHMS or run.mode not in MODES:
            raise ConfigError(f"experiment.runs: bad run {run.name!r}")
    # constructing these runs their own validation
    cfg.train_config(0)
    if v["data.source"] == "synthetic":
        cfg.synth


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    raw: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw = parse_text(text, str(path))
        # relative feature paths are resolved against the config file
        feats = raw.get("data.features")
        if feats and not Path(feats).is_absolute():
            raw["data.features"] = str((path.parent / feats).resolve())
    return build_config({**raw, **(overrides or {})})


def benchmark_config_path() -> Path:
    return Path(str(resources.files("semifedser") / "configs" / "benchmark.cfg"))
