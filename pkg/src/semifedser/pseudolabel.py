"""Multiview pseudo-labeling with confidence and uncertainty gating."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import DEFAULT_AUGMENT, AugmentConfig, sfa
from .client import ClientState
from .errors import ConfigError, ConsistencyError
from .nn import ModelParams, forward


@dataclass(frozen=True)
class PlConfig:
    m: int = 10
    temperature: float = 2.0
    tau_start: float = 0.5
    tau_end: float = 0.9
    tau_ramp_epochs: int = 300
    kappa: float = 0.005
    per_class_budget: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("pl.m must be >= 1")
        if not self.temperature > 0:
            raise ConfigError("pl.temperature must be > 0")
        if not 0 < self.tau_start <= self.tau_end <= 1:
            raise ConfigError("need 0 < pl.tau_start <= pl.tau_end <= 1")
        if self.tau_ramp_epochs < 0:
            raise ConfigError("pl.tau_ramp_epochs must be >= 0")
        if not self.kappa > 0:
            raise ConfigError("pl.kappa must be > 0")
        if self.per_class_budget < 1:
            raise ConfigError("pl.per_class_budget must be >= 1")


@dataclass(frozen=True)
class PseudoProposal:
    sample_id: int
    q_bar: np.ndarray
    uncertainty: float
    y_prime: int

    @property
    def confidence(self) -> float:
        return float(self.q_bar[self.y_prime])


@dataclass
class Admission:
    sample_id: int
    label: int
    confidence: float
    uncertainty: float


@dataclass
class PseudoLabelReport:
    counts: list[int]
    admitted: list[Admission] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.counts)


def soften(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax over the last axis."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def tau_schedule(epoch: int, cfg: PlConfig) -> float:
    if cfg.tau_ramp_epochs == 0 or epoch >= cfg.tau_ramp_epochs:
        return cfg.tau_end
    frac = max(epoch, 0) / cfg.tau_ramp_epochs
    return cfg.tau_start + frac * (cfg.tau_end - cfg.tau_start)


def propose_batch(
    model: ModelParams,
    x_u: np.ndarray,
    sample_ids,
    cfg: PlConfig,
    rng: np.random.Generator,
    aug: AugmentConfig = DEFAULT_AUGMENT,
) -> list[PseudoProposal]:
    """Score every row of ``x_u`` over ``cfg.m`` weak views.

    Noise for all samples is drawn in one call, laid out (sample, view, dim).
    """
    x_u = np.atleast_2d(np.asarray(x_u, dtype=np.float64))
    n, d = x_u.shape
    if n == 0:
        return []
    views = sfa(np.repeat(x_u[:, None, :], cfg.m, axis=1), aug.weak, rng)
    logits, _ = forward(model, views.reshape(n * cfg.m, d))
    q = soften(logits, cfg.temperature).reshape(n, cfg.m, -1)
    q_bar = q.mean(axis=1)
    y_prime = q_bar.argmax(axis=1)
    winner = q[np.arange(n), :, y_prime]  # (n, m) prob of y' in each view
    spread = winner.std(axis=1)
    return [
        PseudoProposal(int(sid), q_bar[i], float(spread[i]), int(y_prime[i]))
        for i, sid in enumerate(sample_ids)
    ]


def mvpl_propose(
    model: ModelParams,
    x_u: np.ndarray,
    cfg: PlConfig,
    rng: np.random.Generator,
    aug: AugmentConfig = DEFAULT_AUGMENT,
    sample_id: int = 0,
) -> PseudoProposal:
    return propose_batch(model, np.asarray(x_u)[None, :], [sample_id], cfg, rng, aug)[0]


def is_eligible(p: PseudoProposal, tau: float, kappa: float) -> bool:
    return p.confidence >= tau and p.uncertainty <= kappa


def select_and_move(
    client: ClientState,
    proposals: list[PseudoProposal],
    tau: float,
    cfg: PlConfig,
) -> PseudoLabelReport:
    """Admit the most confident eligible proposals, at most a budget per class."""
    for p in proposals:
        if p.sample_id not in client.unlabeled:
            raise ConsistencyError(f"{client.client_id}: proposal for sample {p.sample_id} not in unlabeled pool")
    eligible = [p for p in proposals if is_eligible(p, tau, cfg.kappa)]
    eligible.sort(key=lambda p: (-p.confidence, p.sample_id))
    report = PseudoLabelReport([0] * client.n_classes)
    for p in eligible:
        if report.counts[p.y_prime] >= cfg.per_class_budget:
            continue
        report.counts[p.y_prime] += 1
        report.admitted.append(Admission(p.sample_id, p.y_prime, p.confidence, p.uncertainty))
    for a in report.admitted:
        client.admit(a.sample_id, a.label)
    return report


def pseudo_label_step(
    model: ModelParams,
    client: ClientState,
    tau: float,
    cfg: PlConfig,
    aug: AugmentConfig = DEFAULT_AUGMENT,
) -> PseudoLabelReport:
    """Propose labels for the whole unlabeled pool and admit the winners."""
    ids = client.unlabeled_ids()
    if not ids:
        return PseudoLabelReport([0] * client.n_classes)
    proposals = propose_batch(model, client.features[ids], ids, cfg, client.rng, aug)
    return select_and_move(client, proposals, tau, cfg)
