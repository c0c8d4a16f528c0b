"""Federated training loop: SCAFFOLD / FedAvg rounds and a centralized baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import AugmentConfig, strong_view, weak_view
from .client import ClientState
from .data import PartitionedDataset
from .errors import ConfigError, FedSerError
from .metrics import per_class_recall, pseudo_label_accuracy, uar
from .nn import (
    ControlVariate,
    ModelParams,
    backward,
    forward,
    init_model,
    param_combine,
    predict,
    sgd_step,
    softmax_ce_loss,
)
from .pseudolabel import PlConfig, PseudoLabelReport, pseudo_label_step, tau_schedule

log = logging.getLogger(__name__)

ALGORITHMS = ("scaffold", "fedavg", "centralized")
MODES = ("semi", "supervised_only", "fully_supervised")

# stream tags for np.random.default_rng([seed, tag, ...])
_SERVER_STREAM = 1
_CLIENT_STREAM = 2

Observer = Callable[[ClientState, PseudoLabelReport, float], None]


class TrainingAborted(FedSerError, RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    local_epochs: int = 1
    batch_size: int = 16
    global_rounds: int = 500
    participation: float = 0.1
    seed: int = 0
    hidden: tuple[int, ...] = (256, 128)
    dropout: float = 0.2
    algorithm: str = "scaffold"
    mode: str = "semi"
    label_rate: float = 0.2
    pl: PlConfig = field(default_factory=PlConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.local_epochs < 1:
            raise ConfigError("train.local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.global_rounds < 0:
            raise ConfigError("train.rounds must be >= 0")
        if not 0 < self.participation <= 1:
            raise ConfigError("train.participation must be in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ConfigError("model.dropout must be in [0, 1)")
        if any(h <= 0 for h in self.hidden):
            raise ConfigError("model.hidden sizes must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"train.algorithm must be one of {ALGORITHMS}")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}")
        if not 0 < self.label_rate <= 1:
            raise ConfigError("train.label_rate must be in (0, 1]")

    @property
    def semi(self) -> bool:
        return self.mode == "semi"

    @property
    def effective_label_rate(self) -> float:
        return 1.0 if self.mode == "fully_supervised" else self.label_rate


@dataclass
class ServerState:
    theta: ModelParams
    c: ControlVariate
    round: int = 0


@dataclass(frozen=True)
class ClientUpdate:
    """Everything a client sends back to the server; no samples, no labels."""

    client_id: str
    theta: ModelParams
    c_k: ControlVariate
    delta_c: ControlVariate


@dataclass
class LocalStats:
    client_id: str
    losses: list[float]
    admissions: list[int]


@dataclass
class RoundReport:
    round: int
    tau: float
    participants: list[str]
    admissions: dict[str, list[int]]
    train_loss: float | None
    val_uar: float
    test_uar: float | None
    per_class_recall: list[float | None]
    pl_accuracy: float | None
    wall_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "tau": self.tau,
            "participants": self.participants,
            "admissions": self.admissions,
            "train_loss": self.train_loss,
            "val_uar": self.val_uar,
            "test_uar": self.test_uar,
            "per_class_recall": self.per_class_recall,
            "pl_accuracy": self.pl_accuracy,
            "wall_ms": self.wall_ms,
        }


@dataclass
class RunHistory:
    reports: list[RoundReport]
    initial_model: ModelParams
    final_model: ModelParams
    best_model: ModelParams
    best_round: int
    best_val_uar: float
    best_test_uar: float | None
    final_test_uar: float | None
    clients: list[ClientState] = field(default_factory=list, repr=False)
    thetas: list[ModelParams] = field(default_factory=list, repr=False)
    server_cs: list[ControlVariate] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "rounds": len(self.reports),
            "best_round": self.best_round,
            "best_val_uar": self.best_val_uar,
            "best_test_uar": self.best_test_uar,
            "final_test_uar": self.final_test_uar,
        }


def _zeros(model: ModelParams) -> ModelParams:
    return ModelParams.zeros_like(model)


def _sample_batch(client: ClientState, pool_idx: np.ndarray, pool_labels: np.ndarray, size: int):
    n = len(pool_idx)
    if n >= size:
        sel = client.rng.choice(n, size=size, replace=False)
    else:
        sel = client.rng.integers(0, n, size=size)
    return pool_idx[sel], pool_labels[sel]


def client_local_training(
    theta_in: ModelParams,
    c: ControlVariate,
    client: ClientState,
    cfg: TrainConfig,
    tau: float | None = None,
    observer: Observer | None = None,
) -> tuple[ClientUpdate, LocalStats] | None:
    """Run ``cfg.local_epochs`` epochs of local training on one client.

    Every iteration takes a weak-view labeled mini-batch and, once the
    pseudo-labeled pool is non-empty in semi mode, a strong-view pseudo
    batch; the step minimizes the sum of their mean cross-entropies. Under
    SCAFFOLD each step is followed by the drift correction ``-lr (c - c_k)``.
    Returns ``None`` when the client has no labeled data.
    """
    n_l = len(client.labeled)
    if n_l == 0:
        log.warning("client %s has no labeled samples; skipped", client.client_id)
        return None
    scaffold = cfg.algorithm == "scaffold"
    if client.c_k is None:
        client.c_k = _zeros(theta_in)
    c_k_old = client.c_k
    correction = param_combine([(1.0, c), (-1.0, c_k_old)]) if scaffold else None
    if tau is None:
        tau = cfg.pl.tau_start

    rng = client.rng
    bsz = cfg.batch_size
    iters = math.ceil(n_l / bsz)
    theta = theta_in
    losses: list[float] = []
    admissions = [0] * client.n_classes

    for _ in range(cfg.local_epochs):
        perm = rng.permutation(n_l)
        for i in range(iters):
            idx = client.labeled[perm[i * bsz:(i + 1) * bsz]]
            parts = [(weak_view(client.features[idx], rng, cfg.aug), client.labels[idx])]
            if cfg.semi and client.pseudo:
                p_idx, p_lab = _sample_batch(client, *client.pseudo_arrays(), bsz)
                parts.append((strong_view(client.features[p_idx], rng, cfg.aug), p_lab))

            x = np.concatenate([p[0] for p in parts])
            logits, cache = forward(theta, x, train=True, dropout_rate=cfg.dropout, rng=rng)
            dlogits = np.empty_like(logits)
            loss, start = 0.0, 0
            for xb, yb in parts:
                stop = start + len(yb)
                part_loss, dlogits[start:stop] = softmax_ce_loss(logits[start:stop], yb)
                loss += part_loss
                start = stop
            theta = sgd_step(theta, backward(theta, cache, dlogits), cfg.lr)
            if scaffold:
                theta = param_combine([(1.0, theta), (-cfg.lr, correction)])
            losses.append(loss)

        if cfg.semi and client.unlabeled:
            report = pseudo_label_step(theta, client, tau, cfg.pl, cfg.aug)
            admissions = [a + b for a, b in zip(admissions, report.counts)]
            if observer is not None:
                observer(client, report, tau)

    if scaffold:
        scale = 1.0 / (cfg.local_epochs * iters * cfg.lr)
        c_k_new = param_combine([(1.0, c_k_old), (-1.0, c), (scale, theta_in), (-scale, theta)])
        delta_c = param_combine([(1.0, c_k_new), (-1.0, c_k_old)])
    else:
        c_k_new, delta_c = c_k_old, _zeros(theta_in)
    client.c_k = c_k_new
    return ClientUpdate(client.client_id, theta, c_k_new, delta_c), LocalStats(client.client_id, losses, admissions)


def aggregate(state: ServerState, updates: Sequence[ClientUpdate], algorithm: str) -> ServerState:
    """Average returned models; under SCAFFOLD also move the server control variate."""
    if not updates:
        raise TrainingAborted("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    w = 1.0 / len(ordered)
    theta = param_combine((w, u.theta) for u in ordered)
    if algorithm == "scaffold":
        c = param_combine([(1.0, state.c)] + [(w, u.delta_c) for u in ordered])
    else:
        c = state.c
    return ServerState(theta, c, state.round + 1)


def n_sampled(n_clients: int, participation: float) -> int:
    return max(1, min(n_clients, int(math.floor(participation * n_clients + 0.5))))


def server_round(
    state: ServerState,
    clients: Sequence[ClientState],
    cfg: TrainConfig,
    rng: np.random.Generator,
    observer: Observer | None = None,
) -> tuple[ServerState, list[LocalStats]]:
    """One global round: sample clients, train them locally, aggregate."""
    if not clients:
        raise TrainingAborted("no clients available")
    tau = tau_schedule(state.round, cfg.pl)
    size = n_sampled(len(clients), cfg.participation)
    for attempt in range(2):
        chosen = sorted(rng.choice(len(clients), size=size, replace=False).tolist())
        picked = sorted((clients[i] for i in chosen), key=lambda cl: cl.client_id)
        updates, stats = [], []
        for client in picked:
            out = client_local_training(state.theta, state.c, client, cfg, tau, observer)
            if out is not None:
                updates.append(out[0])
                stats.append(out[1])
        if updates:
            return aggregate(state, updates, cfg.algorithm), stats
        log.warning("round %d: every sampled client was skipped (attempt %d)", state.round, attempt + 1)
    raise TrainingAborted(f"round {state.round}: no sampled client could train")


# ---------------------------------------------------------------------------
# Driver


@dataclass
class _EvalSet:
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int

    def evaluate(self, model: ModelParams) -> tuple[float, float | None, list[float | None]]:
        val = uar(predict(model, self.val_x), self.val_y, self.n_classes) if len(self.val_y) else float("nan")
        if len(self.test_y):
            pred = predict(model, self.test_x)
            return val, uar(pred, self.test_y, self.n_classes), per_class_recall(pred, self.test_y, self.n_classes)
        return val, None, [None] * self.n_classes


def _eval_set(data: PartitionedDataset) -> _EvalSet:
    dim = data.feature_dim
    val = [r for cl in data.clients for r in cl.val]
    val_x = np.stack([r.features for r in val]) if val else np.zeros((0, dim))
    test_x = np.stack([r.features for r in data.test_records]) if data.test_records else np.zeros((0, dim))
    return _EvalSet(
        val_x,
        np.array([r.label for r in val], dtype=np.int64),
        test_x,
        np.array([r.label for r in data.test_records], dtype=np.int64),
        data.class_count,
    )


def build_clients(cfg: TrainConfig, data: PartitionedDataset) -> list[ClientState]:
    splits = sorted(data.clients, key=lambda s: s.client_id)
    return [
        ClientState.from_split(
            split,
            data.class_count,
            rng=np.random.default_rng([cfg.seed, _CLIENT_STREAM, i]),
            label_rate=cfg.effective_label_rate,
            mask_seed=cfg.seed,
        )
        for i, split in enumerate(splits)
    ]


class _Tracker:
    """Collects round reports and keeps the best-validation snapshot."""

    def __init__(self, theta0: ModelParams, evals: _EvalSet):
        self.evals = evals
        self.reports: list[RoundReport] = []
        val, test, _ = evals.evaluate(theta0)
        self.initial_test = test
        self.best = (val, 0, theta0, test)

    def record(self, rnd, theta, tau, stats: list[LocalStats], clients, started: float) -> None:
        val, test, recall = self.evals.evaluate(theta)
        losses = [l for s in stats for l in s.losses]
        self.reports.append(
            RoundReport(
                round=rnd,
                tau=tau,
                participants=[s.client_id for s in stats],
                admissions={s.client_id: s.admissions for s in stats},
                train_loss=float(np.mean(losses)) if losses else None,
                val_uar=val,
                test_uar=test,
                per_class_recall=recall,
                pl_accuracy=pseudo_label_accuracy(clients),
                wall_ms=round((time.perf_counter() - started) * 1000.0, 3),
            )
        )
        if val > self.best[0]:
            self.best = (val, rnd, theta, test)

    def history(self, theta0, theta, clients, thetas, cs) -> RunHistory:
        best_val, best_round, best_model, best_test = self.best
        return RunHistory(
            reports=self.reports,
            initial_model=theta0,
            final_model=theta,
            best_model=best_model,
            best_round=best_round,
            best_val_uar=best_val,
            best_test_uar=best_test,
            final_test_uar=self.reports[-1].test_uar if self.reports else self.initial_test,
            clients=clients,
            thetas=thetas,
            server_cs=cs,
        )


def run_training(
    cfg: TrainConfig,
    data: PartitionedDataset,
    observer: Observer | None = None,
    keep_trajectory: bool = False,
) -> RunHistory:
    """Train for ``cfg.global_rounds`` rounds and evaluate after each one."""
    if cfg.algorithm == "centralized":
        return centralized_train(cfg, data, observer, keep_trajectory)
    clients = build_clients(cfg, data)
    theta0 = init_model([data.feature_dim, *cfg.hidden, data.class_count], cfg.seed)
    state = ServerState(theta0, _zeros(theta0))
    server_rng = np.random.default_rng([cfg.seed, _SERVER_STREAM])
    evals = _eval_set(data)
    tracker = _Tracker(theta0, evals)
    thetas, cs = [], []
    for _ in range(cfg.global_rounds):
        started = time.perf_counter()
        tau = tau_schedule(state.round, cfg.pl)
        state, stats = server_round(state, clients, cfg, server_rng, observer)
        if keep_trajectory:
            thetas.append(state.theta)
            cs.append(state.c)
        tracker.record(state.round, state.theta, tau, stats, clients, started)
    return tracker.history(theta0, state.theta, clients, thetas, cs)


def centralized_epochs(cfg: TrainConfig, n_clients: int) -> int:
    """Rounds of ``local_epochs`` passes over the pooled data matching federated work."""
    if cfg.global_rounds == 0 or n_clients == 0:
        return 0
    share = n_sampled(n_clients, cfg.participation) / n_clients
    return max(1, int(math.floor(cfg.global_rounds * share + 0.5)))


def centralized_train(
    cfg: TrainConfig,
    data: PartitionedDataset,
    observer: Observer | None = None,
    keep_trajectory: bool = False,
) -> RunHistory:
    """Plain mini-batch SGD on the pooled labeled data of all training clients."""
    clients = build_clients(cfg, data)
    rows = [cl.features[cl.labeled] for cl in clients]
    labels = [cl.labels[cl.labeled] for cl in clients]
    if not rows or sum(len(r) for r in rows) == 0:
        raise ConfigError("centralized training needs at least one labeled training sample")
    x = np.concatenate(rows)
    pooled = ClientState(
        client_id="centralized",
        features=x,
        labels=np.concatenate(labels),
        utterance_ids=[f"pooled{i}" for i in range(len(x))],
        labeled=np.arange(len(x)),
        unlabeled=set(),
        rng=np.random.default_rng([cfg.seed, _CLIENT_STREAM, 0]),
        n_classes=data.class_count,
    )
    local_cfg = TrainConfig(**{**cfg.__dict__, "algorithm": "fedavg", "mode": "fully_supervised"})
    theta0 = init_model([data.feature_dim, *cfg.hidden, data.class_count], cfg.seed)
    theta = theta0
    zero = _zeros(theta0)
    tracker = _Tracker(theta0, _eval_set(data))
    thetas = []
    for rnd in range(1, centralized_epochs(cfg, len(clients)) + 1):
        started = time.perf_counter()
        update, stats = client_local_training(theta, zero, pooled, local_cfg)
        theta = update.theta
        if keep_trajectory:
            thetas.append(theta)
        tracker.record(rnd, theta, tau_schedule(rnd - 1, cfg.pl), [stats], [], started)
    return tracker.history(theta0, theta, [pooled], thetas, [])
