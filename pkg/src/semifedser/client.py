"""Per-client state: the labeled / pseudo-labeled / unlabeled pools."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClientSplit, SealedLabels, mask_labels
from .errors import ConsistencyError, InvalidLabelError
from .nn import ControlVariate


@dataclass
class ClientState:
    """One client's training data and SCAFFOLD control variate.

    Samples are addressed by their row index into ``features``. ``labels``
    holds a label only for the labeled pool; every other entry is -1, and
    the hidden ground truth lives in ``sealed``.
    """

    client_id: str
    features: np.ndarray
    labels: np.ndarray
    utterance_ids: list[str]
    labeled: np.ndarray
    unlabeled: set[int]
    rng: np.random.Generator
    n_classes: int
    pseudo: dict[int, int] = field(default_factory=dict)
    val_features: np.ndarray | None = None
    val_labels: np.ndarray | None = None
    sealed: SealedLabels = field(default_factory=SealedLabels)
    c_k: ControlVariate | None = None

    @classmethod
    def from_split(
        cls,
        split: ClientSplit,
        n_classes: int,
        rng: np.random.Generator,
        label_rate: float = 1.0,
        mask_seed: int = 0,
    ) -> "ClientState":
        labeled_recs, unlabeled_recs, sealed = mask_labels(split.train, label_rate, mask_seed, key=split.client_id)
        recs = labeled_recs + unlabeled_recs
        dim = split.train[0].features.size if split.train else 0
        feats = np.stack([r.features for r in recs]) if recs else np.zeros((0, dim))
        labels = np.array([r.label if r.label is not None else -1 for r in recs], dtype=np.int64)
        val_x = np.stack([r.features for r in split.val]) if split.val else np.zeros((0, dim))
        val_y = np.array([r.label for r in split.val], dtype=np.int64)
        return cls(
            client_id=split.client_id,
            features=feats,
            labels=labels,
            utterance_ids=[r.utterance_id for r in recs],
            labeled=np.arange(len(labeled_recs)),
            unlabeled=set(range(len(labeled_recs), len(recs))),
            rng=rng,
            n_classes=n_classes,
            val_features=val_x,
            val_labels=val_y,
            sealed=sealed,
        )

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def pool_sizes(self) -> tuple[int, int, int]:
        return len(self.labeled), len(self.pseudo), len(self.unlabeled)

    def unlabeled_ids(self) -> list[int]:
        return sorted(self.unlabeled)

    def pseudo_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.fromiter(self.pseudo.keys(), dtype=np.int64, count=len(self.pseudo))
        lab = np.fromiter(self.pseudo.values(), dtype=np.int64, count=len(self.pseudo))
        return idx, lab

    def admit(self, sample_id: int, label: int) -> None:
        """Move one sample from the unlabeled pool to the pseudo-labeled pool."""
        if sample_id not in self.unlabeled:
            raise ConsistencyError(f"{self.client_id}: sample {sample_id} is not in the unlabeled pool")
        if not 0 <= label < self.n_classes:
            raise InvalidLabelError(f"pseudo label {label} outside [0, {self.n_classes})")
        self.unlabeled.remove(sample_id)
        self.pseudo[sample_id] = int(label)

    def check_pools(self) -> None:
        lab = set(self.labeled.tolist())
        pse = set(self.pseudo)
        if lab & pse or lab & self.unlabeled or pse & self.unlabeled:
            raise ConsistencyError(f"{self.client_id}: pools overlap")
        if len(lab) + len(pse) + len(self.unlabeled) != self.n_samples:
            raise ConsistencyError(f"{self.client_id}: pools do not cover the client's samples")
