import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semifedser.errors import InvalidLabelError
from semifedser.metrics import confusion, per_class_recall, pseudo_label_accuracy, uar


def brute_uar(pred, true, c):
    recalls = []
    for k in range(c):
        members = [i for i in range(len(true)) if true[i] == k]
        if members:
            recalls.append(sum(1 for i in members if pred[i] == k) / len(members))
    return sum(recalls) / len(recalls)


def test_perfect():
    y = np.array([0, 1, 2, 3, 3])
    assert uar(y, y, 4) == 1.0


def test_half():
    assert uar([0, 0, 0, 0], [0, 0, 1, 1], 2) == 0.5


def test_absent_classes_excluded():
    assert uar([0, 1], [0, 1], 4) == 1.0
    assert per_class_recall([0, 1], [0, 1], 4) == [1.0, 1.0, None, None]


@pytest.mark.parametrize("seed", range(20))
def test_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
    assert uar(p, y, 4) == pytest.approx(brute_uar(p.tolist(), y.tolist(), 4), abs=1e-15)


def test_confusion_perfect_and_constant():
    y = np.array([0, 1, 1, 2, 2, 2])
    np.testing.assert_array_equal(confusion(y, y, 3), np.diag([1, 2, 3]))
    m = confusion(np.zeros(6, dtype=int), y, 3)
    assert m[:, 1:].sum() == 0 and m[:, 0].tolist() == [1, 2, 3]


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_confusion_row_sums_are_label_histogram(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.integers(0, 5, 50), rng.integers(0, 5, 50)
    m = confusion(p, y, 5)
    np.testing.assert_array_equal(m.sum(axis=1), np.bincount(y, minlength=5))
    assert m.sum() == 50


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_uar_invariant_to_consistent_relabeling(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.integers(0, 4, 60), rng.integers(0, 4, 60)
    perm = rng.permutation(4)
    assert uar(perm[p], perm[y], 4) == pytest.approx(uar(p, y, 4), abs=1e-12)


def test_uar_equals_accuracy_when_balanced():
    rng = np.random.default_rng(1)
    y = np.repeat(np.arange(4), 25)
    p = rng.integers(0, 4, 100)
    assert uar(p, y, 4) == pytest.approx(np.mean(p == y), abs=1e-12)


def test_invalid_inputs():
    with pytest.raises(InvalidLabelError):
        uar([], [], 3)
    with pytest.raises(InvalidLabelError):
        uar([0, 3], [0, 1], 3)


def test_pseudo_label_accuracy(client_factory):
    from semifedser.data import SealedLabels

    client = client_factory(n_labeled=2, n_unlabeled=4)
    client.sealed = SealedLabels({client.utterance_ids[i]: 1 for i in range(2, 6)})
    assert pseudo_label_accuracy([client]) is None
    client.admit(2, 1)
    client.admit(3, 1)
    assert pseudo_label_accuracy([client]) == 1.0
    client.admit(4, 0)
    assert pseudo_label_accuracy([client]) == pytest.approx(2 / 3)
