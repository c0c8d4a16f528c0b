import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semifedser.augment import AugmentConfig
from semifedser.errors import ConfigError, ConsistencyError
from semifedser.nn import init_model
from semifedser.pseudolabel import (
    PlConfig,
    PseudoProposal,
    mvpl_propose,
    propose_batch,
    pseudo_label_step,
    select_and_move,
    soften,
    tau_schedule,
)

NO_NOISE = AugmentConfig(weak_sigma1=0.0, strong_sigma1=0.0, sigma2=0.0)


def proposal(sid, probs, unc=0.0):
    q = np.asarray(probs, dtype=float)
    return PseudoProposal(sid, q, unc, int(np.argmax(q)))


# soften


def test_soften_uniform():
    np.testing.assert_allclose(soften(np.zeros(4), 2.0), [0.25] * 4, atol=1e-15)


def test_soften_direct_evaluation():
    e = math.e
    expected = [e / (e + 3), 1 / (e + 3), 1 / (e + 3), 1 / (e + 3)]
    np.testing.assert_allclose(soften(np.array([2.0, 0, 0, 0]), 2.0), expected, rtol=0, atol=1e-12)


# logits on a 0.01 grid: near-ties closer than float spacing would collapse under exp
@given(st.lists(st.integers(-5000, 5000), min_size=2, max_size=6), st.sampled_from([0.5, 1.0, 2.0, 10.0]))
@settings(max_examples=60, deadline=None)
def test_soften_argmax_invariant_and_normalized(z, t):
    z = np.array(z) / 100.0
    q = soften(z, t)
    assert abs(q.sum() - 1) < 1e-9
    top = np.flatnonzero(z == z.max())
    assert np.argmax(q) in top


def test_soften_rejects_nonpositive_temperature():
    with pytest.raises(ConfigError):
        soften(np.zeros(3), 0.0)


# tau schedule


@pytest.mark.parametrize("epoch,expected", [(0, 0.5), (150, 0.7), (300, 0.9), (499, 0.9)])
def test_tau_schedule_defaults(epoch, expected):
    assert tau_schedule(epoch, PlConfig()) == pytest.approx(expected, abs=1e-12)


def test_tau_schedule_monotone():
    cfg = PlConfig()
    taus = [tau_schedule(e, cfg) for e in range(400)]
    assert all(a <= b for a, b in zip(taus, taus[1:]))


@pytest.mark.parametrize(
    "kw",
    [dict(m=0), dict(temperature=0), dict(tau_start=0.95, tau_end=0.9), dict(kappa=0), dict(per_class_budget=0)],
)
def test_plconfig_validation(kw):
    with pytest.raises(ConfigError):
        PlConfig(**kw)


# proposals


def test_single_noise_free_view():
    model = init_model([3, 5, 4], seed=0)
    x = np.array([0.3, -1.0, 2.0])
    p = mvpl_propose(model, x, PlConfig(m=1), np.random.default_rng(0), NO_NOISE)
    from semifedser.nn import forward

    logits, _ = forward(model, x[None, :])
    np.testing.assert_allclose(p.q_bar, soften(logits[0], 2.0), rtol=1e-15)
    assert p.uncertainty == 0.0
    assert p.y_prime == int(np.argmax(logits[0]))


def test_multiview_matches_scripted_loop():
    model = init_model([5, 6, 4, 3], seed=4)
    x = np.random.default_rng(9).normal(size=5)
    cfg = PlConfig(m=10, temperature=2.0)
    aug = AugmentConfig()
    got = mvpl_propose(model, x, cfg, np.random.default_rng(123), aug)

    # replay the same noise stream: multiplicative draws for all views, then additive
    rng = np.random.default_rng(123)
    alpha = rng.normal(1.0, aug.weak.sigma1, size=(cfg.m, 5))
    r = rng.normal(0.0, aug.weak.sigma2, size=(cfg.m, 5))
    dists = []
    for i in range(cfg.m):
        h = x * alpha[i] + r[i]
        for j, (w, b) in enumerate(model.layers):
            h = np.array([sum(w[o, k] * h[k] for k in range(len(h))) + b[o] for o in range(w.shape[0])])
            if j < len(model.layers) - 1:
                h = np.maximum(h, 0)
        e = np.exp((h - h.max()) / cfg.temperature)
        dists.append(e / e.sum())
    dists = np.array(dists)
    q_bar = dists.mean(axis=0)
    y = int(np.argmax(q_bar))
    np.testing.assert_allclose(got.q_bar, q_bar, rtol=1e-12)
    assert got.y_prime == y
    assert got.uncertainty == pytest.approx(float(np.std(dists[:, y])), rel=1e-10)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_proposal_invariants(seed):
    model = init_model([4, 6, 3], seed=seed)
    xs = np.random.default_rng(seed).normal(size=(5, 4))
    for p in propose_batch(model, xs, range(5), PlConfig(m=4), np.random.default_rng(seed)):
        assert abs(p.q_bar.sum() - 1) < 1e-9
        assert np.all((p.q_bar >= 0) & (p.q_bar <= 1))
        assert p.uncertainty >= 0
        assert p.y_prime == int(np.argmax(p.q_bar))


def test_batch_equals_single_for_one_row():
    model = init_model([4, 6, 3], seed=1)
    x = np.random.default_rng(2).normal(size=4)
    a = mvpl_propose(model, x, PlConfig(), np.random.default_rng(7))
    b = propose_batch(model, x[None], [0], PlConfig(), np.random.default_rng(7))[0]
    assert a.q_bar.tobytes() == b.q_bar.tobytes()


# selection


def test_nothing_above_tau(client_factory):
    client = client_factory()
    before = (set(client.unlabeled), dict(client.pseudo))
    props = [proposal(i, [0.4, 0.3, 0.2, 0.1]) for i in sorted(client.unlabeled)]
    report = select_and_move(client, props, 0.5, PlConfig())
    assert report.counts == [0, 0, 0, 0]
    assert (set(client.unlabeled), dict(client.pseudo)) == before


def test_budget_keeps_most_confident(client_factory):
    client = client_factory()
    props = [proposal(5, [0.1, 0.7, 0.1, 0.1]), proposal(6, [0.0, 0.9, 0.1, 0.0])]
    report = select_and_move(client, props, 0.5, PlConfig(per_class_budget=1))
    assert report.counts == [0, 1, 0, 0]
    assert client.pseudo == {6: 1}
    assert 6 not in client.unlabeled and 5 in client.unlabeled


def test_uncertainty_gate(client_factory):
    client = client_factory()
    props = [proposal(5, [0.9, 0.1, 0, 0], unc=0.01), proposal(6, [0.8, 0.2, 0, 0], unc=0.001)]
    select_and_move(client, props, 0.5, PlConfig(kappa=0.005))
    assert client.pseudo == {6: 0}


def test_tie_broken_by_sample_id(client_factory):
    client = client_factory()
    props = [proposal(8, [0.8, 0.2, 0, 0]), proposal(6, [0.8, 0.2, 0, 0])]
    select_and_move(client, props, 0.5, PlConfig())
    assert client.pseudo == {6: 0}


def test_unknown_sample_rejected_atomically(client_factory):
    client = client_factory()
    props = [proposal(5, [0.9, 0.1, 0, 0]), proposal(0, [0.9, 0.1, 0, 0])]
    with pytest.raises(ConsistencyError):
        select_and_move(client, props, 0.5, PlConfig())
    assert client.pseudo == {}


def _oracle_select(props, tau, kappa, budget, n_classes):
    admitted = []
    for c in range(n_classes):
        ok = [p for p in props if p.y_prime == c and p.q_bar.max() >= tau and p.uncertainty <= kappa]
        ok.sort(key=lambda p: (-p.q_bar.max(), p.sample_id))
        admitted += [(p.sample_id, c) for p in ok[:budget]]
    return sorted(admitted)


@pytest.mark.parametrize("seed", range(5))
def test_selection_matches_filter_sort_truncate(client_factory, seed):
    rng = np.random.default_rng(seed)
    client = client_factory(n_labeled=2, n_unlabeled=20)
    props = []
    for sid in sorted(client.unlabeled):
        q = rng.dirichlet(np.full(4, 0.4))
        props.append(PseudoProposal(sid, q, float(rng.uniform(0, 0.01)), int(np.argmax(q))))
    cfg = PlConfig(kappa=0.006, per_class_budget=2)
    report = select_and_move(client, props, 0.6, cfg)
    assert sorted(client.pseudo.items()) == _oracle_select(props, 0.6, 0.006, 2, 4)
    assert report.total <= cfg.per_class_budget * 4
    client.check_pools()


def test_pseudo_label_step_conserves_pools(client_factory):
    client = client_factory(n_labeled=3, n_unlabeled=30, dim=4)
    model = init_model([4, 8, 4], seed=0)
    total = client.n_samples
    for _ in range(5):
        pseudo_label_step(model, client, 0.25, PlConfig(kappa=1.0, per_class_budget=2))
        client.check_pools()
        assert sum(client.pool_sizes()) == total
    assert len(client.pseudo) > 0
