import numpy as np
import pytest

from semifedser.client import ClientState
from semifedser.data import SynthSpec, make_folds, synth_generate


def make_client(n_labeled=4, n_unlabeled=6, dim=3, n_classes=4, seed=0):
    rng = np.random.default_rng(seed)
    n = n_labeled + n_unlabeled
    labels = np.full(n, -1, dtype=np.int64)
    labels[:n_labeled] = rng.integers(0, n_classes, size=n_labeled)
    return ClientState(
        client_id=f"c{seed}",
        features=rng.normal(size=(n, dim)),
        labels=labels,
        utterance_ids=[f"u{i}" for i in range(n)],
        labeled=np.arange(n_labeled),
        unlabeled=set(range(n_labeled, n)),
        rng=np.random.default_rng(seed + 1),
        n_classes=n_classes,
    )


@pytest.fixture
def client_factory():
    return make_client


@pytest.fixture(scope="session")
def small_corpus():
    spec = SynthSpec(speakers=5, per_speaker=60, classes=4, dim=6, class_sep=4.0, speaker_shift=0.5, noise=1.0)
    return synth_generate(spec, seed=1)


@pytest.fixture(scope="session")
def small_folds(small_corpus):
    return make_folds(small_corpus, n_folds=5, seed=0)


# Acceptance reporting: tests marked ``criterion(n, text)`` get one summary line each.

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, text = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[n] = (text, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        text, status, detail = _CRITERIA[n]
        line = f"criterion {n:>2} {status}: {text}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
