import warnings

import numpy as np
import pytest

from inorm import TrainConfig, build_mlp, normalize_features, train, two_moons
from inorm.data import train_test_split


@pytest.fixture(scope="session")
def moons():
    ds = two_moons(1000, 0.15, seed=0)
    tr, te = train_test_split(ds, 0.3, seed=0)
    tr = normalize_features(tr)
    return tr, normalize_features(te, tr.feature_stats)


@pytest.fixture(scope="session")
def trained_moons_model(moons):
    tr, _ = moons
    model = build_mlp([2, 16, 16, 2], seed=1)
    trained, history = train(model, tr, TrainConfig(epochs=200, seed=0))
    return trained, history


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
