import numpy as np
import pytest

from sieve.nn import Dense, Flatten, Model, ReLU


def tiny_mlp(input_shape=(1, 2, 2), hidden=4, n_classes=2, seed=0, frozen=True) -> Model:
    """A hand-sized MLP: flatten, ``hidden`` ReLU units, linear head."""
    d = int(np.prod(input_shape))
    rng = np.random.default_rng(seed)
    layers = [Flatten(), Dense("fc1", d, hidden), ReLU(), Dense("fc2", hidden, n_classes)]
    params = {
        "fc1.weight": rng.normal(0, 0.8, (d, hidden)).astype(np.float32),
        "fc1.bias": rng.normal(0, 0.3, hidden).astype(np.float32),
        "fc2.weight": rng.normal(0, 0.8, (hidden, n_classes)).astype(np.float32),
        "fc2.bias": rng.normal(0, 0.3, n_classes).astype(np.float32),
    }
    return Model("mlp", input_shape, n_classes, params, frozen=frozen, layers=layers)


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``report(n, ok, detail)`` records one acceptance line and fails the test when ``ok`` is false."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
