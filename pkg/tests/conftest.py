import numpy as np
import pytest

from coolrom import datapipe, fluidprops, neural, oracle


@pytest.fixture(scope="session")
def table():
    return fluidprops.load_bundled_table()


@pytest.fixture(scope="session")
def small_oracle(table):
    """Twelve oracle channels, shared by the datapipe, oracle and cli tests."""
    return oracle.generate(table, oracle.GeneratorConfig(n_channels=12, rng_seed=3))


@pytest.fixture(scope="session")
def small_model(small_oracle):
    train, val = datapipe.split(small_oracle.dataset, 0.9, seed=0)
    hp = neural.HyperParams(n_hidden_layers=2, neurons_per_layer=32, alpha_l2=1e-4,
                            minibatch_size=128, epochs=15, learning_rate=2e-3, rng_seed=0)
    model, scaler, _ = datapipe.train_model(train, val, hp)
    return model, scaler


@pytest.fixture
def linear_data():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1.0, 1.0, size=(2000, 2))
    y = 3.0 * X[:, 0] - 2.0 * X[:, 1] + 5.0
    return X[:1800], y[:1800], X[1800:], y[1800:]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
