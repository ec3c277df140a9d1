import sys

import numpy as np
import pytest
from hypothesis import settings

from deeppce import circuit, training

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # measurement lines collected by test_acceptance, shown even under -q
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT_LINES", []) if mod else []
    if lines:
        terminalreporter.section("acceptance measurements")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained_small_model():
    """A 5-input, 2-output model with populated batch-norm statistics.

    Shared read-only across tests; anything that mutates must copy() first.
    """
    model = circuit.build(d_in=5, d_out=2, scope_size=2, max_order=2, n_nodes=3, seed=11)
    rng = np.random.default_rng(42)
    x = rng.normal(size=(512, 5))
    y = np.stack([x[:, 0] * x[:, 1] + x[:, 2], x[:, 3] ** 2 - x[:, 4]], axis=1)
    cfg = training.TrainConfig(
        learning_rate=5e-3, batch_size=32, max_epochs=8, early_stop_patience=8,
        n_restarts=1, seed=7,
    )
    report = training.train(model, cfg, (x[:448], y[:448]), (x[448:], y[448:]))
    return report.best_model
