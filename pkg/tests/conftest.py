import sys

import numpy as np
import pytest

from motionmanifold.basis import BasisSet, CurveModel, TimedTrajectory
from motionmanifold.training import TrainConfig, train


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance pass/fail lines where capture cannot hide them."""
    for name in ("test_acceptance", "tests.test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "RESULT_LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.RESULT_LINES:
                terminalreporter.write_line(line)
            break


def sine_family_fits(n_curves=12, n_bases=8, n_samples=50, seed=0):
    """Small family of arc curves between fixed endpoints, already fitted."""
    basis = BasisSet.uniform(n_bases, mode="via-point")
    model = CurveModel.via_point(basis, np.array([0.0, 0.0]),
                                 np.array([1.0, 0.0]))
    ts = np.linspace(0.0, 1.0, n_samples)
    rng = np.random.default_rng(seed)
    fits = []
    for peak in np.linspace(-0.4, 0.4, n_curves):
        y = np.sin(np.pi * ts) * peak + rng.normal(scale=1e-3, size=n_samples)
        pts = np.stack([ts, y], axis=1)
        fits.append(model.fit(TimedTrajectory(times=ts, points=pts)))
    return model, fits


@pytest.fixture(scope="session")
def arc_family():
    return sine_family_fits()


@pytest.fixture(scope="session")
def small_manifold(arc_family):
    model, fits = arc_family
    cfg = TrainConfig(latent_dim=2, alpha=0.0, epochs=300, hidden=(32, 32),
                      seed=0)
    return train(fits, model, cfg), model, fits
