"""Shared fixtures and hypothesis profile for the splatctl suite.

Numba JIT compilation makes the first kernel call slow; the hypothesis
deadline is disabled globally so compilation latency is never mistaken for a
failing property. Acceptance tests (test_acceptance.py) are tagged with the
`acceptance` marker; deselect with `-m "not acceptance"` for a fast loop.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splatctl.primitives import Population
from splatctl.toysplat import reference_shape

settings.register_profile(
    "splatctl",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("splatctl")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end acceptance criteria (slow)"
    )


def make_population(
    positions,
    scales=None,
    opacities=None,
    ages=None,
) -> Population:
    """Population literal for tests: positions (N, 2); scalar or per-row
    scale/opacity/age broadcast to N."""
    positions = np.asarray(positions, np.float64).reshape(-1, 2)
    n = positions.shape[0]

    def _vec(value, default, dtype=np.float64):
        if value is None:
            value = default
        arr = np.asarray(value, dtype)
        return np.full(n, arr, dtype) if arr.ndim == 0 else arr.copy()

    return Population(
        ids=np.arange(n, dtype=np.int64),
        positions=positions.copy(),
        scales=_vec(scales, 0.05),
        opacities=_vec(opacities, 0.5),
        ages=_vec(ages, 0, np.int64),
        next_id=n,
    )


@pytest.fixture(scope="session")
def ring64() -> np.ndarray:
    return reference_shape("ring", 64, 64)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
