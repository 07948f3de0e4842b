import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gncbench.dynamics import DynamicParams

settings.register_profile(
    "workbench",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("workbench")


# Reference truth set used across the identification and estimation suites.
TRUTH_M = 1.47
TRUTH_INERTIA = 810.44
TRUTH_DL = (-7.0, -7.0, -500.553)
TRUTH_DC = (-3.5, -3.5, -250.0)
TRUTH_T = np.diag([1.0, 1.0, 29.99])


@pytest.fixture(scope="session")
def truth_params() -> DynamicParams:
    return DynamicParams(
        m=TRUTH_M,
        inertia=TRUTH_INERTIA,
        dl=TRUTH_DL,
        dc=TRUTH_DC,
        torque_map=TRUTH_T,
    )
