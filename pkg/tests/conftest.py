import numpy as np
import pytest

from nsregret.oracle import fused_lasso_1d


@pytest.fixture(scope="session", autouse=True)
def _warm_fused_lasso_jit():
    # First call compiles the DP kernel (cached on disk afterwards); keep it
    # out of individual test timings.
    fused_lasso_1d(np.array([0.0, 1.0, 0.0]), 0.1)
