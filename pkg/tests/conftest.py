# tests/conftest.py
from __future__ import annotations

import numpy as np
import pytest

from app.core.model import SpectralCovariance, make_covariance
from app.core.theory import ProblemParams, compute_params


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def ref_cov() -> SpectralCovariance:
    # d=10, lambda1=2, lambda2=...=lambda_d=1
    return make_covariance(10, 2.0, 1.0)


@pytest.fixture
def ref_params() -> ProblemParams:
    return compute_params(10, 2.0, 1.0)
