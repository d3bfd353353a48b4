"""Shared fixtures: a desk-scale panel and a small trained artifact reused by
the forecast, CLI, and service tests (training once keeps the suite fast)."""

from __future__ import annotations

import numpy as np
import pytest

from herdcast import geo
from herdcast.artifact import PipelineConfig, fit_pipeline
from herdcast.panel import generate_fixture


@pytest.fixture(scope="session")
def small_panel():
    return generate_fixture(8, range(2021, 2026), seed=11, latent_rank=3, noise=0.02)


@pytest.fixture(scope="session")
def full_panel():
    return generate_fixture(26, range(2021, 2026), seed=7, latent_rank=4, noise=0.02)


@pytest.fixture(scope="session")
def centroids():
    return geo.load_centroids()


@pytest.fixture(scope="session")
def small_artifact(small_panel, centroids):
    config = PipelineConfig(stgnn_epochs=250, seed=5, train_years=3, val_years=1)
    art, log = fit_pipeline(small_panel, centroids, config)
    return art


@pytest.fixture(scope="session")
def full_artifact(full_panel, centroids):
    """26-county artifact so the shipped Monaghan/Kerry scenarios resolve."""
    config = PipelineConfig(stgnn_epochs=200, seed=5, train_years=3, val_years=1)
    art, log = fit_pipeline(full_panel, centroids, config)
    return art


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
