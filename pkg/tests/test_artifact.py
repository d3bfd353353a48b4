"""Artifact persistence: hash integrity, round trips, pipeline wiring."""

import json

import numpy as np
import pytest

from herdcast.artifact import (
    ArtifactError,
    PipelineConfig,
    fit_pipeline,
    load_artifact,
    run_forecast,
    save_artifact,
)
from herdcast.panel import generate_fixture


def test_roundtrip_reproduces_forecasts(small_artifact, tmp_path):
    path = tmp_path / "artifact.json"
    save_artifact(small_artifact, path)
    loaded = load_artifact(path)
    a = run_forecast(small_artifact, horizon=4, seed=2, mc_trials=32)
    b = run_forecast(loaded, horizon=4, seed=2, mc_trials=32)
    assert np.array_equal(a.baseline, b.baseline)
    assert np.array_equal(a.q05, b.q05)
    assert loaded.provenance["config_hash"] == small_artifact.provenance["config_hash"]


def test_corrupted_hash_rejected(small_artifact, tmp_path):
    path = tmp_path / "artifact.json"
    save_artifact(small_artifact, path)
    doc = json.loads(path.read_text())
    doc["history_scores"][0][0] += 1.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match="hash"):
        load_artifact(path)


def test_missing_component_named(small_artifact, tmp_path):
    path = tmp_path / "artifact.json"
    save_artifact(small_artifact, path)
    doc = json.loads(path.read_text())
    del doc["trends"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match="trends"):
        load_artifact(path)


def test_fit_pipeline_deterministic(centroids):
    panel = generate_fixture(6, range(2021, 2026), seed=3, latent_rank=2, noise=0.02)
    config = PipelineConfig(stgnn_epochs=40, seed=9)
    art_a, log_a = fit_pipeline(panel, centroids, config)
    art_b, log_b = fit_pipeline(panel, centroids, config)
    assert art_a.provenance["config_hash"] == art_b.provenance["config_hash"]
    assert log_a == log_b


def test_fit_pipeline_rejects_unknown_county(centroids):
    panel = generate_fixture(27, range(2021, 2026), seed=3, latent_rank=2)
    with pytest.raises(ArtifactError, match="Region00"):
        fit_pipeline(panel, centroids, PipelineConfig(stgnn_epochs=1))


def test_artifact_scores_match_scoring_path(small_artifact, small_panel):
    # stored history grid is the (county, year) reshape of the score table
    assert small_artifact.history_scores.shape == (5, 8)
    assert small_artifact.history_scores.min() >= small_artifact.score_range[0] - 1e-9
    assert small_artifact.history_scores.max() <= small_artifact.score_range[1] + 1e-9
    assert small_artifact.county_names == small_panel.county_names
