"""Project artifact: every fitted component bundled into one versioned,
hash-verified JSON document, plus the end-to-end fit pipeline that produces
it and forecast helpers that consume it."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import forecast as fc
from . import geo, pillars, scoring, stgnn
from .panel import IndicatorPanel, ScalerParams, minmax_fit_apply, standardize

SCHEMA_VERSION = 1

_REQUIRED_KEYS = [
    "schema_version", "feature_names", "county_names", "years", "minmax",
    "zscore", "pillar_model", "weights", "pillar_stats", "rescale_bounds",
    "score_range", "aggregation", "graph", "stgnn", "lag_scaler",
    "feature_scaler", "trends", "history_features", "history_scores",
    "metrics", "provenance",
]


class ArtifactError(ValueError):
    pass


@dataclass
class PipelineConfig:
    n_pillars: int = 4
    dominant_percentile: float = 75.0
    knn_k: int = 3
    aggregation: str = "equal"
    score_range: tuple[float, float] = (10.0, 100.0)
    standardize_pillars: bool = True
    stgnn_epochs: int = 600
    stgnn_dropout: float = 0.1
    stgnn_weight_decay: float = 1e-4
    stgnn_learning_rate: float = 1e-3
    train_years: int = 3
    val_years: int = 1
    seed: int = 0


@dataclass
class ProjectArtifact:
    feature_names: list[str]
    county_names: list[str]
    years: list[int]
    minmax: ScalerParams
    zscore: ScalerParams
    pillar_model: pillars.PillarModel
    weights: scoring.ScoreWeights
    pillar_stats: dict                      # frozen mean/std of raw pillar scores
    rescale_bounds: tuple[float, float]     # raw-index (min, max) at fit time
    score_range: tuple[float, float]
    aggregation: str
    graph: geo.SpatialGraph
    stgnn_params: stgnn.StgnnParams
    lag_scaler: tuple[float, float]
    feature_scaler: tuple[np.ndarray, np.ndarray]   # mean/std of normalized features
    trends: fc.TrendModel
    history_features: np.ndarray            # (T, N_c, p) min-max normalized
    history_scores: np.ndarray              # (T, N_c) scaled index
    metrics: dict
    provenance: dict = field(default_factory=dict)


def fit_pipeline(panel: IndicatorPanel, centroids: geo.CentroidTable,
                 config: PipelineConfig | None = None) -> tuple[ProjectArtifact, list[dict]]:
    """Panel -> pillars -> scores -> graph -> trained forecaster, end to end.

    Returns the artifact and the per-epoch training log.  Every random
    decision derives from ``config.seed``; two runs with the same inputs and
    seed produce identical artifacts.
    """
    config = config or PipelineConfig()
    county_names = panel.county_names
    years = panel.years
    if set(county_names) - set(centroids.names):
        raise ArtifactError(
            f"counties missing from centroid table: {sorted(set(county_names) - set(centroids.names))}")
    keep = [i for i, name in enumerate(centroids.names) if name in set(county_names)]
    table = geo.CentroidTable(
        names=[centroids.names[i] for i in keep],
        lat=centroids.lat[keep],
        lon=centroids.lon[keep],
    )
    if table.names != county_names:
        raise ArtifactError("county ordering mismatch between panel and centroid table")
    year_sets = {k.county_name: [] for k in panel.keys}
    for k in panel.keys:
        year_sets[k.county_name].append(k.year)
    if any(v != years for v in year_sets.values()):
        raise ArtifactError("every county must cover the same year range")

    normalized, minmax_params = minmax_fit_apply(panel)
    x_sc, zscore_params = standardize(panel)

    model = pillars.fit_pca(x_sc, config.n_pillars, feature_names=panel.feature_names)
    pillars.dominant_features(model, config.dominant_percentile)
    pillars.orient_components(model, panel.orientation_signs())
    weights = scoring.feature_weights(model)
    if config.aggregation == "eigenvalue":
        weights.aggregation = "eigenvalue"
        weights.omega = scoring.eigenvalue_omega(model)

    _, pillar_std, stats = scoring.pillar_scores(x_sc, weights, config.standardize_pillars)
    raw_index = scoring.composite_index(pillar_std, mode=config.aggregation, omega=weights.omega)
    bounds = (float(raw_index.min()), float(raw_index.max()))
    scaled = scoring.rescale_index(raw_index, bounds=bounds, out_range=config.score_range)

    graph = geo.knn_graph(table, k=config.knn_k)

    # Row order is (county_id, year); reshape into year-major grids.
    n_c, n_t = len(county_names), len(years)
    score_grid = scaled.reshape(n_c, n_t).T                      # (T, N_c)
    feature_grid = normalized.values.reshape(n_c, n_t, -1).transpose(1, 0, 2)

    # Node features are the standardized form of the normalized grid; the
    # [0, 1] domain is kept for trend fitting and feasibility clipping.
    train_slice = feature_grid[:config.train_years].reshape(-1, feature_grid.shape[2])
    feat_mean = train_slice.mean(axis=0)
    feat_std = train_slice.std(axis=0, ddof=1)
    feat_std[feat_std <= 0] = 1.0
    features = stgnn.assemble_features((feature_grid - feat_mean) / feat_std,
                                       score_grid, years, panel.feature_names,
                                       train_year_count=config.train_years)
    stgnn_config = stgnn.StgnnConfig(
        n_features=features.n_features,
        dropout=config.stgnn_dropout,
        weight_decay=config.stgnn_weight_decay,
        learning_rate=config.stgnn_learning_rate,
        epochs=config.stgnn_epochs,
        seed=config.seed,
        train_years=config.train_years,
        val_years=config.val_years,
    )
    params, log, report = stgnn.train_stgnn(features, graph, score_grid, stgnn_config)

    trends = fc.fit_trends(feature_grid, years, county_names, panel.feature_names)

    artifact = ProjectArtifact(
        feature_names=list(panel.feature_names),
        county_names=county_names,
        years=years,
        minmax=minmax_params,
        zscore=zscore_params,
        pillar_model=model,
        weights=weights,
        pillar_stats={"mean": stats["mean"], "std": stats["std"]},
        rescale_bounds=bounds,
        score_range=config.score_range,
        aggregation=config.aggregation,
        graph=graph,
        stgnn_params=params,
        lag_scaler=(features.lag_mean, features.lag_std),
        feature_scaler=(feat_mean, feat_std),
        trends=trends,
        history_features=feature_grid,
        history_scores=score_grid,
        metrics={name: m.to_dict() for name, m in report.items()},
        provenance={"seed": config.seed, "created": None},
    )
    artifact.provenance["config_hash"] = artifact_hash(artifact)
    return artifact, log


def run_forecast(artifact: ProjectArtifact, horizon: int = 5,
                 scenario: fc.ScenarioSpec | None = None, sigma_feat: float = 0.0,
                 seed: int = 0, mc_trials: int | None = None, mc_sigma: float = 0.01,
                 mc_seed: int = 1) -> fc.ForecastBundle:
    """Rollout (optionally counterfactual) from the artifact's stored history,
    with optional Monte Carlo bands on the baseline."""
    bundle = fc.rollout(
        artifact.stgnn_params, artifact.trends, artifact.graph,
        artifact.history_features, artifact.history_scores, artifact.years,
        artifact.lag_scaler[0], artifact.lag_scaler[1],
        feat_mean=artifact.feature_scaler[0], feat_std=artifact.feature_scaler[1],
        horizon=horizon, scenario=scenario, sigma_feat=sigma_feat, seed=seed,
    )
    bundle.provenance["model_hash"] = artifact.provenance.get("config_hash")
    if mc_trials is not None:
        fc.attach_monte_carlo(bundle, trials=mc_trials, sigma=mc_sigma, seed=mc_seed)
    return bundle


# -- serialization -------------------------------------------------------------


def _scaler_to_dict(s: ScalerParams) -> dict:
    return {
        "feature_names": s.feature_names,
        "minimum": s.minimum.tolist(),
        "maximum": s.maximum.tolist(),
        "mean": s.mean.tolist(),
        "std": s.std.tolist(),
    }


def _scaler_from_dict(doc: dict) -> ScalerParams:
    return ScalerParams(
        feature_names=list(doc["feature_names"]),
        minimum=np.asarray(doc["minimum"]),
        maximum=np.asarray(doc["maximum"]),
        mean=np.asarray(doc["mean"]),
        std=np.asarray(doc["std"]),
    )


def artifact_to_json_dict(artifact: ProjectArtifact) -> dict:
    provenance = dict(artifact.provenance)
    provenance.pop("config_hash", None)
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_names": artifact.feature_names,
        "county_names": artifact.county_names,
        "years": artifact.years,
        "minmax": _scaler_to_dict(artifact.minmax),
        "zscore": _scaler_to_dict(artifact.zscore),
        "pillar_model": pillars.model_to_json_dict(artifact.pillar_model),
        "weights": {
            "weights": artifact.weights.weights.tolist(),
            "signs": artifact.weights.signs.tolist(),
            "aggregation": artifact.weights.aggregation,
            "omega": None if artifact.weights.omega is None else artifact.weights.omega.tolist(),
        },
        "pillar_stats": {
            "mean": np.asarray(artifact.pillar_stats["mean"]).tolist(),
            "std": np.asarray(artifact.pillar_stats["std"]).tolist(),
        },
        "rescale_bounds": list(artifact.rescale_bounds),
        "score_range": list(artifact.score_range),
        "aggregation": artifact.aggregation,
        "graph": geo.graph_to_json_dict(artifact.graph),
        "stgnn": stgnn.params_to_json_dict(artifact.stgnn_params),
        "lag_scaler": list(artifact.lag_scaler),
        "feature_scaler": {
            "mean": np.asarray(artifact.feature_scaler[0]).tolist(),
            "std": np.asarray(artifact.feature_scaler[1]).tolist(),
        },
        "trends": fc.trends_to_json_dict(artifact.trends),
        "history_features": artifact.history_features.tolist(),
        "history_scores": artifact.history_scores.tolist(),
        "metrics": artifact.metrics,
        "provenance": provenance,
    }


def artifact_hash(artifact: ProjectArtifact) -> str:
    payload = json.dumps(artifact_to_json_dict(artifact), sort_keys=True,
                         separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_artifact(artifact: ProjectArtifact, path) -> None:
    doc = artifact_to_json_dict(artifact)
    doc["provenance"]["config_hash"] = artifact_hash(artifact)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_artifact(path) -> ProjectArtifact:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise ArtifactError(f"{path}: artifact missing component(s): {missing}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ArtifactError(f"{path}: unsupported schema version {doc['schema_version']}")

    stored_hash = doc["provenance"].pop("config_hash", None)
    weights = scoring.ScoreWeights(
        weights=np.asarray(doc["weights"]["weights"]),
        signs=np.asarray(doc["weights"]["signs"]),
        aggregation=doc["weights"]["aggregation"],
        omega=None if doc["weights"]["omega"] is None else np.asarray(doc["weights"]["omega"]),
    )
    artifact = ProjectArtifact(
        feature_names=list(doc["feature_names"]),
        county_names=list(doc["county_names"]),
        years=list(doc["years"]),
        minmax=_scaler_from_dict(doc["minmax"]),
        zscore=_scaler_from_dict(doc["zscore"]),
        pillar_model=pillars.model_from_json_dict(doc["pillar_model"]),
        weights=weights,
        pillar_stats={"mean": np.asarray(doc["pillar_stats"]["mean"]),
                      "std": np.asarray(doc["pillar_stats"]["std"])},
        rescale_bounds=tuple(doc["rescale_bounds"]),
        score_range=tuple(doc["score_range"]),
        aggregation=doc["aggregation"],
        graph=geo.graph_from_json_dict(doc["graph"]),
        stgnn_params=stgnn.params_from_json_dict(doc["stgnn"]),
        lag_scaler=tuple(doc["lag_scaler"]),
        feature_scaler=(np.asarray(doc["feature_scaler"]["mean"]),
                        np.asarray(doc["feature_scaler"]["std"])),
        trends=fc.trends_from_json_dict(doc["trends"]),
        history_features=np.asarray(doc["history_features"]),
        history_scores=np.asarray(doc["history_scores"]),
        metrics=doc["metrics"],
        provenance=dict(doc["provenance"]),
    )
    recomputed = artifact_hash(artifact)
    if stored_hash is None or stored_hash != recomputed:
        raise ArtifactError(f"{path}: config hash mismatch; artifact corrupted or edited")
    artifact.provenance["config_hash"] = stored_hash
    return artifact
