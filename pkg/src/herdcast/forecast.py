"""Forward projection: per-county feature trends, autoregressive multi-year
score rollout through the trained graph model, Monte Carlo uncertainty bands,
and counterfactual intervention trajectories."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .geo import SpatialGraph
from .stgnn import StgnnParams, _forward_t


class ForecastError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


@dataclass
class TrendModel:
    slopes: np.ndarray         # (N_c, p)
    intercepts: np.ndarray     # (N_c, p)
    residual_std: np.ndarray   # (N_c, p)
    county_names: list[str]
    feature_names: list[str]
    clip_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        lo, hi = self.clip_range
        if not lo < hi:
            raise ForecastError("clip range must satisfy lo < hi")


def fit_trends(values: np.ndarray, years: list[int], county_names: list[str],
               feature_names: list[str],
               clip_range: tuple[float, float] = (0.0, 1.0)) -> TrendModel:
    """Least-squares line per (county, feature) over the observed years.

    ``values`` is the (T, N_c, p) normalized feature history.  A single-year
    history yields slope 0 and intercept equal to the observation.
    """
    values = np.asarray(values, dtype=float)
    t = np.asarray(years, dtype=float)
    n_c, p = values.shape[1], values.shape[2]
    slopes = np.zeros((n_c, p))
    intercepts = np.zeros((n_c, p))
    residual = np.zeros((n_c, p))
    t_mean = t.mean()
    t_var = ((t - t_mean) ** 2).sum()
    for c in range(n_c):
        series = values[:, c, :]
        y_mean = series.mean(axis=0)
        if t_var > 0:
            slopes[c] = (t - t_mean) @ (series - y_mean) / t_var
        intercepts[c] = y_mean - slopes[c] * t_mean
        fitted = np.outer(t, slopes[c]) + intercepts[c]
        residual[c] = np.sqrt(((series - fitted) ** 2).mean(axis=0))
    return TrendModel(slopes=slopes, intercepts=intercepts, residual_std=residual,
                      county_names=list(county_names), feature_names=list(feature_names),
                      clip_range=clip_range)


def extrapolate(trends: TrendModel, year: int, sigma: float = 0.0,
                seed: int | None = None,
                noise: np.ndarray | None = None) -> np.ndarray:
    """Line value per (county, feature) at ``year`` plus optional Gaussian
    noise, clipped to the feasible range.  ``noise`` overrides the seeded draw
    so baseline/scenario passes can share one realization."""
    value = trends.slopes * year + trends.intercepts
    if noise is not None:
        value = value + noise
    elif sigma > 0.0:
        rng = np.random.default_rng(seed)
        value = value + rng.normal(0.0, sigma, size=value.shape)
    return np.clip(value, *trends.clip_range)


@dataclass
class ScenarioSpec:
    name: str
    deltas: dict[str, dict[str, float]]      # county -> feature -> relative delta
    horizon: tuple[int, int] | None = None

    def validate(self, county_names: list[str], feature_names: list[str]) -> None:
        for county, changes in self.deltas.items():
            if county not in county_names:
                raise ScenarioError(f"unknown county {county!r}")
            for feature, delta in changes.items():
                if feature not in feature_names:
                    raise ScenarioError(f"{county}: unknown feature {feature!r}")
                if delta <= -1.0:
                    raise ScenarioError(
                        f"{county}/{feature}: delta {delta} must be > -1 (multiplier stays positive)")

    @property
    def target_counties(self) -> list[str]:
        return sorted(self.deltas)

    def to_json_dict(self) -> dict:
        doc = {"name": self.name, "counties": self.deltas}
        if self.horizon is not None:
            doc["horizon"] = list(self.horizon)
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ScenarioSpec":
        if "name" not in doc or "counties" not in doc:
            raise ScenarioError("scenario file needs 'name' and 'counties' fields")
        horizon = tuple(doc["horizon"]) if "horizon" in doc and doc["horizon"] else None
        if horizon is not None and (len(horizon) != 2 or horizon[0] > horizon[1]):
            raise ScenarioError(f"bad horizon {horizon}; expected [first_year, last_year]")
        deltas = {}
        for county, changes in doc["counties"].items():
            if not isinstance(changes, dict):
                raise ScenarioError(f"{county}: feature deltas must be an object")
            deltas[county] = {feat: float(v) for feat, v in changes.items()}
        return cls(name=str(doc["name"]), deltas=deltas, horizon=horizon)


def load_scenario(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return ScenarioSpec.from_json_dict(doc)


@dataclass
class ForecastBundle:
    counties: list[str]
    years: list[int]
    baseline: np.ndarray                    # (N_c, H) score units
    scenario: np.ndarray | None = None
    scenario_name: str | None = None
    mc_mean: np.ndarray | None = None
    q05: np.ndarray | None = None
    q95: np.ndarray | None = None
    uplift: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def county_index(self, name: str) -> int:
        try:
            return self.counties.index(name)
        except ValueError:
            raise ForecastError(f"county {name!r} not in bundle") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["county", "year", "baseline", "scenario",
                             "mc_mean", "q05", "q95", "uplift"])
            for c, county in enumerate(self.counties):
                for h, year in enumerate(self.years):
                    def cell(grid):
                        return repr(float(grid[c, h])) if grid is not None else ""
                    writer.writerow([county, year, repr(float(self.baseline[c, h])),
                                     cell(self.scenario), cell(self.mc_mean),
                                     cell(self.q05), cell(self.q95), cell(self.uplift)])

    def to_json_dict(self) -> dict:
        def grid(arr):
            return None if arr is None else arr.tolist()
        return {
            "counties": self.counties,
            "years": self.years,
            "baseline": self.baseline.tolist(),
            "scenario": grid(self.scenario),
            "scenario_name": self.scenario_name,
            "mc_mean": grid(self.mc_mean),
            "q05": grid(self.q05),
            "q95": grid(self.q95),
            "uplift": grid(self.uplift),
            "provenance": self.provenance,
        }


def _scenario_multipliers(scenario: ScenarioSpec | None, county_names: list[str],
                          feature_names: list[str]) -> np.ndarray | None:
    if scenario is None:
        return None
    mult = np.ones((len(county_names), len(feature_names)))
    for county, changes in scenario.deltas.items():
        c = county_names.index(county)
        for feature, delta in changes.items():
            mult[c, feature_names.index(feature)] = 1.0 + delta
    return mult


def rollout(params: StgnnParams, trends: TrendModel, graph: SpatialGraph,
            base_history: np.ndarray, score_history: np.ndarray, years: list[int],
            lag_mean: float, lag_std: float,
            feat_mean: np.ndarray | None = None, feat_std: np.ndarray | None = None,
            horizon: int = 5, scenario: ScenarioSpec | None = None,
            sigma_feat: float = 0.0, seed: int = 0) -> ForecastBundle:
    """Autoregressive forecast: per year, project features along their trends,
    apply scenario multipliers to target counties (pre-clip), run the model
    over the extended history, and feed the predicted score back through the
    lag channel.

    ``base_history`` and the trend model live in the normalized [0, 1]
    domain where clipping is meaningful; ``feat_mean``/``feat_std`` is the
    train-time standardization the model's node features were built with.
    Baseline and scenario passes share the same projected-feature noise, so a
    zero-delta scenario reproduces the baseline bit for bit.
    """
    county_names = trends.county_names
    feature_names = trends.feature_names
    if scenario is not None:
        scenario.validate(county_names, feature_names)
    if horizon < 1:
        raise ForecastError("horizon must be >= 1")
    p = base_history.shape[2]
    feat_mean = feat_mean if feat_mean is not None else np.zeros(p)
    feat_std = feat_std if feat_std is not None else np.ones(p)

    forecast_years = list(range(years[-1] + 1, years[-1] + 1 + horizon))
    rng = np.random.default_rng(seed)
    noises = [rng.normal(0.0, sigma_feat, size=trends.slopes.shape) if sigma_feat > 0.0
              else np.zeros_like(trends.slopes) for _ in forecast_years]

    multipliers = _scenario_multipliers(scenario, county_names, feature_names)
    # The lag is a feature like any other, so its feed is clipped to the
    # feasible (observed) score range before standardization; reported
    # predictions themselves stay unclipped.
    lag_lo, lag_hi = float(np.min(score_history)), float(np.max(score_history))

    # Assemble the node features for the observed history once, shared by both runs.
    hist_lag = np.vstack([score_history[:1], score_history[:-1]])
    hist_lag = (hist_lag - lag_mean) / lag_std
    hist_std = (base_history - feat_mean) / feat_std
    full_history = np.concatenate([hist_std, hist_lag[:, :, None]], axis=2)

    def run_full(apply_scenario: bool) -> np.ndarray:
        feats = [full_history[t] for t in range(full_history.shape[0])]
        scores = list(np.asarray(score_history, dtype=float))
        out = np.zeros((len(county_names), horizon))
        for h, year in enumerate(forecast_years):
            projected = trends.slopes * year + trends.intercepts + noises[h]
            if apply_scenario and multipliers is not None:
                projected = projected * multipliers
            projected = np.clip(projected, *trends.clip_range)
            projected = (projected - feat_mean) / feat_std
            lag = (np.clip(np.asarray(scores[-1]), lag_lo, lag_hi) - lag_mean) / lag_std
            feats.append(np.column_stack([projected, lag]))
            preds = _forward_t(np.stack(feats), graph.normalized, params, "eval", None)
            y_hat = preds[-1].data.ravel() * params.y_std + params.y_mean
            out[:, h] = y_hat
            scores.append(y_hat)
        return out

    baseline = run_full(False)
    scen = run_full(True) if scenario is not None else None
    return ForecastBundle(
        counties=list(county_names),
        years=forecast_years,
        baseline=baseline,
        scenario=scen,
        scenario_name=scenario.name if scenario is not None else None,
        uplift=scen - baseline if scen is not None else None,
        provenance={"seed": seed, "sigma_feat": sigma_feat,
                    "scenario": scenario.name if scenario else None},
    )


def monte_carlo(baseline: np.ndarray, trials: int = 100, sigma: float = 0.01,
                seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Additive Gaussian perturbations of the baseline trajectory.

    Returns (mean, q05, q95) over the simulated sample per (county, year);
    percentiles use linear interpolation between order statistics.
    """
    baseline = np.asarray(baseline, dtype=float)
    if trials < 1:
        raise ForecastError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    draws = baseline[..., None] + rng.normal(0.0, sigma, size=(*baseline.shape, trials)) \
        if sigma > 0.0 else np.repeat(baseline[..., None], trials, axis=-1)
    mean = draws.mean(axis=-1)
    q05 = np.percentile(draws, 5.0, axis=-1)
    q95 = np.percentile(draws, 95.0, axis=-1)
    return mean, q05, q95


def attach_monte_carlo(bundle: ForecastBundle, trials: int = 100, sigma: float = 0.01,
                       seed: int = 0) -> ForecastBundle:
    bundle.mc_mean, bundle.q05, bundle.q95 = monte_carlo(bundle.baseline, trials, sigma, seed)
    bundle.provenance["mc"] = {"trials": trials, "sigma": sigma, "seed": seed}
    return bundle


def uplift(baseline: np.ndarray, scenario: np.ndarray) -> dict:
    """Year-wise scenario-minus-baseline gains plus cumulative summaries."""
    baseline = np.asarray(baseline, dtype=float)
    scenario = np.asarray(scenario, dtype=float)
    if baseline.shape != scenario.shape:
        raise ForecastError("trajectory shapes differ")
    delta = scenario - baseline
    return {
        "per_year": delta,
        "cumulative": delta.sum(axis=-1),
        "final": delta[..., -1],
    }


def trends_to_json_dict(trends: TrendModel) -> dict:
    return {
        "slopes": trends.slopes.tolist(),
        "intercepts": trends.intercepts.tolist(),
        "residual_std": trends.residual_std.tolist(),
        "county_names": trends.county_names,
        "feature_names": trends.feature_names,
        "clip_range": list(trends.clip_range),
    }


def trends_from_json_dict(doc: dict) -> TrendModel:
    return TrendModel(
        slopes=np.asarray(doc["slopes"]),
        intercepts=np.asarray(doc["intercepts"]),
        residual_std=np.asarray(doc["residual_std"]),
        county_names=list(doc["county_names"]),
        feature_names=list(doc["feature_names"]),
        clip_range=tuple(doc["clip_range"]),
    )
