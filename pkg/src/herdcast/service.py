"""Read-only HTTP service over a fitted artifact.

All endpoints serve JSON derived from the immutable artifact; the only
compute endpoint is POST /scenario, which evaluates a counterfactual
statelessly per request.  The default forecast (with Monte Carlo band) is
precomputed once at startup from the artifact's seeds.
"""

from __future__ import annotations

from fastapi import Body, FastAPI, HTTPException

from .artifact import ProjectArtifact, run_forecast
from .forecast import ScenarioError, ScenarioSpec
from .pillars import variance_ratios

DEFAULT_HORIZON = 5
DEFAULT_MC_TRIALS = 100
DEFAULT_MC_SIGMA = 0.01


def create_app(art: ProjectArtifact) -> FastAPI:
    app = FastAPI(title="herdcast", version="0.1.0")
    base_seed = int(art.provenance.get("seed", 0))
    default_bundle = run_forecast(
        art, horizon=DEFAULT_HORIZON, seed=base_seed,
        mc_trials=DEFAULT_MC_TRIALS, mc_sigma=DEFAULT_MC_SIGMA, mc_seed=base_seed + 1,
    )

    def county_or_404(name: str) -> int:
        if name not in art.county_names:
            raise HTTPException(status_code=404, detail={
                "error": f"unknown county {name!r}",
                "counties": art.county_names,
            })
        return art.county_names.index(name)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "artifact_hash": art.provenance.get("config_hash")}

    @app.get("/counties")
    def counties() -> list[dict]:
        latest = art.history_scores[-1]
        return [
            {
                "name": name,
                "lat": float(art.graph.lat[i]),
                "lon": float(art.graph.lon[i]),
                "latest_score": float(latest[i]),
                "latest_year": art.years[-1],
            }
            for i, name in enumerate(art.county_names)
        ]

    @app.get("/scores")
    def scores(county: str) -> dict:
        i = county_or_404(county)
        return {
            "county": county,
            "years": art.years,
            "scores": art.history_scores[:, i].tolist(),
        }

    @app.get("/forecast")
    def forecast_endpoint(county: str) -> dict:
        i = county_or_404(county)
        return {
            "county": county,
            "years": default_bundle.years,
            "baseline": default_bundle.baseline[i].tolist(),
            "mc_mean": default_bundle.mc_mean[i].tolist(),
            "q05": default_bundle.q05[i].tolist(),
            "q95": default_bundle.q95[i].tolist(),
        }

    @app.get("/pillars")
    def pillars_endpoint() -> dict:
        model = art.pillar_model
        return {
            "feature_names": model.feature_names,
            "pillar_names": model.pillar_names,
            "loadings": model.loadings.tolist(),
            "eigenvalues": model.eigenvalues.tolist(),
            "variance_ratios": variance_ratios(model).tolist(),
            "orientations": model.orientations.tolist(),
            "dominant_sets": model.dominant_sets,
            "weights": art.weights.weights.tolist(),
        }

    @app.post("/scenario")
    def scenario_endpoint(payload: dict = Body(...)) -> dict:
        seed = payload.pop("seed", base_seed)
        try:
            spec = ScenarioSpec.from_json_dict(payload)
            spec.validate(art.county_names, art.feature_names)
        except ScenarioError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        horizon = DEFAULT_HORIZON
        if spec.horizon is not None:
            horizon = spec.horizon[1] - spec.horizon[0] + 1
        bundle = run_forecast(
            art, horizon=horizon, scenario=spec, seed=int(seed),
            mc_trials=DEFAULT_MC_TRIALS, mc_sigma=DEFAULT_MC_SIGMA, mc_seed=base_seed + 1,
        )
        return bundle.to_json_dict()

    return app


def serve(art: ProjectArtifact, port: int = 8080, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(art), host=host, port=port, log_level="warning")
