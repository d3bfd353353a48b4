"""Command-line pipeline: ingest -> augment -> pillars -> score -> graph ->
train -> evaluate -> forecast / mc / scenario -> plotdata -> serve.

Every subcommand reads and writes only the paths given on its flags, takes a
--seed where randomness is involved, and exits 0 on success, 2 on input
validation problems, 1 on internal errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback

import numpy as np

from . import geo, pillars, scoring, stgnn, vae
from .artifact import ArtifactError, PipelineConfig, fit_pipeline, load_artifact, run_forecast, save_artifact
from .forecast import ForecastError, ScenarioError, load_scenario
from .panel import PanelError, generate_fixture, load_panel, minmax_fit_apply, save_panel_csv, standardize

VALIDATION_ERRORS = (PanelError, ScenarioError, ArtifactError, ForecastError,
                     geo.GraphError, pillars.PillarError, scoring.ScoringError,
                     stgnn.StgnnError, vae.VaeError, FileNotFoundError)


def _ensure_outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def cmd_fixture(args) -> int:
    panel = generate_fixture(args.counties, range(args.start_year, args.start_year + args.years),
                             seed=args.seed, latent_rank=args.rank, noise=args.noise)
    save_panel_csv(panel, args.out)
    print(f"fixture: {len(panel.keys)} rows -> {args.out}")
    return 0


def cmd_ingest(args) -> int:
    panel = load_panel(args.input)
    outdir = _ensure_outdir(args.outdir)
    cleaned = os.path.join(outdir, "cleaned.csv")
    save_panel_csv(panel, cleaned)
    report = {
        "rows": len(panel.keys),
        "counties": panel.n_counties,
        "years": panel.years,
        "cells_cleaned": panel.cleaning.cells_cleaned,
        "rows_affected": panel.cleaning.rows_affected,
        "counties_dropped": panel.cleaning.counties_dropped,
    }
    _write_json(report, os.path.join(outdir, "ingest_report.json"))
    print(f"ingest: {report['rows']} rows, {report['counties']} counties -> {cleaned}")
    return 0


def cmd_augment(args) -> int:
    panel = load_panel(args.input)
    outdir = _ensure_outdir(args.outdir)
    normalized, _ = minmax_fit_apply(panel)
    config = vae.VaeConfig(
        input_dim=len(panel.feature_names), latent=args.latent, beta=args.beta,
        epochs=args.epochs, seed=args.seed,
    )
    params, log = vae.train_vae(normalized.values, config)
    augmented = vae.augment_conditional(params, normalized.values, args.replicates, seed=args.seed)

    rows = np.vstack([normalized.values, augmented.synthetic])
    provenance = ["real"] * len(panel.keys) + augmented.provenance
    keys = list(panel.keys) + [panel.keys[i // args.replicates] for i in range(augmented.n_synthetic)]
    out_panel = type(panel)(keys=keys, values=rows, feature_names=panel.feature_names,
                            feature_orientation=panel.feature_orientation)
    out_csv = os.path.join(outdir, "augmented.csv")
    save_panel_csv(out_panel, out_csv, provenance=provenance)
    vae.save_params_json(params, os.path.join(outdir, "vae_params.json"))

    validation = {
        "moments": vae.validate_moments(normalized.values, augmented.synthetic),
        "corr_frobenius": vae.corr_frobenius(normalized.values, augmented.synthetic),
        "mmd_squared": vae.mmd_squared(normalized.values, augmented.synthetic),
        "final_train_accuracy": log[-1]["train_accuracy"] if log else None,
        "final_val_accuracy": log[-1]["val_accuracy"] if log else None,
        "total_rows": len(panel.keys) + augmented.n_synthetic,
    }
    _write_json(validation, os.path.join(outdir, "augment_report.json"))
    print(f"augment: {len(panel.keys)} real + {augmented.n_synthetic} synthetic "
          f"= {validation['total_rows']} rows -> {out_csv}")
    return 0


def cmd_pillars(args) -> int:
    panel = load_panel(args.input)
    outdir = _ensure_outdir(args.outdir)
    x_sc, _ = standardize(panel)
    model = pillars.fit_pca(x_sc, args.components, feature_names=panel.feature_names)
    pillars.dominant_features(model, args.percentile)
    pillars.orient_components(model, panel.orientation_signs())
    pillars.save_model_json(model, os.path.join(outdir, "pillar_model.json"))
    pillars.export_loadings_csv(model, os.path.join(outdir, "loadings.csv"))
    ratios = pillars.variance_ratios(model)
    with open(os.path.join(outdir, "scree.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "eigenvalue", "variance_ratio"])
        for i, (lam, rho) in enumerate(zip(model.eigenvalues, ratios), start=1):
            writer.writerow([i, repr(float(lam)), repr(float(rho))])
    stability = pillars.bootstrap_stability(x_sc, model, args.bootstrap, seed=args.seed)
    _write_json({"pillar_names": model.pillar_names,
                 "dominant_sets": model.dominant_sets,
                 "bootstrap": stability,
                 "scaling_cosines": pillars.scaling_robustness(panel.values, model).tolist()},
                os.path.join(outdir, "pillar_report.json"))
    print(f"pillars: {model.pillar_names} -> {outdir}")
    return 0


def cmd_score(args) -> int:
    panel = load_panel(args.input)
    outdir = _ensure_outdir(args.outdir)
    x_sc, _ = standardize(panel)
    if args.pillar_model:
        model = pillars.load_model_json(args.pillar_model)
    else:
        model = pillars.fit_pca(x_sc, args.components, feature_names=panel.feature_names)
        pillars.dominant_features(model, args.percentile)
        pillars.orient_components(model, panel.orientation_signs())
    weights = scoring.feature_weights(model)
    if args.aggregation == "eigenvalue":
        weights.aggregation = "eigenvalue"
        weights.omega = scoring.eigenvalue_omega(model)
    result = scoring.score_index(x_sc, model, weights, mode=args.aggregation,
                                 out_range=(args.range_lo, args.range_hi))

    scores_csv = os.path.join(outdir, "scores.csv")
    k = result.pillar_std.shape[1]
    with open(scores_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["county", "year"] + [f"pillar{i + 1}" for i in range(k)]
                        + ["index_raw", "index_scaled"])
        for i, key in enumerate(panel.keys):
            writer.writerow([key.county_name, key.year]
                            + [repr(float(v)) for v in result.pillar_std[i]]
                            + [repr(float(result.raw[i])), repr(round(float(result.scaled[i]), 1))])

    counties, years = panel.county_names, panel.years
    grid = result.scaled.reshape(len(counties), len(years))
    with open(os.path.join(outdir, "score_heatmap.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["county"] + [str(y) for y in years])
        for c, name in enumerate(counties):
            writer.writerow([name] + [repr(round(float(v), 1)) for v in grid[c]])

    report = {
        "weight_variants": scoring.weight_variants_report(x_sc, model,
                                                          out_range=(args.range_lo, args.range_hi)),
        "stability": scoring.stability_stats(counties, years, grid),
        "pillar_index_correlation": pillars.pillar_index_correlation(
            pillars.project_scores(x_sc, model), result.raw).tolist(),
    }
    alpha, resid = scoring.regress_index_on_pillars(result.raw, result.pillar_std)
    report["ols"] = {"alpha": alpha.tolist(), "residual_variance": resid}
    _write_json(report, os.path.join(outdir, "score_report.json"))
    print(f"score: {len(panel.keys)} rows -> {scores_csv}")
    return 0


def cmd_graph(args) -> int:
    table = geo.load_centroids(args.centroids)
    graph = geo.knn_graph(table, k=args.k)
    outdir = _ensure_outdir(args.outdir)
    geo.export_edge_list_csv(graph, os.path.join(outdir, "edges.csv"))
    geo.save_graph_json(graph, os.path.join(outdir, "graph.json"))
    _write_json(geo.connectivity_report(graph), os.path.join(outdir, "connectivity.json"))
    print(f"graph: {len(graph.names)} nodes, {graph.edge_index.shape[1]} directed edges -> {outdir}")
    return 0


def cmd_train(args) -> int:
    panel = load_panel(args.input)
    table = geo.load_centroids(args.centroids)
    outdir = _ensure_outdir(args.outdir)
    config = PipelineConfig(
        n_pillars=args.components, knn_k=args.k, aggregation=args.aggregation,
        stgnn_epochs=args.epochs, seed=args.seed,
        train_years=args.train_years, val_years=args.val_years,
    )
    art, log = fit_pipeline(panel, table, config)
    artifact_path = os.path.join(outdir, "artifact.json")
    save_artifact(art, artifact_path)
    stgnn.save_epoch_log_csv(log, os.path.join(outdir, "epoch_log.csv"))
    print(f"train: metrics={art.metrics} -> {artifact_path}")
    return 0


def cmd_evaluate(args) -> int:
    art = load_artifact(args.artifact)
    outdir = _ensure_outdir(args.outdir)
    report = {"stgnn": art.metrics}
    if args.baselines:
        t, n_c, p = art.history_features.shape
        lag = np.vstack([art.history_scores[:1], art.history_scores[:-1]])
        lag = (lag - art.lag_scaler[0]) / art.lag_scaler[1]
        std_features = (art.history_features - art.feature_scaler[0]) / art.feature_scaler[1]
        flat_x = np.concatenate([std_features, lag[:, :, None]], axis=2).reshape(t * n_c, p + 1)
        flat_y = art.history_scores.reshape(t * n_c)
        year_of_row = np.repeat(np.arange(t), n_c)
        train_years = art.stgnn_params.config.train_years
        val_years = art.stgnn_params.config.val_years
        splits = {
            "train": np.flatnonzero(year_of_row < train_years),
            "val": np.flatnonzero((year_of_row >= train_years) & (year_of_row < train_years + val_years)),
            "test": np.flatnonzero(year_of_row >= train_years + val_years),
        }
        splits = {k: v for k, v in splits.items() if len(v)}
        ffnn_cfg = stgnn.FfnnConfig(n_features=p + 1, epochs=args.epochs, seed=args.seed)
        _, ffnn_report = stgnn.ffnn_baseline(flat_x, flat_y, ffnn_cfg, splits)
        report["ffnn"] = {k: m.to_dict() for k, m in ffnn_report.items()}
        gkr_report = {}
        for split, idx in splits.items():
            preds = stgnn.gkr_baseline(flat_x[splits["train"]], flat_y[splits["train"]],
                                       "median", flat_x[idx])
            gkr_report[split] = stgnn.metrics(flat_y[idx], preds).to_dict()
        report["gkr"] = gkr_report
    _write_json(report, os.path.join(outdir, "evaluation.json"))
    print(f"evaluate: -> {os.path.join(outdir, 'evaluation.json')}")
    return 0


def _write_forecast(bundle, outdir: str, stem: str) -> str:
    path = os.path.join(outdir, f"{stem}.csv")
    bundle.to_csv(path)
    _write_json(bundle.to_json_dict(), os.path.join(outdir, f"{stem}.json"))
    return path


def cmd_forecast(args) -> int:
    art = load_artifact(args.artifact)
    outdir = _ensure_outdir(args.outdir)
    bundle = run_forecast(art, horizon=args.horizon, sigma_feat=args.sigma_feat, seed=args.seed)
    path = _write_forecast(bundle, outdir, "forecast")
    print(f"forecast: {args.horizon} years -> {path}")
    return 0


def cmd_mc(args) -> int:
    art = load_artifact(args.artifact)
    outdir = _ensure_outdir(args.outdir)
    bundle = run_forecast(art, horizon=args.horizon, sigma_feat=args.sigma_feat, seed=args.seed,
                          mc_trials=args.trials, mc_sigma=args.sigma, mc_seed=args.mc_seed)
    path = _write_forecast(bundle, outdir, "mc")
    print(f"mc: S={args.trials}, sigma={args.sigma} -> {path}")
    return 0


def cmd_scenario(args) -> int:
    art = load_artifact(args.artifact)
    outdir = _ensure_outdir(args.outdir)
    spec = load_scenario(args.file)
    spec.validate(art.county_names, art.feature_names)
    horizon = args.horizon
    if horizon is None:
        horizon = (spec.horizon[1] - spec.horizon[0] + 1) if spec.horizon else 5
    bundle = run_forecast(art, horizon=horizon, scenario=spec,
                          sigma_feat=args.sigma_feat, seed=args.seed)
    path = _write_forecast(bundle, outdir, "scenario")
    print(f"scenario {spec.name!r}: counties {spec.target_counties} -> {path}")
    return 0


def cmd_plotdata(args) -> int:
    from . import plots

    art = load_artifact(args.artifact)
    outdir = _ensure_outdir(args.outdir)

    pillars.export_loadings_csv(art.pillar_model, os.path.join(outdir, "loadings.csv"))
    plots.save_loadings_heatmap(art.pillar_model, os.path.join(outdir, "loadings.png"))
    ratios = pillars.variance_ratios(art.pillar_model)
    with open(os.path.join(outdir, "scree.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "eigenvalue", "variance_ratio"])
        for i, (lam, rho) in enumerate(zip(art.pillar_model.eigenvalues, ratios), start=1):
            writer.writerow([i, repr(float(lam)), repr(float(rho))])
    plots.save_scree(art.pillar_model, os.path.join(outdir, "scree.png"))

    grid = art.history_scores.T          # (N_c, T)
    with open(os.path.join(outdir, "score_heatmap.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["county"] + [str(y) for y in art.years])
        for c, name in enumerate(art.county_names):
            writer.writerow([name] + [repr(round(float(v), 1)) for v in grid[c]])
    plots.save_score_heatmap(art.county_names, art.years, grid,
                             os.path.join(outdir, "score_heatmap.png"))

    bundle = run_forecast(art, horizon=args.horizon, seed=args.seed,
                          mc_trials=args.trials, mc_sigma=args.sigma, mc_seed=args.seed + 1)
    _write_forecast(bundle, outdir, "forecast")
    wanted = args.county or [c for c in ("Cork", "Dublin") if c in art.county_names]
    wanted = wanted or art.county_names[:1]
    for county in wanted:
        i = art.county_names.index(county)
        plots.save_forecast_band(bundle, county,
                                 os.path.join(outdir, f"forecast_{county.lower()}.png"),
                                 history_years=art.years,
                                 history_scores=art.history_scores[:, i])
    print(f"plotdata: figures + csv -> {outdir}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    art = load_artifact(args.artifact)
    print(f"serving {args.artifact} on port {args.port}")
    serve(art, port=args.port, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="herdcast",
                                     description="Herd sustainability scoring and forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="generate a synthetic desk-scale panel CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--counties", type=int, default=26)
    p.add_argument("--years", type=int, default=5)
    p.add_argument("--start-year", type=int, default=2021)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("ingest", help="validate and clean a raw panel CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", help="train the autoencoder and emit synthetic rows")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--latent", type=int, default=80)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--replicates", type=int, default=4)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("pillars", help="fit, orient, and report the component pillars")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--components", type=int, default=4)
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--bootstrap", type=int, default=200)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_pillars)

    p = sub.add_parser("score", help="compute pillar scores and the composite index")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--pillar-model", default=None)
    p.add_argument("--components", type=int, default=4)
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--aggregation", choices=["equal", "eigenvalue"], default="equal")
    p.add_argument("--range-lo", type=float, default=10.0)
    p.add_argument("--range-hi", type=float, default=100.0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("graph", help="build the spatial kNN graph")
    p.add_argument("--centroids", default=None, help="county,lat,lon CSV (default: packaged table)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="fit the full pipeline and save the artifact")
    p.add_argument("--input", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--centroids", default=None)
    p.add_argument("--components", type=int, default=4)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--aggregation", choices=["equal", "eigenvalue"], default="equal")
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--train-years", type=int, default=3)
    p.add_argument("--val-years", type=int, default=1)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="report metrics; optionally run baselines")
    p.add_argument("--artifact", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--baselines", action="store_true")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="baseline rollout forecast")
    p.add_argument("--artifact", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--sigma-feat", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("mc", help="forecast with Monte Carlo uncertainty band")
    p.add_argument("--artifact", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--sigma-feat", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.add_argument("--mc-seed", type=int, default=1)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("scenario", help="counterfactual rollout from a scenario file")
    p.add_argument("--artifact", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--sigma-feat", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("plotdata", help="emit plot-ready CSVs plus rendered figures")
    p.add_argument("--artifact", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--county", action="append", default=None)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=int(os.environ.get("HERDCAST_SEED", 0)))
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("serve", help="run the HTTP service over an artifact")
    p.add_argument("--artifact", required=True, default=os.environ.get("HERDCAST_ARTIFACT"))
    p.add_argument("--port", type=int, default=int(os.environ.get("HERDCAST_PORT", 8080)))
    p.add_argument("--host", default=os.environ.get("HERDCAST_HOST", "127.0.0.1"))
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
