"""CLI subcommands end to end in temp directories, including exit codes."""

import csv
import json
import os

import numpy as np
import pytest

from herdcast.cli import main
from herdcast.panel import generate_fixture, save_panel_csv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    fixture = root / "raw.csv"
    assert main(["fixture", "--out", str(fixture), "--counties", "8",
                 "--years", "5", "--rank", "3", "--seed", "11"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    outdir = workdir / "train"
    code = main(["train", "--input", str(workdir / "raw.csv"), "--outdir", str(outdir),
                 "--epochs", "120", "--seed", "5"])
    assert code == 0
    return outdir / "artifact.json"


def test_ingest_produces_cleaned_and_report(workdir):
    outdir = workdir / "ingest"
    assert main(["ingest", "--input", str(workdir / "raw.csv"), "--outdir", str(outdir)]) == 0
    report = json.loads((outdir / "ingest_report.json").read_text())
    assert report["rows"] == 40
    assert (outdir / "cleaned.csv").exists()


def test_ingest_missing_file_exit_2(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "nope.csv"),
                 "--outdir", str(tmp_path / "out")]) == 2


def test_ingest_bad_schema_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("county,year,onlyone\nCork,2021,3\n")
    assert main(["ingest", "--input", str(bad), "--outdir", str(tmp_path / "out")]) == 2


def test_augment_row_counts(workdir):
    outdir = workdir / "augment"
    assert main(["augment", "--input", str(workdir / "raw.csv"), "--outdir", str(outdir),
                 "--latent", "8", "--epochs", "30", "--replicates", "4", "--seed", "3"]) == 0
    report = json.loads((outdir / "augment_report.json").read_text())
    assert report["total_rows"] == 40 * 5
    with open(outdir / "augmented.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200
    assert sum(1 for r in rows if r["provenance"] == "real") == 40
    assert sum(1 for r in rows if r["provenance"].startswith("vae:")) == 160


def test_pillars_outputs(workdir):
    outdir = workdir / "pillars"
    assert main(["pillars", "--input", str(workdir / "raw.csv"), "--outdir", str(outdir),
                 "--bootstrap", "20", "--seed", "1"]) == 0
    model = json.loads((outdir / "pillar_model.json").read_text())
    assert len(model["pillar_names"]) == 4
    with open(outdir / "loadings.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 16
    assert (outdir / "scree.csv").exists()


def test_score_range_contract(workdir):
    outdir = workdir / "score"
    assert main(["score", "--input", str(workdir / "raw.csv"), "--outdir", str(outdir)]) == 0
    with open(outdir / "scores.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    scaled = np.array([float(r["index_scaled"]) for r in rows])
    assert scaled.min() >= 10.0 and scaled.max() <= 100.0
    assert scaled.min() == 10.0 and scaled.max() == 100.0
    report = json.loads((outdir / "score_report.json").read_text())
    assert len(report["weight_variants"]) == 3


def test_graph_outputs(workdir):
    outdir = workdir / "graph"
    assert main(["graph", "--outdir", str(outdir), "--k", "3"]) == 0
    doc = json.loads((outdir / "graph.json").read_text())
    assert len(doc["names"]) == 26
    connectivity = json.loads((outdir / "connectivity.json").read_text())
    assert connectivity["components"] == 1


def test_evaluate_with_baselines(trained, workdir):
    outdir = workdir / "evaluate"
    assert main(["evaluate", "--artifact", str(trained), "--outdir", str(outdir),
                 "--baselines", "--epochs", "120", "--seed", "2"]) == 0
    report = json.loads((outdir / "evaluation.json").read_text())
    assert set(report) == {"stgnn", "ffnn", "gkr"}
    for split in ("train", "val", "test"):
        assert {"r2", "mae", "mse", "rmse"} <= set(report["ffnn"][split])
        assert {"r2", "mae", "mse", "rmse"} <= set(report["gkr"][split])


def test_forecast_and_scenario_identity(trained, workdir, tmp_path):
    f_out = workdir / "forecast"
    assert main(["forecast", "--artifact", str(trained), "--outdir", str(f_out),
                 "--horizon", "5", "--seed", "4"]) == 0
    zero_file = tmp_path / "zero.json"
    zero_file.write_text(json.dumps({
        "name": "zero", "counties": {"Cork": {"Recycled Cows (%)": 0.0}},
        "horizon": [2026, 2030],
    }))
    s_out = workdir / "scenario_zero"
    assert main(["scenario", "--artifact", str(trained), "--outdir", str(s_out),
                 "--file", str(zero_file), "--seed", "4"]) == 0
    forecast_doc = json.loads((f_out / "forecast.json").read_text())
    scenario_doc = json.loads((s_out / "scenario.json").read_text())
    assert scenario_doc["baseline"] == forecast_doc["baseline"]
    assert scenario_doc["scenario"] == scenario_doc["baseline"]
    assert np.allclose(np.asarray(scenario_doc["uplift"]), 0.0)


def test_scenario_unknown_county_exit_2(trained, workdir, tmp_path):
    bad = tmp_path / "bad_scenario.json"
    bad.write_text(json.dumps({"name": "bad", "counties": {"Atlantis": {"Recycled Cows (%)": 0.1}}}))
    assert main(["scenario", "--artifact", str(trained), "--outdir",
                 str(workdir / "scenario_bad"), "--file", str(bad)]) == 2


def test_mc_outputs(trained, workdir):
    outdir = workdir / "mc"
    assert main(["mc", "--artifact", str(trained), "--outdir", str(outdir),
                 "--trials", "64", "--sigma", "0.01", "--seed", "4"]) == 0
    with open(outdir / "mc.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["q05"] and r["q95"] and r["mc_mean"] for r in rows)
    q05 = np.array([float(r["q05"]) for r in rows])
    q95 = np.array([float(r["q95"]) for r in rows])
    assert (q05 <= q95).all()


def test_plotdata_renders_figures(trained, workdir):
    outdir = workdir / "plots"
    assert main(["plotdata", "--artifact", str(trained), "--outdir", str(outdir),
                 "--trials", "32", "--county", "Cork"]) == 0
    for stem in ("loadings", "scree", "score_heatmap"):
        assert (outdir / f"{stem}.csv").exists()
        assert (outdir / f"{stem}.png").stat().st_size > 0
    assert (outdir / "forecast.csv").exists()
    assert (outdir / "forecast_cork.png").stat().st_size > 0


def test_full_pipeline_byte_identical(tmp_path):
    raw = tmp_path / "raw.csv"
    panel = generate_fixture(6, range(2021, 2026), seed=2, latent_rank=2, noise=0.02)
    save_panel_csv(panel, raw)

    outputs = []
    for run in ("one", "two"):
        outdir = tmp_path / run
        assert main(["train", "--input", str(raw), "--outdir", str(outdir / "train"),
                     "--epochs", "60", "--seed", "7"]) == 0
        assert main(["forecast", "--artifact", str(outdir / "train" / "artifact.json"),
                     "--outdir", str(outdir / "fc"), "--seed", "7"]) == 0
        outputs.append((
            (outdir / "train" / "artifact.json").read_bytes(),
            (outdir / "fc" / "forecast.csv").read_bytes(),
        ))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]


def test_unknown_artifact_exit_2(tmp_path):
    assert main(["forecast", "--artifact", str(tmp_path / "missing.json"),
                 "--outdir", str(tmp_path / "out")]) == 2
