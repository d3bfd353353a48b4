"""Figure rendering for CLI reports: every plot function writes a PNG next to
the delimited data the CLI already emits."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .forecast import ForecastBundle
from .pillars import PillarModel, variance_ratios


def save_scree(model: PillarModel, path) -> None:
    ratios = variance_ratios(model)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, len(ratios) + 1), ratios, "o-")
    ax.axvline(model.n_components + 0.5, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("component")
    ax.set_ylabel("variance ratio")
    ax.set_title("Scree")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loadings_heatmap(model: PillarModel, path) -> None:
    fig, ax = plt.subplots(figsize=(7, max(4, 0.3 * len(model.feature_names))))
    names = model.pillar_names or [f"Pillar {k + 1}" for k in range(model.n_components)]
    im = ax.imshow(model.loadings, aspect="auto", cmap="RdBu_r",
                   vmin=-np.abs(model.loadings).max(), vmax=np.abs(model.loadings).max())
    ax.set_xticks(range(model.n_components), names, rotation=30, ha="right")
    ax.set_yticks(range(len(model.feature_names)), model.feature_names, fontsize=7)
    fig.colorbar(im, ax=ax, label="loading")
    ax.set_title("Component loadings")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_score_heatmap(county_names: list[str], years: list[int],
                       scores: np.ndarray, path, title: str = "Sustainability score") -> None:
    """``scores`` is (N_c, T) in display units."""
    fig, ax = plt.subplots(figsize=(1.2 * len(years) + 3, max(4, 0.28 * len(county_names))))
    im = ax.imshow(scores, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(years)), [str(y) for y in years])
    ax.set_yticks(range(len(county_names)), county_names, fontsize=7)
    fig.colorbar(im, ax=ax, label="score")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_forecast_band(bundle: ForecastBundle, county: str, path,
                       history_years: list[int] | None = None,
                       history_scores: np.ndarray | None = None) -> None:
    c = bundle.county_index(county)
    fig, ax = plt.subplots(figsize=(7, 4))
    if history_years is not None and history_scores is not None:
        ax.plot(history_years, history_scores, "o-", color="#444", label="history")
    ax.plot(bundle.years, bundle.baseline[c], "o-", color="tab:blue", label="baseline forecast")
    if bundle.q05 is not None and bundle.q95 is not None:
        ax.fill_between(bundle.years, bundle.q05[c], bundle.q95[c],
                        alpha=0.25, color="tab:blue", label="5-95% band")
    if bundle.scenario is not None:
        ax.plot(bundle.years, bundle.scenario[c], "s--", color="tab:orange",
                label=bundle.scenario_name or "scenario")
        for year, base, scen in zip(bundle.years, bundle.baseline[c], bundle.scenario[c]):
            ax.annotate(f"{scen - base:+.1f}", (year, scen), fontsize=7,
                        textcoords="offset points", xytext=(0, 6))
    ax.set_xlabel("year")
    ax.set_ylabel("score")
    ax.set_title(county)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_epoch_curves(log: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [e["epoch"] for e in log]
    ax.plot(epochs, [e["train_r2"] for e in log], label="train R2")
    if log and "val_r2" in log[0]:
        ax.plot(epochs, [e["val_r2"] for e in log], label="val R2")
    ax.set_xlabel("epoch")
    ax.set_ylabel("R2")
    ax.set_ylim(-0.1, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
