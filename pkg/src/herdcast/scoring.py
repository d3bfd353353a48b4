"""Weighted pillar scores, the composite sustainability index, and the
robustness/validation suite around it (weight variants, rank agreement,
stability summaries, OLS alignment)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pillars import PillarError, PillarModel, PillarScores


class ScoringError(ValueError):
    pass


@dataclass
class ScoreWeights:
    weights: np.ndarray        # (p, K), nonnegative, columns sum to 1
    signs: np.ndarray          # (p, K) in {-1, 0, +1}: orientation folded per feature
    aggregation: str = "equal"          # "equal" | "eigenvalue"
    omega: np.ndarray | None = None     # (K,) pillar weights in eigenvalue mode

    @property
    def signed(self) -> np.ndarray:
        return self.weights * self.signs


@dataclass
class SustainabilityIndex:
    raw: np.ndarray            # I, (N,)
    scaled: np.ndarray         # I*, (N,)
    scale_range: tuple[float, float]
    pillar_raw: np.ndarray     # P, (N, K)
    pillar_std: np.ndarray     # S, (N, K)


def feature_weights(model: PillarModel) -> ScoreWeights:
    """Within-pillar weights: absolute oriented loadings of the dominant set,
    normalized to sum to one; zero elsewhere.  The sign matrix re-applies the
    orientation so weighted features point higher-is-better."""
    if model.dominant_sets is None or model.orientations is None:
        raise PillarError("model needs dominant sets and orientations")
    p, k = model.loadings.shape
    weights = np.zeros((p, k))
    signs = np.zeros((p, k))
    oriented = model.oriented_loadings()
    for c, dominant in enumerate(model.dominant_sets):
        total = sum(abs(oriented[j, c]) for j in dominant)
        if total <= 0:
            raise ScoringError(f"pillar {c}: dominant loadings sum to zero")
        for j in dominant:
            weights[j, c] = abs(oriented[j, c]) / total
            signs[j, c] = np.sign(oriented[j, c]) if oriented[j, c] != 0 else 1.0
    return ScoreWeights(weights=weights, signs=signs)


def equal_within_pillar_weights(model: PillarModel) -> ScoreWeights:
    """Robustness variant: 1/|J_k| for dominant features, orientation kept."""
    base = feature_weights(model)
    weights = np.zeros_like(base.weights)
    for c, dominant in enumerate(model.dominant_sets):
        for j in dominant:
            weights[j, c] = 1.0 / len(dominant)
    return ScoreWeights(weights=weights, signs=base.signs)


def pillar_scores(x_sc: np.ndarray, weights: ScoreWeights,
                  standardize_pillars: bool = True) -> tuple[np.ndarray, np.ndarray, dict]:
    """Convex combination of oriented standardized features per pillar.

    Returns (P, S, stats) where S is the column-standardized P (or P itself
    when ``standardize_pillars`` is off) and stats carries the per-pillar
    mean/std frozen for later sensitivity and forecasting use.
    """
    raw = x_sc @ weights.signed
    mean = raw.mean(axis=0)
    std = raw.std(axis=0, ddof=1)
    flat = np.flatnonzero(std <= 0)
    if flat.size:
        raise ScoringError(f"zero-variance pillar(s): {flat.tolist()}")
    standardized = (raw - mean) / std if standardize_pillars else raw.copy()
    return raw, standardized, {"mean": mean, "std": std}


def composite_index(pillar_std: np.ndarray, mode: str = "equal",
                    omega: np.ndarray | None = None) -> np.ndarray:
    if mode == "equal":
        return pillar_std.mean(axis=1)
    if mode == "eigenvalue":
        if omega is None:
            raise ScoringError("eigenvalue mode requires omega")
        omega = np.asarray(omega, dtype=float)
        if abs(omega.sum() - 1.0) > 1e-9:
            raise ScoringError("omega must sum to 1")
        return pillar_std @ omega
    raise ScoringError(f"unknown aggregation mode {mode!r}")


def eigenvalue_omega(model: PillarModel) -> np.ndarray:
    """Pillar weights proportional to retained eigenvalues."""
    lead = model.eigenvalues[: model.n_components]
    return lead / lead.sum()


def rescale_index(index: np.ndarray, bounds: tuple[float, float] | None = None,
                  out_range: tuple[float, float] = (10.0, 100.0)) -> np.ndarray:
    """Affine map of the raw index onto ``out_range``.

    ``bounds`` freezes the (min, max) population used for the map; pass the
    train-time bounds when scoring new observations so values stay comparable.
    """
    lo, hi = out_range
    imin, imax = bounds if bounds is not None else (index.min(), index.max())
    if imax <= imin:
        raise ScoringError("index has no spread; cannot rescale")
    return lo + (hi - lo) * (index - imin) / (imax - imin)


def sensitivity(weights: ScoreWeights, pillar_std_dev: np.ndarray) -> np.ndarray:
    """Local effect of each standardized indicator on the equal-weight index,
    holding the pillar standardization constants frozen."""
    k = weights.weights.shape[1]
    return (weights.signed / pillar_std_dev[None, :]).sum(axis=1) / k


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_agreement(scores_a: np.ndarray, scores_b: np.ndarray) -> tuple[float, float]:
    """(Spearman rho with averaged ties, Kendall tau-b)."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ScoringError("rank_agreement expects two equal-length vectors")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra_c, rb_c = ra - ra.mean(), rb - rb.mean()
    denom = np.sqrt((ra_c @ ra_c) * (rb_c @ rb_c))
    rho = float((ra_c @ rb_c) / denom) if denom > 0 else 0.0

    n = len(a)
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da, db = a[i] - a[j], b[i] - b[j]
            if da == 0 and db == 0:
                continue
            if da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif da * db > 0:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom_t = np.sqrt((n0 - ties_a) * (n0 - ties_b))
    tau = float((concordant - discordant) / denom_t) if denom_t > 0 else 0.0
    return rho, tau


def weight_variants_report(x_sc: np.ndarray, model: PillarModel,
                           out_range: tuple[float, float] = (10.0, 100.0)) -> list[dict]:
    """Rank agreement of each weighting variant against the default index
    (PCA within-pillar weights, equal-weight pillar aggregation)."""
    base_w = feature_weights(model)
    _, s_base, _ = pillar_scores(x_sc, base_w)
    default = rescale_index(composite_index(s_base), out_range=out_range)

    rows = []
    variants: list[tuple[str, np.ndarray]] = [("pca_weights", default)]
    _, s_eq, _ = pillar_scores(x_sc, equal_within_pillar_weights(model))
    variants.append(("equal_within_pillar", rescale_index(composite_index(s_eq), out_range=out_range)))
    eig = composite_index(s_base, mode="eigenvalue", omega=eigenvalue_omega(model))
    variants.append(("eigenvalue_aggregation", rescale_index(eig, out_range=out_range)))

    for name, scores in variants:
        rho, tau = rank_agreement(default, scores)
        rows.append({"variant": name, "spearman": rho, "kendall": tau})
    return rows


def stability_stats(county_names: list[str], years: list[int],
                    scaled_by_county_year: np.ndarray) -> dict:
    """Per-county mean/std of the scaled index across years, plus Spearman
    rank correlation of the cross-county ranking for every year pair.

    ``scaled_by_county_year`` is (N_c, T) aligned with the given name/year order.
    """
    means = scaled_by_county_year.mean(axis=1)
    stds = scaled_by_county_year.std(axis=1, ddof=1) if len(years) > 1 else np.zeros(len(county_names))
    pairs = []
    for i in range(len(years)):
        for j in range(i + 1, len(years)):
            rho, _ = rank_agreement(scaled_by_county_year[:, i], scaled_by_county_year[:, j])
            pairs.append({"year_a": years[i], "year_b": years[j], "spearman": rho})
    return {
        "per_county": [
            {"county": c, "mean": float(means[i]), "std": float(stds[i])}
            for i, c in enumerate(county_names)
        ],
        "year_pairs": pairs,
    }


def regress_index_on_pillars(index: np.ndarray, pillar_std: np.ndarray) -> tuple[np.ndarray, float]:
    """OLS of the index on [1, S] via least squares; returns (alpha, residual
    variance) with alpha[0] the intercept."""
    n, k = pillar_std.shape
    design = np.hstack([np.ones((n, 1)), pillar_std])
    alpha, *_ = np.linalg.lstsq(design, index, rcond=None)
    residual = index - design @ alpha
    dof = max(n - (k + 1), 1)
    return alpha, float(residual @ residual / dof)


def score_index(x_sc: np.ndarray, model: PillarModel, weights: ScoreWeights | None = None,
                mode: str = "equal", bounds: tuple[float, float] | None = None,
                out_range: tuple[float, float] = (10.0, 100.0),
                standardize_pillars: bool = True,
                pillar_stats: dict | None = None) -> SustainabilityIndex:
    """End-to-end scoring: features -> pillar scores -> index -> rescaled index.

    When ``pillar_stats`` (frozen mean/std) is provided the pillar
    standardization reuses it instead of refitting, which keeps forecast-time
    scores on the train-time scale.
    """
    weights = weights if weights is not None else feature_weights(model)
    raw = x_sc @ weights.signed
    if pillar_stats is None:
        _, std_scores, stats = pillar_scores(x_sc, weights, standardize_pillars)
    else:
        stats = pillar_stats
        std_scores = (raw - stats["mean"]) / stats["std"] if standardize_pillars else raw
    omega = weights.omega
    if mode == "eigenvalue" and omega is None:
        raise ScoringError("eigenvalue mode requires omega on the weights")
    index = composite_index(std_scores, mode=mode, omega=omega)
    scaled = rescale_index(index, bounds=bounds, out_range=out_range)
    return SustainabilityIndex(
        raw=index,
        scaled=scaled,
        scale_range=out_range,
        pillar_raw=raw,
        pillar_std=std_scores,
    )


def export_round(values: np.ndarray) -> np.ndarray:
    """1-decimal rounding applied to exported tables only."""
    return np.round(values, 1)
