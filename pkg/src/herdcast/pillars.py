"""Operational pillar extraction: covariance PCA, sign calibration against
indicator orientation, dominant-feature selection, and robustness checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PILLAR_KEYWORDS: list[tuple[str, tuple[str, ...]]] = [
    ("Reproductive Efficiency", ("calving", "calved", "calves", "recycled", "fertility")),
    ("Genetic Management", ("ai", "sire", "survey")),
    ("Herd Health", ("mortality", "culled", "culling", "dead")),
    ("Herd Management", ("replacement", "heifer", "lactation")),
]


class PillarError(ValueError):
    pass


@dataclass
class PillarModel:
    loadings: np.ndarray                  # (p, K), orthonormal columns
    eigenvalues: np.ndarray               # (p,), descending
    feature_names: list[str]
    orientations: np.ndarray | None = None        # (K,) of +-1
    dominant_sets: list[list[int]] | None = None   # feature indices per pillar
    tau: np.ndarray | None = None                  # (K,) loading thresholds
    percentile: float = 75.0
    pillar_names: list[str] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    def oriented_loadings(self) -> np.ndarray:
        if self.orientations is None:
            raise PillarError("model has no orientations; run orient_components first")
        return self.loadings * self.orientations[None, :]


@dataclass
class PillarScores:
    raw: np.ndarray           # Z = X_sc @ W, (N, K)
    standardized: np.ndarray  # oriented, zero mean / unit std per column


def fit_pca(x_sc: np.ndarray, n_components: int,
            feature_names: list[str] | None = None) -> PillarModel:
    """Eigendecomposition of the sample covariance (N-1 denominator).

    The returned eigenvalues cover all p directions (descending); only the
    leading ``n_components`` eigenvectors are kept as loadings.  Before any
    domain orientation, each column is flipped so its largest-magnitude entry
    is positive, making results reproducible across eigensolvers.
    """
    x_sc = np.asarray(x_sc, dtype=float)
    if not np.isfinite(x_sc).all():
        raise PillarError("non-finite values in standardized matrix")
    n, p = x_sc.shape
    if n < 2:
        raise PillarError("need at least 2 observations")
    if n_components > p:
        raise PillarError(f"n_components={n_components} exceeds feature count {p}")
    cov = x_sc.T @ x_sc / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    loadings = eigvecs[:, :n_components].copy()
    for k in range(n_components):
        pivot = np.argmax(np.abs(loadings[:, k]))
        if loadings[pivot, k] < 0:
            loadings[:, k] = -loadings[:, k]
    return PillarModel(
        loadings=loadings,
        eigenvalues=eigvals,
        feature_names=list(feature_names) if feature_names is not None else [f"f{j}" for j in range(p)],
    )


def variance_ratios(model: PillarModel) -> np.ndarray:
    """Share of total variance per direction; sums to 1."""
    total = model.eigenvalues.sum()
    if total <= 0:
        raise PillarError("non-positive total variance")
    return model.eigenvalues / total


def dominant_features(model: PillarModel, percentile: float = 75.0) -> PillarModel:
    """Per-pillar threshold at the given percentile of absolute loadings
    (linear interpolation); features at or above the threshold are dominant."""
    k = model.n_components
    tau = np.zeros(k)
    sets: list[list[int]] = []
    for c in range(k):
        mags = np.abs(model.loadings[:, c])
        tau[c] = np.percentile(mags, percentile)
        sets.append([int(j) for j in np.flatnonzero(mags >= tau[c])])
        if not sets[-1]:
            raise PillarError(f"pillar {c}: empty dominant set")
    model.tau = tau
    model.dominant_sets = sets
    model.percentile = percentile
    return model


def orient_components(model: PillarModel, orientation_signs: np.ndarray) -> PillarModel:
    """Choose s_k in {+1, -1} so each pillar reads higher-is-better.

    ``orientation_signs`` holds +1 for beneficial and -1 for detrimental
    features.  s_k follows the orientation-signed sum of dominant loadings;
    an exact zero resolves to +1.
    """
    if model.dominant_sets is None:
        raise PillarError("dominant sets required before orientation; run dominant_features")
    signs = np.ones(model.n_components)
    for k, dominant in enumerate(model.dominant_sets):
        total = sum(orientation_signs[j] * model.loadings[j, k] for j in dominant)
        signs[k] = 1.0 if total >= 0 else -1.0
    model.orientations = signs
    model.pillar_names = _name_pillars(model)
    return model


def _name_pillars(model: PillarModel) -> list[str]:
    """Keyword vote over dominant feature names; first match wins a label,
    repeats and no-hits fall back to 'Pillar k'."""
    names: list[str] = []
    taken: set[str] = set()
    for k, dominant in enumerate(model.dominant_sets or []):
        tokens: list[str] = []
        for j in dominant:
            clean = model.feature_names[j].lower().replace("(%)", " ").replace("-", " ")
            tokens.extend(t.strip("().,") for t in clean.split())
        best, best_hits = None, 0
        for label, keywords in PILLAR_KEYWORDS:
            hits = sum(1 for t in tokens if any(t.startswith(kw) or t == kw for kw in keywords))
            if hits > best_hits and label not in taken:
                best, best_hits = label, hits
        if best is None:
            names.append(f"Pillar {k + 1}")
        else:
            names.append(best)
            taken.add(best)
    return names


def project_scores(x_sc: np.ndarray, model: PillarModel) -> PillarScores:
    """Raw component scores Z = X_sc W and their oriented standardized form."""
    raw = x_sc @ model.loadings
    oriented = raw * model.orientations[None, :] if model.orientations is not None else raw
    std = oriented.std(axis=0, ddof=1)
    flat = np.flatnonzero(std <= 0)
    if flat.size:
        raise PillarError(f"zero-variance component(s): {flat.tolist()}")
    return PillarScores(raw=raw, standardized=(oriented - oriented.mean(axis=0)) / std)


def bootstrap_stability(x_sc: np.ndarray, model: PillarModel, n_replicates: int,
                        seed: int) -> dict:
    """Resample rows with replacement, refit, and report the alignment between
    each original loading vector and its replicate.

    Alignment is the uncentered correlation (cosine of the unit loading
    vectors), sign-resolved by the absolute value.  Centered Pearson
    degenerates when a component loads near-uniformly on all features, which
    is exactly the stable case this check must score highly.
    """
    rng = np.random.default_rng(seed)
    n = x_sc.shape[0]
    k = model.n_components
    correlations = np.zeros((n_replicates, k))
    for b in range(n_replicates):
        idx = rng.integers(0, n, size=n)
        refit = fit_pca(x_sc[idx], k)
        for c in range(k):
            correlations[b, c] = abs(model.loadings[:, c] @ refit.loadings[:, c])
    if n_replicates == 0:
        return {"replicates": 0, "mean": [], "min": []}
    return {
        "replicates": n_replicates,
        "mean": correlations.mean(axis=0).tolist(),
        "min": correlations.min(axis=0).tolist(),
    }


def scaling_robustness(raw_values: np.ndarray, model: PillarModel) -> np.ndarray:
    """|cos| similarity per pillar between the model's loadings (z-score
    preprocessing) and loadings refit under min-max preprocessing."""
    span = raw_values.max(axis=0) - raw_values.min(axis=0)
    if np.any(span <= 0):
        raise PillarError("constant feature prevents min-max comparison")
    unit = (raw_values - raw_values.min(axis=0)) / span
    centered = unit - unit.mean(axis=0)
    alt = fit_pca(centered, model.n_components)
    cosines = np.zeros(model.n_components)
    for k in range(model.n_components):
        a, b = model.loadings[:, k], alt.loadings[:, k]
        cosines[k] = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return cosines


def pillar_index_correlation(scores: PillarScores, index: np.ndarray) -> np.ndarray:
    """Pearson correlation between each standardized pillar column and the
    composite index."""
    s = scores.standardized
    y = np.asarray(index, dtype=float)
    yc = y - y.mean()
    out = np.zeros(s.shape[1])
    for k in range(s.shape[1]):
        sc = s[:, k] - s[:, k].mean()
        out[k] = (sc @ yc) / np.sqrt((sc @ sc) * (yc @ yc))
    return out


def model_to_json_dict(model: PillarModel) -> dict:
    return {
        "schema_version": 1,
        "loadings": model.loadings.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "feature_names": model.feature_names,
        "orientations": None if model.orientations is None else model.orientations.tolist(),
        "dominant_sets": model.dominant_sets,
        "tau": None if model.tau is None else model.tau.tolist(),
        "percentile": model.percentile,
        "pillar_names": model.pillar_names,
    }


def model_from_json_dict(doc: dict) -> PillarModel:
    return PillarModel(
        loadings=np.asarray(doc["loadings"]),
        eigenvalues=np.asarray(doc["eigenvalues"]),
        feature_names=list(doc["feature_names"]),
        orientations=None if doc["orientations"] is None else np.asarray(doc["orientations"]),
        dominant_sets=doc["dominant_sets"],
        tau=None if doc["tau"] is None else np.asarray(doc["tau"]),
        percentile=float(doc["percentile"]),
        pillar_names=list(doc["pillar_names"]),
    )


def save_model_json(model: PillarModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model), fh, sort_keys=True)


def load_model_json(path) -> PillarModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json_dict(json.load(fh))


def export_loadings_csv(model: PillarModel, path) -> None:
    """Feature x pillar loading table for heatmap rendering."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        names = model.pillar_names or [f"Pillar {k + 1}" for k in range(model.n_components)]
        writer.writerow(["feature"] + names)
        for j, feature in enumerate(model.feature_names):
            writer.writerow([feature] + [repr(float(v)) for v in model.loadings[j]])
