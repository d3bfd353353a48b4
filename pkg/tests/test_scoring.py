"""Weighted scoring, composite index, rescaling, and the robustness suite."""

import numpy as np
import pytest

from herdcast.panel import generate_fixture, standardize
from herdcast.pillars import dominant_features, fit_pca, orient_components
from herdcast.scoring import (
    ScoringError,
    composite_index,
    eigenvalue_omega,
    equal_within_pillar_weights,
    feature_weights,
    pillar_scores,
    rank_agreement,
    regress_index_on_pillars,
    rescale_index,
    score_index,
    sensitivity,
    stability_stats,
    weight_variants_report,
)


def _fitted_model(seed=0, n_counties=12, rank=3, k=3, noise=0.02):
    panel = generate_fixture(n_counties, range(2021, 2026), seed=seed, latent_rank=rank,
                             noise=noise)
    x_sc, _ = standardize(panel)
    model = fit_pca(x_sc, k, feature_names=panel.feature_names)
    dominant_features(model)
    orient_components(model, panel.orientation_signs())
    return panel, x_sc, model


def test_feature_weights_normalized_ratios():
    panel, x_sc, model = _fitted_model()
    model.dominant_sets = [[0, 1]] + model.dominant_sets[1:]
    model.loadings[0, 0], model.loadings[1, 0] = 0.8, 0.2
    weights = feature_weights(model)
    assert weights.weights[0, 0] == pytest.approx(0.8)
    assert weights.weights[1, 0] == pytest.approx(0.2)
    # single-feature pillar gets weight 1
    model.dominant_sets[1] = [4]
    weights = feature_weights(model)
    assert weights.weights[4, 1] == pytest.approx(1.0)


def test_feature_weights_sum_to_one_property(rng):
    for seed in range(5):
        _, x_sc, model = _fitted_model(seed=seed)
        weights = feature_weights(model)
        sums = weights.weights.sum(axis=0)
        assert np.allclose(sums, 1.0, atol=1e-12)
        assert (weights.weights >= 0).all()
        # zero outside dominant sets
        for k, dominant in enumerate(model.dominant_sets):
            outside = np.setdiff1d(np.arange(weights.weights.shape[0]), dominant)
            assert np.allclose(weights.weights[outside, k], 0.0)


def test_pillar_scores_single_feature_identity():
    panel, x_sc, model = _fitted_model()
    model.dominant_sets = [[2]] + model.dominant_sets[1:]
    weights = feature_weights(model)
    _, s, _ = pillar_scores(x_sc, weights)
    sign = weights.signs[2, 0]
    expected = sign * x_sc[:, 2]
    expected = (expected - expected.mean()) / expected.std(ddof=1)
    assert np.allclose(s[:, 0], expected, atol=1e-10)


def test_pillar_scores_standardized_columns():
    _, x_sc, model = _fitted_model(seed=3)
    _, s, stats = pillar_scores(x_sc, feature_weights(model))
    assert np.abs(s.mean(axis=0)).max() < 1e-10
    assert np.abs(s.std(axis=0, ddof=1) - 1.0).max() < 1e-10
    assert stats["std"].min() > 0


def test_pillar_scores_zero_variance_error():
    _, x_sc, model = _fitted_model()
    flat = np.zeros_like(x_sc)
    with pytest.raises(ScoringError, match="zero-variance"):
        pillar_scores(flat, feature_weights(model))


def test_pillar_score_is_convex_combination():
    _, x_sc, model = _fitted_model(seed=1)
    weights = feature_weights(model)
    raw, _, _ = pillar_scores(x_sc, weights)
    oriented = x_sc[:, :, None] * weights.signs[None, :, :]
    lo = np.where(weights.weights[None, :, :] > 0, oriented, np.inf).min(axis=1)
    hi = np.where(weights.weights[None, :, :] > 0, oriented, -np.inf).max(axis=1)
    assert (raw >= lo - 1e-10).all()
    assert (raw <= hi + 1e-10).all()


def test_composite_index_modes():
    s = np.array([[1.0, 1.0, 1.0, 1.0], [2.0, 2.0, 2.0, 2.0]])
    assert np.allclose(composite_index(s), [1.0, 2.0])
    omega = np.array([1.0, 0.0, 0.0, 0.0])
    assert np.allclose(composite_index(s, "eigenvalue", omega), s[:, 0])
    paper_omega = np.array([0.3205, 0.2564, 0.2308, 0.1923])
    idx = composite_index(s, "eigenvalue", paper_omega / paper_omega.sum())
    assert np.allclose(idx, [1.0, 2.0])
    with pytest.raises(ScoringError):
        composite_index(s, "eigenvalue", np.array([0.5, 0.2, 0.2, 0.2]))


def test_rescale_index_examples():
    out = rescale_index(np.array([50.0, 75.0, 100.0]), out_range=(10.0, 100.0))
    assert np.allclose(out, [10.0, 55.0, 100.0])
    vals = np.array([3.0, -1.0, 7.0])
    scaled = rescale_index(vals, out_range=(10.0, 100.0))
    assert scaled[np.argmin(vals)] == pytest.approx(10.0)
    assert scaled[np.argmax(vals)] == pytest.approx(100.0)
    # (0, 100) variant: plain percentage form
    zero_form = rescale_index(vals, out_range=(0.0, 100.0))
    assert np.allclose(zero_form, 100 * (vals - vals.min()) / (vals.max() - vals.min()))
    with pytest.raises(ScoringError):
        rescale_index(np.ones(4))


def test_rescale_affine_equivariance(rng):
    vals = rng.normal(size=30)
    base = rescale_index(vals)
    shifted = rescale_index(3.7 * vals + 11.0)
    assert np.allclose(base, shifted, atol=1e-9)


def test_sensitivity_formula_and_fd_oracle():
    _, x_sc, model = _fitted_model(seed=2)
    weights = feature_weights(model)
    _, _, stats = pillar_scores(x_sc, weights)
    grad = sensitivity(weights, stats["std"])

    # feature outside every dominant set has zero sensitivity
    outside = set(range(x_sc.shape[1])) - {j for ds in model.dominant_sets for j in ds}
    for j in outside:
        assert grad[j] == 0.0

    # frozen-stats finite difference of the composite index
    def index_of(x):
        raw = x @ weights.signed
        s = (raw - stats["mean"]) / stats["std"]
        return composite_index(s)

    h = 1e-6
    for j in range(x_sc.shape[1]):
        bumped = x_sc.copy()
        bumped[:, j] += h
        fd = (index_of(bumped) - index_of(x_sc)) / h
        assert np.allclose(fd, grad[j], atol=1e-6)


def test_sensitivity_single_feature_unit():
    _, x_sc, model = _fitted_model()
    model.dominant_sets = [[0]]
    model.loadings = model.loadings[:, :1]
    model.orientations = np.ones(1)
    weights = feature_weights(model)
    grad = sensitivity(weights, np.ones(1))
    assert grad[0] == pytest.approx(1.0)


def test_rank_agreement_examples():
    assert rank_agreement(np.array([1, 2, 3]), np.array([1, 2, 3])) == (1.0, 1.0)
    rho, tau = rank_agreement(np.array([1, 2, 3]), np.array([3, 2, 1]))
    assert (rho, tau) == (-1.0, -1.0)
    rho, tau = rank_agreement(np.array([1, 2, 3]), np.array([1, 3, 2]))
    assert rho == pytest.approx(0.5)
    assert tau == pytest.approx(1.0 / 3.0)


def test_rank_agreement_bruteforce_oracle(rng):
    def bruteforce(a, b):
        n = len(a)
        conc = disc = 0
        for i in range(n):
            for j in range(i + 1, n):
                prod = (a[i] - a[j]) * (b[i] - b[j])
                conc += prod > 0
                disc += prod < 0
        return (conc - disc) / (n * (n - 1) / 2)

    for _ in range(10):
        a, b = rng.normal(size=12), rng.normal(size=12)
        _, tau = rank_agreement(a, b)
        assert tau == pytest.approx(bruteforce(a, b))


def test_weight_variants_report_contract():
    _, x_sc, model = _fitted_model(seed=4)
    rows = weight_variants_report(x_sc, model)
    assert len(rows) == 3
    self_row = next(r for r in rows if r["variant"] == "pca_weights")
    assert self_row["spearman"] == pytest.approx(1.0)
    assert self_row["kendall"] == pytest.approx(1.0)
    for row in rows:
        assert -1.0 <= row["spearman"] <= 1.0
        assert -1.0 <= row["kendall"] <= 1.0


def test_weight_variants_single_pillar_collapse():
    _, x_sc, model = _fitted_model(seed=5, k=1)
    model.dominant_sets = [[0]]
    rows = weight_variants_report(x_sc, model)
    for row in rows:
        assert row["spearman"] == pytest.approx(1.0)
        assert row["kendall"] == pytest.approx(1.0)


def test_stability_stats_hand_case():
    counties = ["A", "B", "C"]
    years = [2021, 2022]
    grid = np.array([[50.0, 60.0], [70.0, 70.0], [10.0, 30.0]])
    report = stability_stats(counties, years, grid)
    per = {r["county"]: r for r in report["per_county"]}
    assert per["A"]["mean"] == pytest.approx(55.0)
    assert per["A"]["std"] == pytest.approx(np.std([50, 60], ddof=1))
    assert per["B"]["std"] == pytest.approx(0.0)
    assert len(report["year_pairs"]) == 1
    assert report["year_pairs"][0]["spearman"] == pytest.approx(1.0)


def test_regress_index_on_pillars_identities(rng):
    _, x_sc, model = _fitted_model(seed=6)
    _, s, _ = pillar_scores(x_sc, feature_weights(model))
    index = composite_index(s)
    alpha, resid = regress_index_on_pillars(index, s)
    k = s.shape[1]
    assert alpha[0] == pytest.approx(index.mean(), abs=1e-10)
    assert np.allclose(alpha[1:], 1.0 / k, atol=1e-8)
    assert resid < 1e-10

    const = np.full(s.shape[0], 4.2)
    alpha_c, _ = regress_index_on_pillars(const, s)
    assert alpha_c[0] == pytest.approx(4.2)
    assert np.abs(alpha_c[1:]).max() < 1e-8

    alpha_1, _ = regress_index_on_pillars(s[:, 0], s)
    assert alpha_1[1] == pytest.approx(1.0, abs=1e-8)
    assert np.abs(alpha_1[2:]).max() < 1e-8


def test_monotone_response_frozen_stats():
    _, x_sc, model = _fitted_model(seed=7)
    weights = feature_weights(model)
    _, _, stats = pillar_scores(x_sc, weights)
    grad = sensitivity(weights, stats["std"])
    # pick a dominant feature with positive oriented loading
    k0 = 0
    j = model.dominant_sets[k0][int(np.argmax(weights.signed[model.dominant_sets[k0], k0]))]
    if weights.signed[j, k0] <= 0:
        pytest.skip("no positively oriented dominant feature in pillar 0 for this fixture")
    assert grad[j] >= 0  # other pillars can only add nonneg terms in this direction
    bumped = x_sc.copy()
    bumped[:, j] += 0.5
    raw0 = x_sc @ weights.signed
    raw1 = bumped @ weights.signed
    s0 = composite_index((raw0 - stats["mean"]) / stats["std"])
    s1 = composite_index((raw1 - stats["mean"]) / stats["std"])
    if grad[j] > 0:
        assert (s1 > s0).all()


def test_argmax_invariance_on_dominant_column(rng):
    _, x_sc, model = _fitted_model(seed=8, k=4)
    # one pillar dominating pointwise forces both aggregations to agree on top
    s = rng.normal(size=(20, 4))
    s[:, 0] = np.abs(s).sum(axis=1) + 1.0
    top_equal = np.argmax(composite_index(s))
    top_eig = np.argmax(composite_index(s, "eigenvalue", eigenvalue_omega(model)))
    assert top_equal == top_eig


def test_score_index_frozen_bounds_are_comparable():
    panel, x_sc, model = _fitted_model(seed=9)
    weights = feature_weights(model)
    full = score_index(x_sc, model, weights)
    bounds = (full.raw.min(), full.raw.max())
    _, _, stats = pillar_scores(x_sc, weights)
    subset = score_index(x_sc[:10], model, weights, bounds=bounds, pillar_stats=stats)
    assert np.allclose(subset.scaled, full.scaled[:10], atol=1e-10)


def test_equal_within_pillar_weights_uniform():
    _, _, model = _fitted_model(seed=10)
    eq = equal_within_pillar_weights(model)
    for k, dominant in enumerate(model.dominant_sets):
        assert np.allclose(eq.weights[dominant, k], 1.0 / len(dominant))
