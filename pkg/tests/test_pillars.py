"""Component extraction, orientation, dominant sets, and robustness checks."""

import numpy as np
import pytest

from herdcast.panel import generate_fixture, standardize
from herdcast.pillars import (
    PillarError,
    bootstrap_stability,
    dominant_features,
    fit_pca,
    model_from_json_dict,
    model_to_json_dict,
    orient_components,
    pillar_index_correlation,
    project_scores,
    scaling_robustness,
    variance_ratios,
)


def _sample_with_cov(cov: np.ndarray, n: int, rng) -> np.ndarray:
    """Rows whose *sample* covariance is exactly ``cov``."""
    x = rng.normal(size=(n, cov.shape[0]))
    x -= x.mean(axis=0)
    empirical = x.T @ x / (n - 1)
    chol_target = np.linalg.cholesky(cov)
    chol_emp = np.linalg.cholesky(empirical)
    return x @ np.linalg.inv(chol_emp).T @ chol_target.T


def _bruteforce_eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Independent eigensolve: characteristic-polynomial roots plus SVD null
    spaces, no shared code path with numpy's eigh."""
    coeffs = np.poly(cov)
    roots = np.roots(coeffs).real
    roots = np.sort(roots)[::-1]
    vectors = []
    for lam in roots:
        shifted = cov - lam * np.eye(cov.shape[0])
        _, _, vt = np.linalg.svd(shifted)
        vectors.append(vt[-1])
    return roots, np.array(vectors).T


def test_diagonal_covariance_recovered(rng):
    cov = np.diag([2.0, 1.0])
    x = _sample_with_cov(cov, 200, rng)
    model = fit_pca(x, 2)
    assert np.allclose(model.eigenvalues, [2.0, 1.0], atol=1e-8)
    assert np.allclose(np.abs(model.loadings), np.eye(2), atol=1e-8)


def test_replicated_rows_leave_structure(rng):
    x = rng.normal(size=(40, 5))
    base = fit_pca(x, 3)
    doubled = fit_pca(np.vstack([x, x]), 3)
    assert np.allclose(base.loadings, doubled.loadings, atol=1e-8)
    # with the N-1 covariance, doubling rows scales eigenvalues by 2(N-1)/(2N-1)
    factor = 2 * (40 - 1) / (2 * 40 - 1)
    assert np.allclose(doubled.eigenvalues, base.eigenvalues * factor, atol=1e-8)


def test_eigenpairs_match_bruteforce_oracle(rng):
    for _ in range(10):
        raw = rng.normal(size=(3, 3))
        cov = raw @ raw.T + 0.5 * np.eye(3)
        x = _sample_with_cov(cov, 50, rng)
        model = fit_pca(x, 3)
        ref_vals, ref_vecs = _bruteforce_eigh(cov)
        assert np.allclose(model.eigenvalues, ref_vals, atol=1e-8)
        for k in range(3):
            dot = abs(model.loadings[:, k] @ ref_vecs[:, k])
            assert dot == pytest.approx(1.0, abs=1e-6)


def test_orthonormal_loadings(rng):
    x = rng.normal(size=(30, 6))
    model = fit_pca(x, 4)
    gram = model.loadings.T @ model.loadings
    assert np.abs(gram - np.eye(4)).max() < 1e-8
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert model.eigenvalues.min() > -1e-10


def test_variance_ratios_examples():
    model = fit_pca(np.random.default_rng(0).normal(size=(20, 2)), 2)
    model.eigenvalues = np.array([2.0, 1.0])
    assert np.allclose(variance_ratios(model), [2 / 3, 1 / 3])
    model.eigenvalues = np.array([1.0, 1.0])
    assert np.allclose(variance_ratios(model), [0.5, 0.5])
    model.eigenvalues = np.array([3.0, 2.0])
    assert variance_ratios(model).sum() == pytest.approx(1.0, abs=1e-10)


def test_dominant_features_percentile_rule(rng):
    model = fit_pca(rng.normal(size=(30, 4)), 1)
    model.loadings = np.array([[0.9], [0.1], [0.1], [0.1]])
    dominant_features(model, 75.0)
    assert model.dominant_sets == [[0]]
    model.loadings = np.full((4, 1), 0.5)
    dominant_features(model, 75.0)
    assert model.dominant_sets == [[0, 1, 2, 3]]
    dominant_features(model, 0.0)
    assert model.dominant_sets == [[0, 1, 2, 3]]


def test_orientation_sign_rule(rng):
    model = fit_pca(rng.normal(size=(30, 3)), 1)
    model.loadings = np.array([[0.9], [0.1], [0.05]])
    dominant_features(model, 75.0)
    # dominant feature 0 is detrimental and loads positively -> flip
    orient_components(model, np.array([-1.0, 1.0, 1.0]))
    assert model.orientations[0] == -1.0
    # beneficial-only loading keeps +1
    orient_components(model, np.array([1.0, 1.0, 1.0]))
    assert model.orientations[0] == 1.0


def test_orientation_sign_symmetry(rng):
    x = rng.normal(size=(40, 5))
    signs = np.array([1.0, -1.0, 1.0, -1.0, 1.0])
    model = fit_pca(x, 2)
    dominant_features(model, 50.0)
    orient_components(model, signs)
    oriented = model.oriented_loadings().copy()

    flipped = fit_pca(x, 2)
    flipped.loadings = -model.loadings
    flipped.dominant_sets = model.dominant_sets
    flipped.tau = model.tau
    orient_components(flipped, signs)
    assert np.allclose(flipped.orientations, -model.orientations)
    assert np.allclose(flipped.oriented_loadings(), oriented)


def test_orientation_idempotent(rng):
    x = rng.normal(size=(40, 5))
    signs = np.ones(5)
    model = fit_pca(x, 3)
    dominant_features(model)
    once = orient_components(model, signs).orientations.copy()
    twice = orient_components(model, signs).orientations
    assert np.array_equal(once, twice)


def test_project_scores_identities(rng):
    x = rng.normal(size=(50, 4))
    x -= x.mean(axis=0)
    model = fit_pca(x, 2)
    dominant_features(model)
    orient_components(model, np.ones(4))
    scores = project_scores(x, model)
    assert np.allclose(scores.raw, x @ model.loadings)
    assert np.abs(scores.standardized.mean(axis=0)).max() < 1e-8
    assert np.abs(scores.standardized.std(axis=0, ddof=1) - 1.0).max() < 1e-8
    # single observation equal to the top eigenvector projects to (1, 0)
    single = model.loadings[:, 0][None, :]
    assert np.allclose(single @ model.loadings, [[1.0, 0.0]], atol=1e-10)


def test_project_scores_zero_matrix(rng):
    model = fit_pca(rng.normal(size=(30, 3)), 2)
    raw = np.zeros((5, 3)) @ model.loadings
    assert np.allclose(raw, 0.0)
    with pytest.raises(PillarError):
        project_scores(np.zeros((5, 3)), model)


def test_reconstruction_explains_leading_variance(rng):
    panel = generate_fixture(12, range(2021, 2026), seed=4, latent_rank=3, noise=0.0)
    x_sc, _ = standardize(panel)
    model = fit_pca(x_sc, 3)
    reconstructed = x_sc @ model.loadings @ model.loadings.T
    total = np.trace(x_sc.T @ x_sc / (x_sc.shape[0] - 1))
    kept = np.trace(reconstructed.T @ reconstructed / (x_sc.shape[0] - 1))
    assert kept == pytest.approx(model.eigenvalues[:3].sum(), abs=1e-8)
    assert total == pytest.approx(x_sc.shape[1], abs=1e-8)


def test_bootstrap_stability_on_planted_structure():
    # seed 0 has a wide eigengap, so component identity is resampling-stable
    panel = generate_fixture(20, range(2021, 2026), seed=0, latent_rank=2, noise=0.0)
    x_sc, _ = standardize(panel)
    model = fit_pca(x_sc, 2)
    report = bootstrap_stability(x_sc, model, 30, seed=1)
    assert min(report["min"]) > 0.99
    again = bootstrap_stability(x_sc, model, 30, seed=1)
    assert report == again
    assert bootstrap_stability(x_sc, model, 0, seed=1)["mean"] == []


def test_scaling_robustness_rank_fixture():
    panel = generate_fixture(15, range(2021, 2026), seed=3, latent_rank=2, noise=0.0)
    x_sc, _ = standardize(panel)
    model = fit_pca(x_sc, 2)
    cosines = scaling_robustness(panel.values, model)
    assert cosines.min() > 0.95


def test_pillar_index_correlation_limits(rng):
    panel = generate_fixture(10, range(2021, 2026), seed=6, latent_rank=3)
    x_sc, _ = standardize(panel)
    model = fit_pca(x_sc, 2)
    dominant_features(model)
    orient_components(model, np.ones(x_sc.shape[1]))
    scores = project_scores(x_sc, model)
    rho = pillar_index_correlation(scores, scores.standardized[:, 0])
    assert rho[0] == pytest.approx(1.0, abs=1e-10)
    rho_neg = pillar_index_correlation(scores, -scores.standardized[:, 1])
    assert rho_neg[1] == pytest.approx(-1.0, abs=1e-10)
    noise = rng.normal(size=(1000,))
    big = np.tile(scores.standardized, (20, 1))
    fake = type(scores)(raw=big, standardized=big)
    assert abs(pillar_index_correlation(fake, noise)).max() < 0.1


def test_pillar_names_from_keywords():
    panel = generate_fixture(10, range(2021, 2026), seed=1, latent_rank=4)
    x_sc, _ = standardize(panel)
    model = fit_pca(x_sc, 4, feature_names=panel.feature_names)
    dominant_features(model)
    orient_components(model, panel.orientation_signs())
    assert len(model.pillar_names) == 4
    assert len(set(model.pillar_names)) == 4


def test_model_json_roundtrip(rng):
    x = rng.normal(size=(25, 5))
    model = fit_pca(x, 2, feature_names=[f"feat{i}" for i in range(5)])
    dominant_features(model)
    orient_components(model, np.ones(5))
    doc = model_to_json_dict(model)
    back = model_from_json_dict(doc)
    assert np.allclose(back.loadings, model.loadings)
    assert back.dominant_sets == model.dominant_sets
    assert back.pillar_names == model.pillar_names
