"""Nearest-subspace fitting and classification."""

import numpy as np
import pytest

from redunet import (
    BuildConfig,
    InvalidInputError,
    LabelAssignment,
    ReduNetModel,
    build_redunet,
    classify,
    classify_batch,
    evaluate,
    fit_subspaces,
)
from redunet.classifier import ClassSubspaces, residuals_batch
from redunet.datasets import synth_subspace_mixture


def _cov_model(covs, registry=None):
    """Depth-0 model carrying prescribed final covariances."""
    d = covs[0].shape[0]
    k = len(covs)
    return ReduNetModel(
        dim=d,
        epsilon=0.5,
        lam=1.0,
        registry=registry or list(range(k)),
        counts=np.ones(k, dtype=np.int64),
        layers=[],
        final_covariances=[np.asarray(S, float) for S in covs],
    )


class TestFitSubspaces:
    def test_diagonal_covariance_picks_leading_axes(self):
        model = _cov_model([np.diag([3.0, 2.0, 1.0])])
        sub = fit_subspaces(model, rank=2)
        np.testing.assert_allclose(sub.bases[0], np.eye(3)[:, :2], atol=1e-12)

    def test_rank_one_covariance_recovers_direction(self, rng):
        v = rng.standard_normal(5)
        v /= np.linalg.norm(v)
        model = _cov_model([np.outer(v, v)])
        sub = fit_subspaces(model, rank=1)
        u = sub.bases[0][:, 0]
        # sign convention: first nonzero coordinate positive
        expect = v if v[np.nonzero(v)[0][0]] > 0 else -v
        np.testing.assert_allclose(u, expect, atol=1e-10)

    def test_full_rank_leaves_zero_residual(self, rng):
        A = rng.standard_normal((6, 6))
        model = _cov_model([A @ A.T])
        sub = fit_subspaces(model, rank=6)
        z = rng.standard_normal(6)
        res = residuals_batch(z[:, None], sub)[0, 0]
        assert abs(res) < 1e-10 * (z @ z)

    def test_bases_orthonormal(self, rng):
        A = rng.standard_normal((7, 7))
        model = _cov_model([A @ A.T])
        sub = fit_subspaces(model, rank=4)
        U = sub.bases[0]
        np.testing.assert_allclose(U.T @ U, np.eye(4), atol=1e-10)

    def test_rank_out_of_range_rejected(self):
        model = _cov_model([np.eye(3)])
        with pytest.raises(InvalidInputError):
            fit_subspaces(model, rank=4)
        with pytest.raises(InvalidInputError):
            fit_subspaces(model, rank=0)


class TestClassify:
    def _orthogonal_subspaces(self, d=10, k=3, r=2):
        bases = [np.eye(d)[:, j * r : (j + 1) * r] for j in range(k)]
        return ClassSubspaces(registry=[f"c{j}" for j in range(k)], bases=bases, rank=r)

    def test_exact_member_has_zero_residual(self):
        sub = self._orthogonal_subspaces()
        z = np.zeros(10)
        z[0], z[1] = 0.3, -0.4
        assert classify(z, sub) == "c0"
        res = residuals_batch(z[:, None], sub)
        assert res[0, 0] == pytest.approx(0.0, abs=1e-15)
        assert (res[1:, 0] > 0).all()

    def test_positive_scaling_invariance(self, rng):
        sub = self._orthogonal_subspaces()
        for _ in range(25):
            z = rng.standard_normal(10)
            c = float(rng.uniform(0.01, 100.0))
            assert classify(c * z, sub) == classify(z, sub)

    def test_noiseless_orthogonal_classes_are_perfect(self, rng):
        sub = self._orthogonal_subspaces(d=10, k=3, r=2)
        hits = 0
        for j in range(3):
            for _ in range(20):
                z = np.zeros(10)
                z[2 * j : 2 * j + 2] = rng.standard_normal(2)
                hits += classify(z, sub) == f"c{j}"
        assert hits == 60

    def test_residual_identity(self, rng):
        """||(I-UU^T)z||^2 agrees with ||z||^2 - ||U^T z||^2."""
        A = rng.standard_normal((8, 8))
        model = _cov_model([A @ A.T])
        sub = fit_subspaces(model, rank=3)
        U = sub.bases[0]
        P = np.eye(8) - U @ U.T
        for _ in range(10):
            z = rng.standard_normal(8)
            direct = float(np.sum((P @ z) ** 2))
            fast = residuals_batch(z[:, None], sub)[0, 0]
            assert fast == pytest.approx(direct, abs=1e-10)

    def test_exact_tie_resolves_to_first_registered(self, rng):
        S = np.eye(4)
        model = _cov_model([S, S.copy()], registry=["b", "a"])
        sub = fit_subspaces(model, rank=4)
        z = rng.standard_normal(4)
        # identical bases give bitwise-equal residuals; argmin takes "b"
        assert classify(z, sub) == "b"

    def test_batch_matches_singles(self, rng):
        sub = self._orthogonal_subspaces()
        Z = rng.standard_normal((10, 30))
        batch = classify_batch(Z, sub)
        assert batch == [classify(Z[:, i], sub) for i in range(30)]


@pytest.fixture(scope="module")
def separable():
    X, pi = synth_subspace_mixture(12, 3, 2, 60, 0.01, seed=11)
    model, _ = build_redunet(X, pi, BuildConfig(epsilon=0.5, depth=8))
    return model, X, pi


class TestEvaluate:

    def test_perfect_on_training_data(self, separable):
        model, X, pi = separable
        sub = fit_subspaces(model, rank=2)
        assert evaluate(model, sub, X, pi) == 1.0

    def test_all_wrong_labels_score_zero(self, separable):
        model, X, pi = separable
        sub = fit_subspaces(model, rank=2)
        wrong = LabelAssignment([(v + 1) % 3 for v in pi.labels], registry=pi.registry)
        assert evaluate(model, sub, X, wrong) == 0.0

    def test_unknown_label_rejected(self, separable):
        model, X, pi = separable
        sub = fit_subspaces(model, rank=2)
        labels = LabelAssignment([9] * pi.m)
        with pytest.raises(InvalidInputError):
            evaluate(model, sub, X, labels)
