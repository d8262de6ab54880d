"""Coding-rate quantities, normalization, and the layer matrices."""

import math

import numpy as np
import pytest

from redunet import (
    CodingParams,
    DegenerateInputError,
    InconsistentParameterError,
    InvalidInputError,
    LabelAssignment,
    coding_rate,
    compression_matrix,
    compression_rate,
    expansion_matrix,
    normalize_classwise,
    rate_reduction,
    recover_covariance,
)
from redunet.rates import psd_clamp, rate_reduction_from_covariances

from conftest import random_psd


class TestLabelAssignment:
    def test_registry_defaults_to_first_appearance(self):
        pi = LabelAssignment([3, 1, 3, 2, 1])
        assert pi.registry == [3, 1, 2]
        assert pi.counts.tolist() == [2, 2, 1]
        assert pi.m == 5 and pi.k == 3

    def test_explicit_registry_orders_classes(self):
        pi = LabelAssignment([0, 1, 0], registry=[1, 0])
        assert pi.registry == [1, 0]
        assert pi.indices_by_class[0].tolist() == [1]
        assert pi.indices_by_class[1].tolist() == [0, 2]

    def test_registry_must_cover_labels(self):
        with pytest.raises(InvalidInputError):
            LabelAssignment([0, 1], registry=[0])

    def test_empty_class_rejected(self):
        with pytest.raises(InvalidInputError):
            LabelAssignment([0, 0], registry=[0, 1])

    def test_numpy_labels_normalized_to_python_ints(self):
        pi = LabelAssignment(np.array([4, 4, 5], dtype=np.uint8))
        assert pi.registry == [4, 5]
        assert all(isinstance(c, int) for c in pi.registry)


class TestCodingParams:
    def test_scalars(self):
        p = CodingParams(0.5, 10, [20, 30])
        assert p.alpha == 10 / (50 * 0.25)
        assert np.allclose(p.alphas, [10 / (20 * 0.25), 10 / (30 * 0.25)])
        assert abs(p.gammas.sum() - 1.0) < 1e-12

    def test_rejects_bad_epsilon(self):
        with pytest.raises(InvalidInputError):
            CodingParams(0.0, 10, [5])


class TestCodingRate:
    def test_zero_features_code_for_free(self):
        assert coding_rate(np.zeros((4, 7)), 0.5) == 0.0

    def test_two_identity_columns(self):
        # d=2, m=2, eps=0.5 -> alpha=4; det(I + 4I) = 25, rate = log(5)
        Z = np.eye(2)
        assert coding_rate(Z, 0.5) == pytest.approx(math.log(5.0), abs=1e-12)

    def test_matches_singular_value_oracle(self, rng):
        Z = rng.standard_normal((5, 20))
        d, m = Z.shape
        alpha = d / (m * 0.5**2)
        s = np.linalg.svd(Z, compute_uv=False)
        oracle = 0.5 * np.sum(np.log1p(alpha * s**2))
        assert coding_rate(Z, 0.5) == pytest.approx(oracle, rel=1e-12)

    def test_monotone_in_precision(self, rng):
        Z = rng.standard_normal((6, 12))
        rates = [coding_rate(Z, eps) for eps in (1.0, 0.5, 0.25, 0.1)]
        assert all(a < b for a, b in zip(rates, rates[1:]))

    def test_rejects_nonfinite_and_bad_epsilon(self):
        with pytest.raises(InvalidInputError):
            coding_rate(np.array([[np.nan, 0.0]]), 0.5)
        with pytest.raises(InvalidInputError):
            coding_rate(np.ones((2, 2)), 0.0)


class TestCompressionRate:
    def test_zero_features(self):
        pi = LabelAssignment([0, 0, 1])
        assert compression_rate(np.zeros((4, 3)), pi, 0.5) == 0.0

    def test_single_class_degenerates_to_coding_rate(self, rng):
        Z = rng.standard_normal((5, 9))
        pi = LabelAssignment([0] * 9)
        assert compression_rate(Z, pi, 0.5) == pytest.approx(
            coding_rate(Z, 0.5), rel=1e-12
        )

    def test_two_identity_columns_two_classes(self):
        # per class: alpha_j=8, gamma_j=1/2, det(I + 8 e_j e_j^T) = 9
        Z = np.eye(2)
        pi = LabelAssignment([0, 1])
        assert compression_rate(Z, pi, 0.5) == pytest.approx(math.log(3.0), abs=1e-12)

    def test_label_count_mismatch(self):
        with pytest.raises(InvalidInputError):
            compression_rate(np.zeros((2, 3)), LabelAssignment([0, 1]), 0.5)


class TestRateReduction:
    def test_single_class_is_zero(self, rng):
        Z = rng.standard_normal((4, 6))
        assert rate_reduction(Z, LabelAssignment([0] * 6), 0.5) == 0.0

    def test_two_identity_columns(self):
        Z = np.eye(2)
        pi = LabelAssignment([0, 1])
        expected = math.log(5.0) - math.log(3.0)
        assert rate_reduction(Z, pi, 0.5) == pytest.approx(expected, abs=1e-12)

    def test_invariant_under_consistent_permutation(self, rng):
        Z = rng.standard_normal((6, 20))
        labels = [i % 3 for i in range(20)]
        perm = rng.permutation(20)
        a = rate_reduction(Z, LabelAssignment(labels), 0.5)
        b = rate_reduction(
            Z[:, perm], LabelAssignment([labels[i] for i in perm], registry=[0, 1, 2]), 0.5
        )
        assert a == pytest.approx(b, rel=1e-12)

    def test_nonnegative_on_normalized_data(self, rng):
        for trial in range(10):
            Z = rng.standard_normal((8, 30))
            pi = LabelAssignment([i % 3 for i in range(30)])
            Zn = normalize_classwise(Z, pi)
            assert rate_reduction(Zn, pi, 0.5) >= -1e-12

    def test_matches_covariance_form(self, rng):
        Z = rng.standard_normal((6, 18))
        pi = LabelAssignment([i % 2 for i in range(18)])
        covs = [Z[:, idx] @ Z[:, idx].T for idx in pi.indices_by_class]
        params = CodingParams(0.5, 6, pi.counts)
        assert rate_reduction_from_covariances(covs, params) == pytest.approx(
            rate_reduction(Z, pi, 0.5), rel=1e-10
        )


class TestNormalizeClasswise:
    def test_exactly_normalized_input_unchanged(self):
        # unit columns make each class's squared norm exactly its count
        Z = np.eye(3)[:, [0, 1, 2, 0]].astype(float)
        pi = LabelAssignment([0, 0, 1, 1])
        out = normalize_classwise(Z, pi)
        assert np.array_equal(out, Z)

    def test_doubled_block_halves(self, rng):
        A = rng.standard_normal((4, 5))
        A *= np.sqrt(5 / np.sum(A * A))  # ||A||_F^2 = 5 = m_j
        out = normalize_classwise(2.0 * A, LabelAssignment([0] * 5))
        np.testing.assert_allclose(out, A, rtol=1e-12)

    def test_norms_hit_counts(self, rng):
        Z = rng.standard_normal((7, 25)) * 3.7
        pi = LabelAssignment([i % 4 for i in range(25)])
        out = normalize_classwise(Z, pi)
        for idx in pi.indices_by_class:
            fro2 = np.sum(out[:, idx] ** 2)
            assert fro2 == pytest.approx(idx.size, rel=1e-10)

    def test_directions_preserved(self, rng):
        Z = rng.standard_normal((5, 6))
        pi = LabelAssignment([0, 0, 0, 1, 1, 1])
        out = normalize_classwise(Z, pi)
        for idx in pi.indices_by_class:
            ratio = out[:, idx] / Z[:, idx]
            assert np.ptp(ratio) < 1e-12  # one scalar per class

    def test_zero_class_rejected(self):
        Z = np.zeros((3, 4))
        Z[:, 2:] = 1.0
        with pytest.raises(DegenerateInputError):
            normalize_classwise(Z, LabelAssignment([0, 0, 1, 1]))


class TestLayerMatrices:
    def test_zero_covariance_gives_scaled_identity(self):
        np.testing.assert_array_equal(expansion_matrix(np.zeros((3, 3)), 4.0), 4.0 * np.eye(3))
        np.testing.assert_array_equal(compression_matrix(np.zeros((3, 3)), 4.0), 4.0 * np.eye(3))

    def test_identity_covariance(self):
        np.testing.assert_allclose(expansion_matrix(np.eye(3), 4.0), 0.8 * np.eye(3), rtol=1e-14)

    def test_multiply_back_identity(self, rng):
        for d in (2, 5, 17):
            S = random_psd(rng, d, scale=3.0)
            alpha = 2.5
            E = expansion_matrix(S, alpha)
            np.testing.assert_allclose(E @ (np.eye(d) + alpha * S), alpha * np.eye(d), atol=1e-9)

    def test_symmetry_and_spectrum(self, rng):
        S = random_psd(rng, 9)
        alpha = 4.0
        for M in (expansion_matrix(S, alpha), compression_matrix(S, alpha)):
            assert np.abs(M - M.T).max() < 1e-10
            w = np.linalg.eigvalsh(M)
            assert w[0] > 0 and w[-1] <= alpha + 1e-12

    def test_asymmetric_input_rejected(self, rng):
        S = random_psd(rng, 4)
        S[0, 1] += 1e-3
        with pytest.raises(InvalidInputError):
            expansion_matrix(S, 1.0)

    def test_nonpositive_alpha_rejected(self):
        with pytest.raises(InvalidInputError):
            compression_matrix(np.eye(2), 0.0)


class TestRecoverCovariance:
    def test_scaled_identity_recovers_zero(self):
        np.testing.assert_allclose(recover_covariance(4.0 * np.eye(3), 4.0), np.zeros((3, 3)), atol=1e-14)

    def test_inverts_identity_example(self):
        np.testing.assert_allclose(recover_covariance(0.8 * np.eye(3), 4.0), np.eye(3), atol=1e-12)

    def test_round_trip(self, rng):
        for d in (2, 6, 20):
            S = random_psd(rng, d, scale=2.0)
            alpha = 3.0
            back = recover_covariance(compression_matrix(S, alpha), alpha)
            np.testing.assert_allclose(back, S, atol=1e-10)

    def test_out_of_range_spectrum_rejected(self):
        with pytest.raises(InconsistentParameterError):
            recover_covariance(4.0 * (1.0 + 1e-6) * np.eye(2), 4.0)
        with pytest.raises(InvalidInputError):
            recover_covariance(np.diag([1.0, -0.1]), 4.0)

    def test_result_is_psd(self, rng):
        S = random_psd(rng, 8)
        back = recover_covariance(compression_matrix(S, 5.0), 5.0)
        assert np.linalg.eigvalsh(back)[0] >= 0.0


class TestPsdClamp:
    def test_psd_input_returned_unchanged(self, rng):
        S = random_psd(rng, 5)
        out = psd_clamp(S)
        np.testing.assert_array_equal(out, (S + S.T) / 2)

    def test_small_negative_eigenvalue_clamped(self):
        S = np.diag([1.0, -1e-12])
        w = np.linalg.eigvalsh(psd_clamp(S))
        assert w[0] >= 0.0

    def test_large_negative_eigenvalue_raises(self):
        from redunet import NumericalDegradationError

        with pytest.raises(NumericalDegradationError):
            psd_clamp(np.diag([1.0, -1e-3]))
