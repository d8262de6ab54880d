"""Layer-by-layer construction and the known-label layer update."""

import numpy as np
import pytest

from redunet import (
    BuildConfig,
    InvalidInputError,
    LabelAssignment,
    Layer,
    NumericalError,
    build_redunet,
    compression_matrix,
    expansion_matrix,
    layer_forward_train,
    normalize_classwise,
    recover_covariance,
)
from redunet.datasets import synth_subspace_mixture


def _make_layer(eta, E, Cs, gammas, alpha, alphas):
    return Layer(
        eta=eta,
        E=np.asarray(E, float),
        C=[np.asarray(C, float) for C in Cs],
        gamma=np.asarray(gammas, float),
        alpha=alpha,
        alphas=np.asarray(alphas, float),
    )


class TestBuildRedunet:
    def test_single_class_objective_stays_zero(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((6, 15))
        model, trace = build_redunet(X, LabelAssignment([0] * 15), BuildConfig(depth=5))
        assert model.depth == 5 and model.k == 1
        np.testing.assert_allclose(trace, 0.0, atol=1e-10)

    def test_orthogonal_lines_trace_nondecreasing(self):
        # two orthogonal 1-D classes in the plane
        rng = np.random.default_rng(1)
        X = np.zeros((2, 20))
        X[0, :10] = rng.standard_normal(10)
        X[1, 10:] = rng.standard_normal(10)
        pi = LabelAssignment([0] * 10 + [1] * 10)
        _, trace = build_redunet(X, pi, BuildConfig(depth=8))
        # exactly orthogonal lines already maximize the objective, so the
        # trace may be flat; it must never go down
        assert np.diff(trace).min() >= -1e-9

    def test_separable_mixture_trace_increases(self, small_model):
        _, trace, _, _ = small_model
        assert np.diff(trace).min() >= -1e-9
        assert trace[-1] > trace[0]

    def test_deterministic(self):
        X, pi = synth_subspace_mixture(10, 2, 2, 20, 0.05, seed=3)
        cfg = BuildConfig(depth=4)
        m1, t1 = build_redunet(X, pi, cfg)
        m2, t2 = build_redunet(X, pi, cfg)
        np.testing.assert_array_equal(t1, t2)
        for a, b in zip(m1.layers, m2.layers):
            np.testing.assert_array_equal(a.E, b.E)
            for Ca, Cb in zip(a.C, b.C):
                np.testing.assert_array_equal(Ca, Cb)
        for Sa, Sb in zip(m1.final_covariances, m2.final_covariances):
            np.testing.assert_array_equal(Sa, Sb)

    def test_layer_params_rebuild_from_covariances(self, small_model):
        """Layer 0 equals matrices built from the initial class covariances alone."""
        model, _, X, pi = small_model
        Z0 = normalize_classwise(X, pi)
        params = model.params
        covs = [(lambda B: (B @ B.T + (B @ B.T).T) / 2)(Z0[:, idx]) for idx in pi.indices_by_class]
        total = np.zeros((model.dim, model.dim))
        for S in covs:
            total += S
        np.testing.assert_array_equal(model.layers[0].E, expansion_matrix(total, params.alpha))
        for j, S in enumerate(covs):
            np.testing.assert_array_equal(
                model.layers[0].C[j], compression_matrix(S, params.alphas[j])
            )

    def test_compression_matrices_self_consistent(self, small_model):
        """C regenerates through recover/compress at every layer."""
        model, _, _, _ = small_model
        for layer in model.layers:
            for j, C in enumerate(layer.C):
                aj = float(layer.alphas[j])
                back = compression_matrix(recover_covariance(C, aj), aj)
                np.testing.assert_allclose(back, C, atol=1e-10)

    def test_final_covariance_traces(self, small_model):
        model, _, _, pi = small_model
        for S, mj in zip(model.final_covariances, pi.counts):
            assert np.trace(S) == pytest.approx(mj, rel=1e-8)

    def test_training_trace_length_and_meta(self, small_model):
        model, trace, _, _ = small_model
        assert len(trace) == model.depth + 1
        assert model.delta_r_trace() == pytest.approx(list(trace))

    def test_divergence_names_layer(self):
        X, pi = synth_subspace_mixture(6, 2, 2, 10, 0.0, seed=5)
        with pytest.raises(NumericalError, match="layer"):
            build_redunet(X, pi, BuildConfig(depth=3, eta0=1e308, eta_decay=1.0))

    def test_label_count_mismatch(self):
        with pytest.raises(InvalidInputError):
            build_redunet(np.ones((3, 4)), LabelAssignment([0, 1]), BuildConfig(depth=1))

    def test_depth_zero_model(self):
        X, pi = synth_subspace_mixture(6, 2, 2, 10, 0.05, seed=6)
        model, trace = build_redunet(X, pi, BuildConfig(depth=0))
        assert model.depth == 0 and len(trace) == 1
        Z0 = normalize_classwise(X, pi)
        for j, idx in enumerate(pi.indices_by_class):
            np.testing.assert_allclose(
                model.final_covariances[j], Z0[:, idx] @ Z0[:, idx].T, atol=1e-12
            )


class TestLayerForwardTrain:
    def test_zero_step_is_identity_on_normalized_input(self):
        Z = np.eye(2)  # unit columns: exactly class-normalized
        pi = LabelAssignment([0, 1])
        layer = _make_layer(0.0, np.eye(2), [np.eye(2), np.eye(2)], [0.5, 0.5], 4.0, [8.0, 8.0])
        np.testing.assert_array_equal(layer_forward_train(Z, pi, layer), Z)

    def test_matches_handrolled_two_by_two(self):
        # one sample per class in the plane; expected values from explicit
        # scalar arithmetic
        z1 = np.array([0.8, 0.6])
        z2 = np.array([-0.6, 0.8])
        Z = np.column_stack([z1, z2])
        pi = LabelAssignment([0, 1])
        E = np.array([[1.2, 0.1], [0.1, 0.9]])
        C1 = np.array([[2.0, 0.0], [0.0, 1.0]])
        C2 = np.array([[1.0, 0.5], [0.5, 3.0]])
        eta, g1, g2 = 0.25, 0.5, 0.5
        layer = _make_layer(eta, E, [C1, C2], [g1, g2], 4.0, [8.0, 8.0])

        out = layer_forward_train(Z, pi, layer)

        for z, C, g, col in [(z1, C1, g1, 0), (z2, C2, g2, 1)]:
            p = np.empty(2)
            for i in range(2):
                ez = E[i, 0] * z[0] + E[i, 1] * z[1]
                cz = C[i, 0] * z[0] + C[i, 1] * z[1]
                p[i] = z[i] + eta * (ez - g * cz)
            p /= np.sqrt(p[0] ** 2 + p[1] ** 2)  # m_j = 1
            np.testing.assert_allclose(out[:, col], p, rtol=1e-14)

    def test_output_class_norms(self, rng):
        Z = rng.standard_normal((4, 12))
        pi = LabelAssignment([i % 2 for i in range(12)])
        E = np.eye(4) * 0.5
        layer = _make_layer(0.3, E, [np.eye(4), np.eye(4)], [0.5, 0.5], 2.0, [4.0, 4.0])
        out = layer_forward_train(normalize_classwise(Z, pi), pi, layer)
        for idx in pi.indices_by_class:
            assert np.sum(out[:, idx] ** 2) == pytest.approx(idx.size, rel=1e-10)

    def test_dimension_mismatch(self):
        layer = _make_layer(0.1, np.eye(3), [np.eye(3)], [1.0], 1.0, [1.0])
        with pytest.raises(InvalidInputError):
            layer_forward_train(np.ones((2, 2)), LabelAssignment([0, 0]), layer)

    def test_class_count_mismatch(self):
        layer = _make_layer(0.1, np.eye(2), [np.eye(2)], [1.0], 1.0, [1.0])
        with pytest.raises(InvalidInputError):
            layer_forward_train(np.eye(2), LabelAssignment([0, 1]), layer)
