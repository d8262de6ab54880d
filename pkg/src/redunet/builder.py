"""Layer-by-layer network construction from labeled training data.

Each layer emulates one projected-gradient-ascent step on the rate-reduction
objective: with per-class covariances Sigma_j of the current features,

    E   = alpha (I + alpha sum_j Sigma_j)^-1
    C_j = alpha_j (I + alpha_j Sigma_j)^-1
    Z  <-  class-normalize( Z + eta (E Z - sum_j gamma_j C_j Z^j) )

Construction uses ground-truth memberships throughout; estimated memberships
exist only in the test-time transform (see ``forward``).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, NumericalError
from .model import BuildConfig, Layer, ReduNetModel
from .rates import (
    CodingParams,
    LabelAssignment,
    compression_matrix,
    expansion_matrix,
    normalize_classwise,
    rate_reduction_from_covariances,
    symmetrize,
)

__all__ = ["build_redunet", "layer_forward_train"]


def class_covariances(Z: np.ndarray, indices_by_class) -> list[np.ndarray]:
    """Per-class second moments Sigma_j = Z^j Z^jT, symmetrized."""
    out = []
    for idx in indices_by_class:
        block = Z[:, idx]  # one binding so the product takes the syrk fast path
        out.append(symmetrize(block @ block.T))
    return out


def known_label_update(
    Z: np.ndarray,
    pi: LabelAssignment,
    layer: Layer,
    class_slots: list[int] | None = None,
) -> np.ndarray:
    """Apply ``Z^j <- (I + eta E - eta gamma_j C_j) Z^j`` then renormalize.

    ``class_slots`` maps each class of ``pi`` to its position in the layer's
    compression list; merges pass offsets so a new-task block can be pushed
    through a layer that also carries old classes.
    """
    if Z.shape[0] != layer.E.shape[0]:
        raise InvalidInputError(
            f"feature dimension {Z.shape[0]} does not match layer dimension {layer.E.shape[0]}"
        )
    if class_slots is None:
        if pi.k != layer.k:
            raise InvalidInputError(
                f"labels carry {pi.k} classes but the layer has {layer.k}"
            )
        class_slots = list(range(pi.k))
    G = layer.E @ Z
    for j, idx in enumerate(pi.indices_by_class):
        s = class_slots[j]
        G[:, idx] -= layer.gamma[s] * (layer.C[s] @ Z[:, idx])
    return normalize_classwise(Z + layer.eta * G, pi)


def layer_forward_train(Z, pi: LabelAssignment, layer: Layer) -> np.ndarray:
    """Push labeled (already class-normalized) features through one layer."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != pi.m:
        raise InvalidInputError("Z must be d x m with one column per label")
    return known_label_update(Z, pi, layer)


def build_redunet(
    X, pi: LabelAssignment, cfg: BuildConfig
) -> tuple[ReduNetModel, np.ndarray]:
    """Construct a network of ``cfg.depth`` layers from labeled data.

    Returns the model and the rate-reduction trace (``depth + 1`` values,
    objective before construction and after every layer).  The trace is also
    stored under ``meta["delta_r_trace"]``.

    Layer parameters depend on the data only through per-class covariances;
    the total covariance is accumulated in registry order so rebuilding from
    covariances alone reproduces the same model.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"X must be a d x m matrix, got shape {X.shape}")
    if X.shape[1] != pi.m:
        raise InvalidInputError(
            f"label count {pi.m} does not match sample count {X.shape[1]}"
        )
    d = X.shape[0]
    params = CodingParams(cfg.epsilon, d, pi.counts)

    Z = normalize_classwise(X, pi)
    layers: list[Layer] = []
    trace: list[float] = []
    for ell in range(cfg.depth):
        covs = class_covariances(Z, pi.indices_by_class)
        trace.append(rate_reduction_from_covariances(covs, params))
        total = np.zeros((d, d))
        for S in covs:
            total += S
        E = expansion_matrix(total, params.alpha)
        C = [compression_matrix(S, params.alphas[j]) for j, S in enumerate(covs)]
        layer = Layer(
            eta=cfg.eta_at(ell),
            E=E,
            C=C,
            gamma=params.gammas.copy(),
            alpha=params.alpha,
            alphas=params.alphas.copy(),
        )
        try:
            Z = known_label_update(Z, pi, layer)
        except InvalidInputError as exc:
            # inputs were validated up front, so mid-construction rejection
            # means the update itself blew up
            raise NumericalError(f"numerical divergence at layer {ell}: {exc}") from exc
        if not np.isfinite(Z).all():
            raise NumericalError(f"non-finite features after layer {ell}")
        layers.append(layer)

    final_covs = class_covariances(Z, pi.indices_by_class)
    trace.append(rate_reduction_from_covariances(final_covs, params))

    model = ReduNetModel(
        dim=d,
        epsilon=cfg.epsilon,
        lam=cfg.lam,
        registry=list(pi.registry),
        counts=pi.counts.copy(),
        layers=layers,
        final_covariances=final_covs,
        meta={"delta_r_trace": [float(v) for v in trace]},
    )
    return model, np.asarray(trace)
