"""Test-time transform: membership estimation and the nonlinear layer pass.

Samples move through the same increments used at construction time, except
that class membership is unknown and replaced by a softmax over compression
norms.  A batch is processed with matrix products; single samples take the
width-1 path of the same code, so per-sample and batched results agree
bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .model import Layer, ReduNetModel

__all__ = [
    "estimate_membership",
    "estimate_membership_batch",
    "forward_sample",
    "forward_batch",
]


# All forward-path products are issued at this exact gemm width (short chunks
# are zero-padded), because BLAS column bits vary with the call's width: this
# pins every column's result to (A, column) alone, making batched and
# per-sample transforms bit-identical.
_GEMM_WIDTH = 256


def _matmul_cols(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d, m = B.shape
    out = np.empty((A.shape[0], m))
    for start in range(0, m, _GEMM_WIDTH):
        end = min(start + _GEMM_WIDTH, m)
        width = end - start
        if width == _GEMM_WIDTH:
            chunk = np.ascontiguousarray(B[:, start:end])
        else:
            chunk = np.zeros((d, _GEMM_WIDTH))
            chunk[:, :width] = B[:, start:end]
        out[:, start:end] = (A @ chunk)[:, :width]
    return out


def _col_norms(U: np.ndarray) -> np.ndarray:
    # numpy's own reductions (einsum, add.reduce) round differently depending
    # on array width; summing through the fixed-width gemm keeps column bits
    # width-independent like every other product here
    return np.sqrt(_matmul_cols(np.ones((1, U.shape[0])), U * U)[0])


def _layer_memberships(
    compressed: list[np.ndarray], lam: float, k: int
) -> np.ndarray:
    """Columnwise softmax over -lam * k * ||C_j z||, stabilized in log space."""
    norms = np.stack([_col_norms(U) for U in compressed])
    logits = -lam * k * norms
    logits -= logits.max(axis=0)
    p = np.exp(logits)
    p /= p.sum(axis=0)
    return p


def estimate_membership(z, layer: Layer, lam: float) -> np.ndarray:
    """Estimated class memberships of a single feature vector.

    Returns ``k`` probabilities summing to 1, computed as a softmax over the
    negative scaled compression norms ``lam * k * ||C_j z||``.
    """
    if lam <= 0:
        raise InvalidInputError("lam must be positive")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != layer.E.shape[0]:
        raise InvalidInputError(
            f"z must be a vector of dimension {layer.E.shape[0]}, got shape {z.shape}"
        )
    if not np.isfinite(z).all():
        raise InvalidInputError("z contains non-finite entries")
    zb = z[:, None]
    compressed = [_matmul_cols(Cj, zb) for Cj in layer.C]
    return _layer_memberships(compressed, lam, layer.k)[:, 0]


def estimate_membership_batch(Z, layer: Layer, lam: float) -> np.ndarray:
    """Columnwise `estimate_membership`: a ``k x m`` array of probabilities."""
    if lam <= 0:
        raise InvalidInputError("lam must be positive")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != layer.E.shape[0]:
        raise InvalidInputError(
            f"Z must be {layer.E.shape[0]} x m, got shape {Z.shape}"
        )
    compressed = [_matmul_cols(Cj, Z) for Cj in layer.C]
    return _layer_memberships(compressed, lam, layer.k)


def _forward(model: ReduNetModel, Z: np.ndarray, collect: bool):
    memberships = [] if collect else None
    for layer in model.layers:
        compressed = [_matmul_cols(Cj, Z) for Cj in layer.C]
        probs = _layer_memberships(compressed, model.lam, layer.k)
        if collect:
            memberships.append(probs)
        G = _matmul_cols(layer.E, Z)
        for j in range(layer.k):
            G -= layer.gamma[j] * compressed[j] * probs[j][None, :]
        Z = Z + layer.eta * G
        Z = Z / _col_norms(Z)[None, :]
    return Z, memberships


def forward_batch(
    model: ReduNetModel, X, return_memberships: bool = False
):
    """Push samples (columns of ``X``) through the network.

    Every column is first projected to the unit sphere and renormalized after
    each layer; results are identical to independent `forward_sample` calls.
    With ``return_memberships=True`` also returns the per-layer estimated
    membership arrays (one ``k x m`` array per layer).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.dim:
        raise InvalidInputError(
            f"X must be {model.dim} x m, got shape {X.shape}"
        )
    if not np.isfinite(X).all():
        raise InvalidInputError("X contains non-finite entries")
    norms = _col_norms(X)
    if (norms == 0.0).any():
        raise DegenerateInputError("input contains a zero column")
    Z = X / norms[None, :]
    Z, memberships = _forward(model, Z, collect=return_memberships)
    if return_memberships:
        return Z, memberships
    return Z


def forward_sample(model: ReduNetModel, x) -> np.ndarray:
    """Featurize one sample; the width-1 case of `forward_batch`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"x must be a vector, got shape {x.shape}")
    return forward_batch(model, x[:, None])[:, 0]
