"""Nearest-subspace classification from final-layer class covariances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError
from .forward import forward_batch
from .model import ReduNetModel
from .rates import LabelAssignment, symmetrize

__all__ = ["ClassSubspaces", "fit_subspaces", "classify", "classify_batch", "evaluate"]


@dataclass
class ClassSubspaces:
    """Per-class orthonormal bases spanning the top principal directions."""

    registry: list
    bases: list[np.ndarray]
    rank: int


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # deterministic convention: first nonzero coordinate of each basis vector
    # is positive
    for col in range(U.shape[1]):
        v = U[:, col]
        nz = np.nonzero(v)[0]
        if nz.size and v[nz[0]] < 0:
            U[:, col] = -v
    return U


def fit_subspaces(model: ReduNetModel, rank: int) -> ClassSubspaces:
    """Top-``rank`` eigenvectors of each final-layer class covariance."""
    if not 1 <= rank <= model.dim:
        raise InvalidInputError(f"rank must be in [1, {model.dim}], got {rank}")
    bases = []
    for class_id, sigma in zip(model.registry, model.final_covariances):
        try:
            _, U = np.linalg.eigh(symmetrize(sigma))
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise NumericalError(f"eigendecomposition failed for class {class_id!r}") from exc
        # eigh sorts ascending; keep the top-rank columns in descending order
        bases.append(_fix_signs(np.ascontiguousarray(U[:, ::-1][:, :rank])))
    return ClassSubspaces(registry=list(model.registry), bases=bases, rank=rank)


def _col_sq_norms(U: np.ndarray) -> np.ndarray:
    # plain reduce (not einsum) keeps column bits independent of batch width
    return np.add.reduce(U * U, axis=0)


def residuals_batch(Z: np.ndarray, subspaces: ClassSubspaces) -> np.ndarray:
    """Squared orthogonal residuals, one row per class, via ||z||^2 - ||U^T z||^2."""
    z2 = _col_sq_norms(np.asarray(Z, dtype=np.float64))
    rows = []
    for U in subspaces.bases:
        rows.append(z2 - _col_sq_norms(U.T @ Z))
    return np.stack(rows)


def classify_batch(Z, subspaces: ClassSubspaces) -> list:
    """Assign each column to the class whose subspace leaves the smallest residual.

    Ties resolve to the earliest registered class.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != subspaces.bases[0].shape[0]:
        raise InvalidInputError("Z must be d x m with d matching the subspace bases")
    if not np.isfinite(Z).all():
        raise InvalidInputError("Z contains non-finite entries")
    best = np.argmin(residuals_batch(Z, subspaces), axis=0)
    return [subspaces.registry[j] for j in best]


def classify(z, subspaces: ClassSubspaces):
    """Nearest-subspace label of a single feature vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidInputError(f"z must be a vector, got shape {z.shape}")
    return classify_batch(z[:, None], subspaces)[0]


def evaluate(
    model: ReduNetModel,
    subspaces: ClassSubspaces,
    X_test,
    labels: LabelAssignment,
) -> float:
    """Fraction of test columns classified correctly after featurization."""
    known = set(model.registry)
    for c in labels.registry:
        if c not in known:
            raise InvalidInputError(f"test label {c!r} unknown to the model")
    Z = forward_batch(model, X_test)
    preds = classify_batch(Z, subspaces)
    hits = sum(1 for p, t in zip(preds, labels.labels) if p == t)
    return hits / labels.m
