"""Class-incremental merging: extend a network to new classes without old data.

The layer-0 compression matrix of each old class determines that class's
initial covariance exactly, and the known-label layer map

    L_j = I + eta E - eta gamma_j C_j

propagates covariances the same way it propagates features
(T = L_j Sigma_j L_j^T, rescaled to trace m_j).  Rebuilding every layer from
these propagated covariances plus the new task's features therefore yields,
layer for layer, the network joint construction would have produced on the
concatenated data.  Per-class quantization scalars alpha_j depend only on
class sample counts and are unchanged; the global alpha and the weights
gamma_j are recomputed for the enlarged sample count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .builder import class_covariances, known_label_update
from .errors import (
    InconsistentParameterError,
    InvalidInputError,
    NumericalDegradationError,
)
from .model import Layer, ReduNetModel
from .rates import (
    CodingParams,
    LabelAssignment,
    compression_matrix,
    expansion_matrix,
    normalize_classwise,
    rate_reduction_from_covariances,
    recover_covariance,
    symmetrize,
)

__all__ = ["TaskBatch", "recover_initial_covariances", "merge_new_task", "chain_merge"]

# Stored alpha_j must match d/(m_j eps^2) from the supplied counts this tightly.
ALPHA_MATCH_TOL = 1e-9


@dataclass
class TaskBatch:
    """Training data for one incremental session: features plus labels."""

    X: np.ndarray
    labels: LabelAssignment

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise InvalidInputError(f"task data must be d x m, got shape {self.X.shape}")
        if self.X.shape[1] != self.labels.m:
            raise InvalidInputError(
                f"task has {self.X.shape[1]} samples but {self.labels.m} labels"
            )
        if not np.isfinite(self.X).all():
            raise InvalidInputError("task data contains non-finite entries")


def _check_counts(model: ReduNetModel, counts_old) -> np.ndarray:
    if counts_old is None:
        return model.counts.copy()
    counts = np.asarray(counts_old, dtype=np.int64)
    if counts.shape != model.counts.shape or (counts != model.counts).any():
        raise InconsistentParameterError(
            f"supplied old-class counts {counts.tolist()} disagree with the "
            f"model registry counts {model.counts.tolist()}"
        )
    return counts


def recover_initial_covariances(
    model: ReduNetModel, counts_old=None
) -> list[np.ndarray]:
    """Initial per-class covariances of the model's training data, one per class.

    Extracted from the stored layer-0 compression matrices; a depth-0 model
    stores them directly as its final covariances.  The result is the
    covariance ledger that a merge propagates in place of raw features.
    """
    counts = _check_counts(model, counts_old)
    if model.depth == 0:
        return [S.copy() for S in model.final_covariances]
    layer0 = model.layers[0]
    alphas = model.params.alphas
    for j in range(model.k):
        stored = float(layer0.alphas[j])
        derived = float(alphas[j])
        if abs(stored - derived) > ALPHA_MATCH_TOL * derived:
            raise InconsistentParameterError(
                f"stored alpha for class {model.registry[j]!r} is {stored:.12g} "
                f"but counts give {derived:.12g}"
            )
    return [recover_covariance(layer0.C[j], float(alphas[j])) for j in range(model.k)]


def _propagate_ledger(
    ledger: list[np.ndarray],
    layer: Layer,
    counts: np.ndarray,
    layer_index: int,
) -> list[np.ndarray]:
    """One covariance step per old class: T = L_j Sigma L_j^T, trace-rescaled."""
    d = layer.E.shape[0]
    eye = np.eye(d)
    out = []
    for j, sigma in enumerate(ledger):
        Lj = eye + layer.eta * layer.E - (layer.eta * layer.gamma[j]) * layer.C[j]
        T = symmetrize(Lj @ sigma @ Lj.T)
        tr = float(np.trace(T))
        if not np.isfinite(tr) or tr <= 0.0:
            raise NumericalDegradationError(
                f"old-class covariance {j} degenerated at layer {layer_index} (trace {tr:g})"
            )
        out.append((counts[j] / tr) * T)
    return out


def merge_new_task(
    model: ReduNetModel, task: TaskBatch, counts_old=None
) -> ReduNetModel:
    """Extend ``model`` with a disjoint task, matching joint construction.

    Only the new task's raw data enters; old classes are carried as a
    covariance ledger recovered from the stored layer-0 compression matrices
    and propagated layer by layer.  Every returned layer (E, all C_j, gamma,
    alpha) equals what a fresh build on the concatenated data would produce,
    so the old model's layers beyond layer 0 are discarded rather than kept.
    """
    counts = _check_counts(model, counts_old)
    if task.X.shape[0] != model.dim:
        raise InvalidInputError(
            f"task dimension {task.X.shape[0]} does not match model dimension {model.dim}"
        )
    overlap = set(model.registry) & set(task.labels.registry)
    if overlap:
        raise InvalidInputError(f"task classes {sorted(map(str, overlap))} already registered")

    k_old = model.k
    new_pi = task.labels
    registry = list(model.registry) + list(new_pi.registry)
    counts_all = np.concatenate([counts, new_pi.counts])
    params = CodingParams(model.epsilon, model.dim, counts_all)
    d = model.dim

    ledger = recover_initial_covariances(model, counts)
    Z = normalize_classwise(task.X, new_pi)
    new_slots = list(range(k_old, k_old + new_pi.k))

    layers: list[Layer] = []
    trace: list[float] = []
    for ell, old_layer in enumerate(model.layers):
        covs = ledger + class_covariances(Z, new_pi.indices_by_class)
        trace.append(rate_reduction_from_covariances(covs, params))
        total = np.zeros((d, d))
        for S in covs:
            total += S
        E = expansion_matrix(total, params.alpha)
        C = [compression_matrix(S, params.alphas[j]) for j, S in enumerate(covs)]
        layer = Layer(
            eta=old_layer.eta,
            E=E,
            C=C,
            gamma=params.gammas.copy(),
            alpha=params.alpha,
            alphas=params.alphas.copy(),
        )
        ledger = _propagate_ledger(ledger, layer, counts, ell)
        try:
            Z = known_label_update(Z, new_pi, layer, class_slots=new_slots)
        except InvalidInputError as exc:
            raise NumericalDegradationError(
                f"new-task features degenerated at layer {ell}: {exc}"
            ) from exc
        layers.append(layer)

    final_covs = ledger + class_covariances(Z, new_pi.indices_by_class)
    trace.append(rate_reduction_from_covariances(final_covs, params))

    # provenance (preprocessing seeds, lift parameters) survives the merge;
    # the objective trace is the merged network's own
    meta = {k: v for k, v in model.meta.items() if k != "delta_r_trace"}
    meta["delta_r_trace"] = [float(v) for v in trace]

    return ReduNetModel(
        dim=d,
        epsilon=model.epsilon,
        lam=model.lam,
        registry=registry,
        counts=counts_all,
        layers=layers,
        final_covariances=final_covs,
        meta=meta,
    )


def chain_merge(model: ReduNetModel, tasks: Sequence[TaskBatch]) -> ReduNetModel:
    """Fold `merge_new_task` over a task sequence."""
    for task in tasks:
        model = merge_new_task(model, task)
    return model
