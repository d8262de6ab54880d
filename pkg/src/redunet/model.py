"""Model containers: layers, build configuration, and the assembled network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .rates import CodingParams

__all__ = ["Layer", "BuildConfig", "ReduNetModel"]


@dataclass
class Layer:
    """One constructed layer: step size plus expansion/compression matrices.

    ``C`` holds one compression matrix per registered class, in registry
    order.  ``gamma``/``alphas`` are stored per layer because incremental
    merges change them for every layer at once.
    """

    eta: float
    E: np.ndarray
    C: list[np.ndarray]
    gamma: np.ndarray
    alpha: float
    alphas: np.ndarray

    @property
    def k(self) -> int:
        return len(self.C)

    def validate(self, dim: int, tol: float = 1e-10) -> None:
        if self.eta < 0:
            raise InvalidInputError("layer step size must be nonnegative")
        if self.E.shape != (dim, dim):
            raise InvalidInputError(f"E has shape {self.E.shape}, expected {(dim, dim)}")
        if abs(float(self.gamma.sum()) - 1.0) > 1e-12:
            raise InvalidInputError("class weights gamma must sum to 1")
        for name, M in [("E", self.E)] + [(f"C[{j}]", Cj) for j, Cj in enumerate(self.C)]:
            if float(np.abs(M - M.T).max()) > tol * max(1.0, float(np.abs(M).max())):
                raise InvalidInputError(f"layer matrix {name} is not symmetric")


@dataclass(frozen=True)
class BuildConfig:
    """Hyperparameters for layer-by-layer construction.

    Step size at layer ``l`` is ``eta0 * eta_decay**l``; ``lam`` is the
    confidence of the test-time membership softmax.
    """

    epsilon: float = 0.5
    depth: int = 200
    eta0: float = 0.5
    eta_decay: float = 0.933
    lam: float = 1.0

    def __post_init__(self):
        if self.depth < 0:
            raise InvalidInputError("depth must be nonnegative")
        if self.epsilon <= 0 or self.eta0 <= 0 or self.lam <= 0:
            raise InvalidInputError("epsilon, eta0 and lam must be positive")
        if not 0 < self.eta_decay <= 1:
            raise InvalidInputError("eta_decay must be in (0, 1]")

    def eta_at(self, layer_index: int) -> float:
        return self.eta0 * self.eta_decay**layer_index


@dataclass
class ReduNetModel:
    """A constructed network plus the statistics needed to extend it.

    ``registry``/``counts`` record the classes seen so far and their training
    sample counts (required to recover per-class covariances and to rescale
    them during merges).  ``final_covariances`` are the per-class second
    moments of the last-layer features, consumed by the subspace classifier.
    ``meta`` carries JSON-serializable diagnostics (e.g. the rate-reduction
    trace) and survives serialization; values that are numpy arrays are
    stored in the binary payload.
    """

    dim: int
    epsilon: float
    lam: float
    registry: list
    counts: np.ndarray
    layers: list[Layer]
    final_covariances: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def k(self) -> int:
        return len(self.registry)

    @property
    def params(self) -> CodingParams:
        return CodingParams(self.epsilon, self.dim, self.counts)

    def delta_r_trace(self) -> list[float]:
        return list(self.meta.get("delta_r_trace", []))

    def validate(self) -> None:
        if len(self.counts) != self.k or len(self.final_covariances) != self.k:
            raise InvalidInputError("registry, counts and final covariances disagree")
        for layer in self.layers:
            if layer.k != self.k:
                raise InvalidInputError("layer has wrong number of compression matrices")
            layer.validate(self.dim)
        for j, S in enumerate(self.final_covariances):
            mj = float(self.counts[j])
            if abs(float(np.trace(S)) - mj) > 1e-8 * mj:
                raise InvalidInputError(
                    f"final covariance {j} has trace {np.trace(S):.12g}, expected {mj:g}"
                )
