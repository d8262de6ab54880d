"""Coding-rate objective and the layer matrices derived from it.

Features live in columns of a ``d x m`` float64 matrix ``Z``.  For a class
partition with per-class counts ``m_j`` the quantities of interest are

    R(Z)        = 1/2 logdet(I + alpha Z Z^T),          alpha   = d / (m eps^2)
    Rc(Z, Pi)   = sum_j gamma_j/2 logdet(I + alpha_j Z^j Z^jT),
                  alpha_j = d / (m_j eps^2),  gamma_j = m_j / m
    dR          = R - Rc

together with the expansion matrix ``alpha (I + alpha Sigma)^-1`` and the
per-class compression matrices ``alpha_j (I + alpha_j Sigma_j)^-1``.  All
log-determinants and inverses go through Cholesky factorizations of the
(always SPD) matrices ``I + alpha Sigma``; covariance recovery goes through a
symmetric eigendecomposition so its domain check and PSD clamp are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegenerateInputError,
    InconsistentParameterError,
    InvalidInputError,
    NumericalError,
)

__all__ = [
    "LabelAssignment",
    "CodingParams",
    "coding_rate",
    "compression_rate",
    "rate_reduction",
    "rate_reduction_from_covariances",
    "normalize_classwise",
    "expansion_matrix",
    "compression_matrix",
    "recover_covariance",
    "symmetrize",
    "psd_clamp",
]

# Relative asymmetry tolerated before a "covariance" argument is rejected.
SYMMETRY_TOL = 1e-8
# Eigenvalues of C/alpha_j may exceed 1 by at most this much (rounding slack).
RECOVERY_SLACK = 1e-8
# Negative eigenvalues above this (relative) threshold are clamped to zero.
PSD_FAIL_BELOW = -1e-8


def _as_sample_matrix(Z, name: str = "Z") -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a d x m matrix, got shape {Z.shape}")
    if not np.isfinite(Z).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return Z


def symmetrize(A: np.ndarray) -> np.ndarray:
    """Return the symmetric part (A + A^T) / 2."""
    return (A + A.T) / 2.0


def _check_symmetric(A, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.abs(A).max()))
    if float(np.abs(A - A.T).max()) > SYMMETRY_TOL * scale:
        raise InvalidInputError(f"{name} is not symmetric within {SYMMETRY_TOL:g}")
    return symmetrize(A)


def _cholesky(M: np.ndarray, context: str):
    """Cholesky factor of an SPD matrix, wrapping LAPACK failures."""
    try:
        return sla.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise NumericalError(f"{context}: matrix not positive definite ({exc})") from exc


def _spd_logdet(M: np.ndarray, context: str) -> float:
    c, _ = _cholesky(M, context)
    return float(2.0 * np.sum(np.log(np.diag(c))))


def _spd_inverse(M: np.ndarray, context: str) -> np.ndarray:
    cf = _cholesky(M, context)
    inv = sla.cho_solve(cf, np.eye(M.shape[0]), check_finite=False)
    return symmetrize(inv)


class LabelAssignment:
    """Hard class labels for the columns of a sample matrix.

    The registry fixes the class order used everywhere downstream (layer
    compression matrices, subspace bases, serialized containers).  By default
    it is the order of first appearance in ``labels``.
    """

    def __init__(self, labels: Sequence, registry: Sequence | None = None):
        norm = [self._normalize_id(v) for v in labels]
        if not norm:
            raise InvalidInputError("labels must be nonempty")
        if registry is None:
            registry = list(dict.fromkeys(norm))
        else:
            registry = [self._normalize_id(v) for v in registry]
            if len(set(registry)) != len(registry):
                raise InvalidInputError("registry contains duplicate class identifiers")
            known = set(registry)
            for v in norm:
                if v not in known:
                    raise InvalidInputError(f"label {v!r} missing from registry")
        self.labels = norm
        self.registry = registry
        pos = {c: i for i, c in enumerate(registry)}
        self.indices_by_class = [
            np.array([i for i, v in enumerate(norm) if pos[v] == j], dtype=np.intp)
            for j in range(len(registry))
        ]
        for c, idx in zip(registry, self.indices_by_class):
            if idx.size == 0:
                raise InvalidInputError(f"class {c!r} has zero samples")
        self.counts = np.array([idx.size for idx in self.indices_by_class], dtype=np.int64)

    @staticmethod
    def _normalize_id(v):
        if isinstance(v, (np.integer, np.bool_)):
            return int(v)
        if isinstance(v, np.str_):
            return str(v)
        if isinstance(v, (int, str)):
            return v
        raise InvalidInputError(f"class identifier {v!r} must be an int or str")

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def k(self) -> int:
        return len(self.registry)

    def index_of(self, class_id) -> int:
        try:
            return self.registry.index(self._normalize_id(class_id))
        except ValueError:
            raise InvalidInputError(f"unknown class {class_id!r}") from None

    def subset(self, column_indices: np.ndarray, registry: Sequence | None = None) -> "LabelAssignment":
        """Labels restricted to the given columns (original order preserved)."""
        return LabelAssignment([self.labels[i] for i in column_indices], registry=registry)

    def __repr__(self) -> str:
        return f"LabelAssignment(m={self.m}, registry={self.registry})"


@dataclass(frozen=True)
class CodingParams:
    """Quantization precision and the scalars it induces for a class partition."""

    epsilon: float
    dim: int
    counts: np.ndarray
    alpha: float = field(init=False)
    alphas: np.ndarray = field(init=False)
    gammas: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1 or (counts < 1).any():
            raise InvalidInputError("every class must have at least one sample")
        object.__setattr__(self, "counts", counts)
        m = int(counts.sum())
        d = int(self.dim)
        eps2 = self.epsilon**2
        object.__setattr__(self, "alpha", d / (m * eps2))
        object.__setattr__(self, "alphas", d / (counts * eps2))
        object.__setattr__(self, "gammas", counts / m)

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    @property
    def k(self) -> int:
        return int(self.counts.size)


def _gram_logdet(Z: np.ndarray, alpha: float, context: str) -> float:
    """logdet(I + alpha Z Z^T), evaluated on the smaller Gram side."""
    d, m = Z.shape
    if m < d:
        G = Z.T @ Z
        n = m
    else:
        G = Z @ Z.T
        n = d
    return _spd_logdet(np.eye(n) + alpha * symmetrize(G), context)


def coding_rate(Z, epsilon: float) -> float:
    """Total coding rate 1/2 logdet(I + alpha Z Z^T) with alpha = d/(m eps^2)."""
    Z = _as_sample_matrix(Z)
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    d, m = Z.shape
    alpha = d / (m * epsilon**2)
    return 0.5 * _gram_logdet(Z, alpha, "coding_rate")


def compression_rate(Z, pi: LabelAssignment, epsilon: float) -> float:
    """Count-weighted sum of per-class coding rates."""
    Z = _as_sample_matrix(Z)
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")
    if pi.m != Z.shape[1]:
        raise InvalidInputError(
            f"label count {pi.m} does not match sample count {Z.shape[1]}"
        )
    d = Z.shape[0]
    params = CodingParams(epsilon, d, pi.counts)
    total = 0.0
    for j, idx in enumerate(pi.indices_by_class):
        total += params.gammas[j] * 0.5 * _gram_logdet(
            Z[:, idx], params.alphas[j], f"compression_rate[{pi.registry[j]!r}]"
        )
    return total


def rate_reduction(Z, pi: LabelAssignment, epsilon: float) -> float:
    """Coding rate of all features minus the per-class compression rate."""
    return coding_rate(Z, epsilon) - compression_rate(Z, pi, epsilon)


def rate_reduction_from_covariances(
    covariances: Sequence[np.ndarray], params: CodingParams
) -> float:
    """Rate reduction evaluated from per-class second moments Sigma_j = Z^j Z^jT.

    Used where raw features are unavailable (covariance-ledger propagation)
    and as the per-layer training diagnostic.
    """
    if len(covariances) != params.k:
        raise InvalidInputError("one covariance per class required")
    d = params.dim
    total = np.zeros((d, d))
    rc = 0.0
    for j, S in enumerate(covariances):
        total += S
        rc += params.gammas[j] * 0.5 * _spd_logdet(
            np.eye(d) + params.alphas[j] * S, "rate_reduction_from_covariances"
        )
    r = 0.5 * _spd_logdet(np.eye(d) + params.alpha * total, "rate_reduction_from_covariances")
    return r - rc


def normalize_classwise(Z, pi: LabelAssignment) -> np.ndarray:
    """Scale each class block so its squared Frobenius norm equals its count.

    Each block is multiplied by one positive scalar; column directions are
    unchanged.  A class block with zero norm cannot be normalized.
    """
    Z = _as_sample_matrix(Z)
    if pi.m != Z.shape[1]:
        raise InvalidInputError(
            f"label count {pi.m} does not match sample count {Z.shape[1]}"
        )
    out = Z.copy()
    for c, idx in zip(pi.registry, pi.indices_by_class):
        block = out[:, idx]
        fro2 = float(np.einsum("ij,ij->", block, block))
        if fro2 <= 0.0:
            raise DegenerateInputError(f"class {c!r} has zero Frobenius norm")
        scale = np.sqrt(idx.size / fro2)
        if scale != 1.0:
            out[:, idx] = block * scale
    return out


def expansion_matrix(Sigma_total, alpha: float) -> np.ndarray:
    """alpha (I + alpha Sigma)^-1 for the total covariance Sigma = Z Z^T."""
    if alpha <= 0:
        raise InvalidInputError("alpha must be positive")
    S = _check_symmetric(Sigma_total, "Sigma_total")
    d = S.shape[0]
    return alpha * _spd_inverse(np.eye(d) + alpha * S, "expansion_matrix")


def compression_matrix(Sigma_j, alpha_j: float) -> np.ndarray:
    """alpha_j (I + alpha_j Sigma_j)^-1 for a per-class covariance."""
    if alpha_j <= 0:
        raise InvalidInputError("alpha_j must be positive")
    S = _check_symmetric(Sigma_j, "Sigma_j")
    d = S.shape[0]
    return alpha_j * _spd_inverse(np.eye(d) + alpha_j * S, "compression_matrix")


def recover_covariance(C_j, alpha_j: float) -> np.ndarray:
    """Invert ``compression_matrix``: the unique PSD Sigma with C = alpha (I + alpha Sigma)^-1.

    Computed through the eigendecomposition of C so the admissibility check
    (spectrum of C/alpha_j inside (0, 1]) and the PSD clamp act directly on
    eigenvalues.
    """
    if alpha_j <= 0:
        raise InvalidInputError("alpha_j must be positive")
    C = _check_symmetric(C_j, "C_j")
    w, U = np.linalg.eigh(C)
    t = w / alpha_j
    if t[0] <= 0.0 or t[-1] > 1.0 + RECOVERY_SLACK:
        raise InconsistentParameterError(
            f"eigenvalues of C/alpha_j in [{t[0]:.3e}, {t[-1]:.3e}] "
            f"outside (0, 1 + {RECOVERY_SLACK:g}]"
        )
    sig = 1.0 / w - 1.0 / alpha_j
    np.clip(sig, 0.0, None, out=sig)
    return symmetrize((U * sig) @ U.T)


def psd_clamp(A, fail_below: float = PSD_FAIL_BELOW) -> np.ndarray:
    """Project a nearly-PSD symmetric matrix onto the PSD cone.

    Eigenvalues in [fail_below * scale, 0) are clamped to zero; anything
    lower raises.  Returns the (symmetrized) input unchanged when already PSD
    so exact results are not perturbed.
    """
    from .errors import NumericalDegradationError

    S = symmetrize(np.asarray(A, dtype=np.float64))
    w, U = np.linalg.eigh(S)
    if w[0] >= 0.0:
        return S
    scale = max(1.0, float(w[-1]))
    if w[0] < fail_below * scale:
        raise NumericalDegradationError(
            f"matrix has eigenvalue {w[0]:.3e}, below {fail_below * scale:.3e}"
        )
    np.clip(w, 0.0, None, out=w)
    return symmetrize((U * w) @ U.T)
