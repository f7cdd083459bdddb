"""Dense eigendecomposition helpers, matrix log/exp, and the channel-mixing
weight parameterization W = U diag(M) U^T with an orthogonality retraction.

The log/exp paths back the closed-form oracles and run on dense matrices
of at most a few hundred rows; they are not a production code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Lower/upper clamp for the weight eigenvalues: keeps W - I strictly inside
# (-1, 0) so the long-time limits of the mixing dynamics exist.
EIGEN_CLAMP = 1e-3

# Eigenvalues of the oracle matrix log are floored here; the regularized
# operator can have an exact zero eigenvalue that ln() cannot tolerate.
LOG_FLOOR = 1e-6

_SYM_TOL = 1e-10


class SpectralError(ValueError):
    """Decomposition preconditions violated or decomposition failed."""


@dataclass
class EigenDecomp:
    """M = vectors @ diag(values) @ inverse_vectors."""

    vectors: np.ndarray
    values: np.ndarray
    inverse_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.inverse_vectors


def eig_sym(m: np.ndarray) -> EigenDecomp:
    """Eigendecomposition of a symmetric matrix; values ascending, inverse = transpose."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {m.shape}")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > _SYM_TOL:
        raise SpectralError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    values, vectors = np.linalg.eigh(m)
    return EigenDecomp(vectors=vectors, values=values, inverse_vectors=vectors.T)


def eig_any(m: np.ndarray) -> EigenDecomp:
    """Symmetric fast path, general np.linalg.eig otherwise (small matrices only).

    A general decomposition with complex pairs is kept complex; callers that
    need real output take the real part after forming real-valued products.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) <= _SYM_TOL:
        return eig_sym(m)
    values, vectors = np.linalg.eig(m)
    try:
        inverse = np.linalg.inv(vectors)
    except np.linalg.LinAlgError as exc:
        raise SpectralError("matrix is not diagonalizable (singular eigenbasis)") from exc
    return EigenDecomp(vectors=vectors, values=values, inverse_vectors=inverse)


def matrix_log(m: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    """ln M through the eigenbasis, with eigenvalues floored at `floor`.

    Requires a real spectrum that is nonnegative up to the floor tolerance;
    anything clearly negative or complex is an error rather than silently
    floored.
    """
    dec = eig_any(m)
    values = dec.values
    if np.iscomplexobj(values):
        if np.max(np.abs(values.imag)) > 1e-9:
            raise SpectralError("matrix log requires a real spectrum")
        values = values.real
    if np.min(values) < -floor:
        raise SpectralError(
            f"matrix log requires a nonnegative spectrum; min eigenvalue {np.min(values):.3e}"
        )
    logged = np.log(np.maximum(values, floor))
    out = (dec.vectors * logged) @ dec.inverse_vectors
    return np.real_if_close(out, tol=1e6).astype(float) if np.iscomplexobj(out) else out


def matrix_exp_action(m: np.ndarray, t: float, e: np.ndarray) -> np.ndarray:
    """e^{M t} E through the eigenbasis of M. Oracle path, dense inputs only."""
    dec = eig_any(m)
    phases = np.exp(dec.values * t)
    out = (dec.vectors * phases) @ (dec.inverse_vectors @ e)
    if np.iscomplexobj(out):
        if np.max(np.abs(out.imag)) > 1e-8 * max(1.0, np.max(np.abs(out.real))):
            raise SpectralError("matrix exponential action produced a non-real result")
        out = out.real
    return out


@dataclass
class WeightSpec:
    """Channel-mixing matrix held as basis U and eigenvalue vector M.

    Materialized as U diag(clamp(M)) U^T; the retraction keeps U near the
    orthogonal manifold during training, so the entries of M are the
    eigenvalues of the mixing matrix.
    """

    basis: np.ndarray
    eigen_params: np.ndarray

    def __post_init__(self) -> None:
        self.basis = np.asarray(self.basis, dtype=float)
        self.eigen_params = np.asarray(self.eigen_params, dtype=float)
        d = self.basis.shape[0]
        if self.basis.shape != (d, d):
            raise SpectralError(f"basis must be square, got shape {self.basis.shape}")
        if self.eigen_params.shape != (d,):
            raise SpectralError(
                f"eigen_params has shape {self.eigen_params.shape}, expected ({d},)"
            )

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def clamped_eigs(self) -> np.ndarray:
        return np.clip(self.eigen_params, EIGEN_CLAMP, 1.0 - EIGEN_CLAMP)


def materialize_weight(spec: WeightSpec) -> np.ndarray:
    """U diag(clamp(M, eps, 1-eps)) U^T."""
    return (spec.basis * spec.clamped_eigs()) @ spec.basis.T


def orthogonality_retraction(u: np.ndarray, beta: float) -> np.ndarray:
    """(1 + beta) U - beta (U U^T) U: one pull toward the orthogonal manifold."""
    if not (0.0 < beta <= 1.0):
        raise SpectralError(f"beta must lie in (0, 1], got {beta}")
    return (1.0 + beta) * u - beta * (u @ u.T) @ u


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonalized standard-normal matrix (QR with a deterministic sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs
