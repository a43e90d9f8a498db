"""Covariance-based ML cost, its gradient, and incremental model maintenance.

The local cost at one AP is

    f(gamma) = ln det(Sigma) + tr(Sigma^{-1} SampleCov),
    Sigma    = S diag(gamma) S^H + noise_power * I.

`CovarianceModel` tracks Sigma^{-1} and ln det(Sigma) under per-coordinate
rank-1 changes of gamma via the Sherman-Morrison identity, re-factorizing
periodically so floating-point drift stays bounded.  Dense evaluators of the
same quantities serve as oracles and as diagnostics at arbitrary points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DomainError, NumericalDomainError
from .network import SignatureMatrix

# Rank-1 updates whose Sherman-Morrison denominator falls below this leave the
# numerically safe regime and abort the computation.
_DENOM_FLOOR = 1e-12

DEFAULT_REFACTOR_EVERY = 500


@dataclass
class GradientSample:
    """Outcome of one probabilistic gradient draw."""

    vector: np.ndarray
    was_computed: bool


def build_covariance(signatures: np.ndarray, noise_power: float, gamma: np.ndarray) -> np.ndarray:
    """Dense Sigma = S diag(gamma) S^H + noise_power I."""
    s = signatures
    return (s * gamma[None, :]) @ s.conj().T + noise_power * np.eye(s.shape[0])


def _cholesky(sigma: np.ndarray):
    try:
        return scipy.linalg.cholesky(sigma, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalDomainError(f"covariance not positive definite: {exc}") from exc


def dense_cost(
    signatures: np.ndarray, noise_power: float, sample_cov: np.ndarray, gamma: np.ndarray
) -> float:
    """ln det(Sigma) + tr(Sigma^{-1} SampleCov) via triangular factorization."""
    chol = _cholesky(build_covariance(signatures, noise_power, gamma))
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))
    half = scipy.linalg.solve_triangular(chol, sample_cov, lower=True)
    inv_times_cov = scipy.linalg.solve_triangular(chol.conj().T, half, lower=False)
    return logdet + float(np.real(np.trace(inv_times_cov)))


def dense_gradient(
    signatures: np.ndarray, noise_power: float, sample_cov: np.ndarray, gamma: np.ndarray
) -> np.ndarray:
    """Gradient of the ML cost at an arbitrary point, by dense factorization."""
    chol = _cholesky(build_covariance(signatures, noise_power, gamma))
    v = scipy.linalg.cho_solve((chol, True), signatures)
    first = np.real(np.einsum("ln,ln->n", signatures.conj(), v))
    second = np.real(np.einsum("ln,ln->n", v.conj(), sample_cov @ v))
    return first - second


class CovarianceModel:
    """Single-writer incremental view of Sigma(gamma) for one AP.

    The inverse and log-determinant are updated in O(L^2) per coordinate
    change; the dense matrix itself is materialized from the tracked gamma on
    demand and everything is rebuilt from scratch every `refactor_every`
    updates.
    """

    def __init__(
        self,
        signatures: SignatureMatrix,
        noise_power: float,
        gamma: np.ndarray | None = None,
        refactor_every: int = DEFAULT_REFACTOR_EVERY,
    ):
        if noise_power <= 0:
            raise ConfigurationError("noise_power must be > 0")
        self.signatures = signatures
        self.noise_power = float(noise_power)
        self.refactor_every = int(refactor_every)
        n = signatures.count
        self.gamma = np.zeros(n) if gamma is None else np.asarray(gamma, dtype=float).copy()
        if self.gamma.shape != (n,):
            raise DomainError("gamma length must match the signature count")
        if np.any(self.gamma < 0):
            raise DomainError("gamma must be nonnegative")
        self._updates = 0
        self.refactor()

    # -- dense views -------------------------------------------------------

    @property
    def sigma(self) -> np.ndarray:
        """Exact Sigma for the tracked gamma (materialized on access)."""
        return build_covariance(self.signatures.entries, self.noise_power, self.gamma)

    def refactor(self) -> None:
        """Rebuild sigma_inv and logdet from the tracked gamma."""
        sigma = self.sigma
        chol = _cholesky(sigma)
        self.sigma_inv = np.linalg.inv(sigma)
        self.logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))
        self._updates = 0

    def inverse_drift(self) -> float:
        """Frobenius norm of sigma @ sigma_inv - I."""
        eye = np.eye(self.signatures.length)
        return float(np.linalg.norm(self.sigma @ self.sigma_inv - eye))

    def cost(self, sample_cov: np.ndarray) -> float:
        """ML cost at the tracked gamma from the incremental state."""
        # sigma_inv is Hermitian, so vdot(sigma_inv, sample_cov) equals the trace.
        return self.logdet + float(np.real(np.vdot(self.sigma_inv, sample_cov)))

    def copy(self) -> "CovarianceModel":
        dup = object.__new__(CovarianceModel)
        dup.signatures = self.signatures
        dup.noise_power = self.noise_power
        dup.refactor_every = self.refactor_every
        dup.gamma = self.gamma.copy()
        dup.sigma_inv = self.sigma_inv.copy()
        dup.logdet = self.logdet
        dup._updates = self._updates
        return dup


def ml_cost(gamma: np.ndarray, model: CovarianceModel, sample_cov: np.ndarray) -> float:
    """ML cost at an arbitrary nonnegative gamma (dense evaluation)."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise DomainError("gamma must be nonnegative")
    return dense_cost(model.signatures.entries, model.noise_power, sample_cov, gamma)


def downdate(model: CovarianceModel, n: int, gamma_n: float) -> np.ndarray:
    """Inverse of Sigma - gamma_n s_n s_n^H via the rank-1 identity."""
    s = model.signatures.entries[:, n]
    v = model.sigma_inv @ s
    denom = 1.0 - gamma_n * float(np.real(np.vdot(s, v)))
    if abs(denom) < _DENOM_FLOOR:
        raise NumericalDomainError(f"downdate denominator {denom!r} below safe floor")
    return model.sigma_inv + (gamma_n / denom) * np.outer(v, v.conj())


def coordinate_gradient(
    model: CovarianceModel, sample_cov: np.ndarray, n: int, gamma_n: float
) -> float:
    """Closed-form derivative of the ML cost with respect to one coordinate."""
    s = model.signatures.entries[:, n]
    inv_down = downdate(model, n, gamma_n)
    v = inv_down @ s
    q = float(np.real(np.vdot(s, v)))
    denom = 1.0 + gamma_n * q
    quad = float(np.real(np.vdot(v, sample_cov @ v)))
    return q / denom - quad / denom**2


def full_gradient(
    model: CovarianceModel, sample_cov: np.ndarray, gamma: np.ndarray | None = None
) -> np.ndarray:
    """Gradient of the ML cost at the model's tracked gamma.

    Algebraically identical to stacking `coordinate_gradient` over all
    coordinates against the same base Sigma, but evaluated in one shot from
    sigma_inv.
    """
    if gamma is not None and not np.array_equal(np.asarray(gamma, float), model.gamma):
        raise DomainError("full_gradient must be evaluated at the model's tracked gamma")
    s = model.signatures.entries
    v = model.sigma_inv @ s
    first = np.einsum("ln,ln->n", s.conj(), v).real
    second = np.einsum("ln,ln->n", v.conj(), sample_cov @ v).real
    return first - second


def probabilistic_gradient(
    model: CovarianceModel,
    sample_cov: np.ndarray,
    gamma: np.ndarray | None,
    p_bar: float,
    rng: np.random.Generator,
) -> GradientSample:
    """Full gradient with probability p_bar, the zero vector otherwise."""
    if not 0.0 < p_bar <= 1.0:
        raise ConfigurationError(f"p_bar must lie in (0, 1], got {p_bar}")
    if p_bar >= 1.0 or rng.random() < p_bar:
        return GradientSample(vector=full_gradient(model, sample_cov, gamma), was_computed=True)
    return GradientSample(vector=np.zeros(model.signatures.count), was_computed=False)


def rank1_update(
    model: CovarianceModel, n: int, old_gamma_n: float, new_gamma_n: float
) -> CovarianceModel:
    """Apply gamma[n]: old -> new to the model's Sigma, inverse and logdet."""
    if new_gamma_n < 0:
        raise DomainError("updated gamma must stay nonnegative")
    if model.gamma[n] != old_gamma_n:
        raise DomainError("old_gamma_n does not match the tracked state")
    delta = new_gamma_n - old_gamma_n
    if delta == 0.0:
        return model
    s = model.signatures.entries[:, n]
    v = model.sigma_inv @ s
    q = np.vdot(s, v).real
    denom = 1.0 + delta * q
    if abs(denom) < _DENOM_FLOOR:
        raise NumericalDomainError(f"rank-1 update denominator {denom!r} below safe floor")
    scaled = ((-delta) / denom) * v
    model.sigma_inv += scaled[:, None] * v.conj()[None, :]
    model.logdet += float(np.log(abs(denom)))
    model.gamma[n] = new_gamma_n
    model._updates += 1
    if model._updates >= model.refactor_every:
        model.refactor()
    return model
