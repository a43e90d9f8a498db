"""Sparsity and similarity penalties with their proximal/subgradient machinery.

The sparsity penalty acts on the rows of a local parameter matrix whose
columns are the AP's own state vector and its neighbors' last-received ones;
the similarity penalty is a combiner-weighted sum of l1 distances to
neighbors.  Both are evaluated here together with the exact scalar prox used
by the solver's coordinate updates and the subgradient bank the splitting
scheme maintains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

# Row norms below this are treated as dead rows: the shrink factor collapses
# and the coordinate is fully zeroed.
_ROW_NORM_FLOOR = 1e-12

# Products tau*eta below this make the subgradient estimator division
# meaningless; the estimator is emitted unchanged instead.
_TAU_ETA_FLOOR = 1e-30


def local_parameter_matrix(own: np.ndarray, neighbor_values: list[np.ndarray]) -> np.ndarray:
    """Stack neighbor state vectors and the AP's own one (own column last)."""
    return np.column_stack(list(neighbor_values) + [own])


def sparsity_value(parameter_matrix: np.ndarray, theta: float) -> float:
    """Smoothed row-norm surrogate: sum of ||row|| - ln(1 + theta ||row||)/theta."""
    if theta <= 0:
        raise ConfigurationError(f"theta must be > 0, got {theta}")
    r = np.atleast_2d(parameter_matrix)
    row_norms = np.linalg.norm(r, axis=1)
    return float(np.sum(row_norms - np.log1p(theta * row_norms) / theta))


def sparsity_prox_step(
    varsigma: np.ndarray, parameter_matrix: np.ndarray, eta: float, beta: float
) -> np.ndarray:
    """Row-norm-scaled shrink of the forward iterate (group soft threshold).

    Each coordinate is scaled by 1 - eta*beta/||row|| where the row norm is
    taken with the AP's own column evaluated at the forward iterate itself;
    factors that would overshoot through zero clamp to a full shrink.  With no
    neighbor mass this is exactly the scalar soft threshold at level eta*beta,
    so dead rows stay dead under small pushes but a cold start can escape the
    all-zero state.
    """
    if eta <= 0:
        raise ConfigurationError(f"eta must be > 0, got {eta}")
    if beta < 0:
        raise ConfigurationError(f"beta must be >= 0, got {beta}")
    r = np.atleast_2d(parameter_matrix)
    neighbor_sq = np.einsum("nk,nk->n", r[:, :-1], r[:, :-1])
    row_norms = np.sqrt(neighbor_sq + np.asarray(varsigma) ** 2)
    factor = 1.0 - eta * beta / np.maximum(row_norms, _ROW_NORM_FLOOR)
    return varsigma * np.maximum(factor, 0.0)


def similarity_value(gamma_b: np.ndarray, neighbor_states: dict, combiners: dict) -> float:
    """Combiner-weighted sum of l1 distances to the neighbor state vectors."""
    total = 0.0
    for l, weight in combiners.items():
        if weight == 0.0:
            continue
        total += weight * float(np.sum(np.abs(gamma_b - neighbor_states[l])))
    return total


def soft_threshold(x: np.ndarray, lam: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def similarity_prox(v: np.ndarray, gamma_l: np.ndarray, tau_eta: float) -> np.ndarray:
    """Exact minimizer of tau_eta*|u - gamma_l| + (u - v)^2/2 over u >= 0.

    Component-wise: shift to the neighbor value, soft-threshold, clamp at zero.
    """
    if tau_eta < 0:
        raise ConfigurationError(f"tau_eta must be >= 0, got {tau_eta}")
    return np.maximum(gamma_l + soft_threshold(v - gamma_l, tau_eta), 0.0)


def similarity_prox_objective(u: np.ndarray, v: float, gamma_l: float, tau_eta: float):
    """Scalar prox objective, exposed for oracle tests."""
    return tau_eta * np.abs(u - gamma_l) + 0.5 * (u - v) ** 2


def update_neighbor_subgradient(
    x_prev: np.ndarray, z: np.ndarray, gamma_next: np.ndarray, tau_eta: float
) -> np.ndarray:
    """Subgradient estimator refresh: x + (z - gamma_next)/(tau*eta)."""
    if tau_eta <= 0:
        raise ConfigurationError(f"tau_eta must be > 0, got {tau_eta}")
    if tau_eta < _TAU_ETA_FLOOR:
        return x_prev
    return x_prev + (z - gamma_next) / tau_eta


@dataclass
class SubgradientBank:
    """Per-neighbor subgradient estimators and their combiner-weighted aggregate.

    The aggregate is maintained incrementally: each refresh touches the single
    selected neighbor with the combiner weight frozen at that step.
    """

    per_neighbor: dict = field(default_factory=dict)
    aggregate: np.ndarray = None

    @classmethod
    def zeros(cls, neighbor_ids, dim: int) -> "SubgradientBank":
        return cls(
            per_neighbor={l: np.zeros(dim) for l in neighbor_ids},
            aggregate=np.zeros(dim),
        )

    def copy(self) -> "SubgradientBank":
        return SubgradientBank(
            per_neighbor={l: x.copy() for l, x in self.per_neighbor.items()},
            aggregate=self.aggregate.copy(),
        )


def update_aggregate_subgradient(
    bank: SubgradientBank, l: int, c_lb: float, x_new: np.ndarray
) -> SubgradientBank:
    """Replace one neighbor's estimator and fold the change into the aggregate."""
    if l not in bank.per_neighbor:
        raise DomainError(f"neighbor {l} not tracked by this bank")
    bank.aggregate = bank.aggregate + c_lb * (x_new - bank.per_neighbor[l])
    bank.per_neighbor[l] = x_new
    return bank
