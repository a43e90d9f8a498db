"""Decentralized cooperative activity detection solver.

Each AP alternates a (probabilistic) gradient step on its covariance ML cost,
a row-norm shrink driven by the sparsity penalty, and a prox step toward one
randomly sampled neighbor's state vector, while maintaining subgradient
estimators of the full similarity term.  APs exchange their state vectors with
one-hop neighbors once per iteration; within a round all APs update
independently from immutable inboxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import CovarianceModel, GradientSample, probabilistic_gradient, rank1_update
from .errors import ConfigurationError, NumericalDomainError, TrialAbort
from .network import ActivityPattern, SignatureMatrix
from .regularizers import (
    SubgradientBank,
    local_parameter_matrix,
    similarity_prox,
    similarity_value,
    sparsity_prox_step,
    sparsity_value,
    update_aggregate_subgradient,
    update_neighbor_subgradient,
)
from .seeding import stream

# Below this value of tau * eta_l the neighbor prox degenerates to a positivity
# clamp and the subgradient refresh would divide by ~0; both are skipped.
_TAU_ETA_SKIP = 1e-14

# Default activity threshold scale, calibrated by a threshold sweep on the
# shipped desk-scale instance (see experiments.desk_sourced): the activity
# error rate has an interior minimum on a plateau around this value.
DEFAULT_THRESHOLD_SCALE = 0.25


@dataclass(frozen=True)
class SolverConfig:
    """Hyper-parameters of the cooperative detection iteration."""

    theta: float = 1.0 / 0.039
    beta: float = 0.38
    tau: float = 0.03
    rho: float = 500.0
    epsilon: float = 90.0
    p_bar: float = 1.0
    eta0: float = 0.03
    # The cold-start gradient scales like gain * L^2, so the configured eta0
    # alone can catapult the first iterate far past the basin of the fit; the
    # first move is additionally capped at this many noise-power units.
    first_step_cap: float = 1.0
    max_iters: int = 150
    threshold_scale: float = DEFAULT_THRESHOLD_SCALE
    refactor_every: int = 500

    def validate(self) -> None:
        if self.theta <= 0:
            raise ConfigurationError("theta must be > 0")
        if self.beta < 0 or self.tau < 0:
            raise ConfigurationError("beta and tau must be >= 0")
        if self.rho <= 0:
            raise ConfigurationError("rho must be > 0")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if not 0.0 < self.p_bar <= 1.0:
            raise ConfigurationError("p_bar must lie in (0, 1]")
        if self.eta0 <= 0:
            raise ConfigurationError("eta0 must be > 0")
        if self.first_step_cap <= 0:
            raise ConfigurationError("first_step_cap must be > 0")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be >= 0")
        if self.threshold_scale <= 0:
            raise ConfigurationError("threshold_scale must be > 0")


@dataclass(frozen=True)
class DetectionProblem:
    """One synthesized detection instance shared by all APs."""

    signatures: SignatureMatrix
    sample_covs: list  # per AP, (L, L) Hermitian PSD
    noise_power: float
    neighbor_sets: tuple  # per AP, sorted tuple of AP ids including itself

    @property
    def num_aps(self) -> int:
        return len(self.sample_covs)

    @property
    def num_devices(self) -> int:
        return self.signatures.count


class ApSolverState:
    """Mutable per-AP iterate bundle."""

    def __init__(self, ap_index: int, problem: DetectionProblem, config: SolverConfig,
                 rng: np.random.Generator):
        n = problem.num_devices
        self.ap_index = ap_index
        self.neighbors = problem.neighbor_sets[ap_index]
        self.others = tuple(l for l in self.neighbors if l != ap_index)
        self.rng = rng
        self.sample_cov = problem.sample_covs[ap_index]
        self.gamma = np.zeros(n)
        self.gamma_prev: np.ndarray | None = None
        self.model = CovarianceModel(
            problem.signatures, problem.noise_power, refactor_every=config.refactor_every
        )
        self.bank = SubgradientBank.zeros(self.neighbors, n)
        self.z = np.zeros(n)
        self.step = config.eta0
        self.has_moved = False
        self.grad_prev: GradientSample | None = None
        # No distance information exists before the first round.
        self.combiners = {l: 1.0 / len(self.neighbors) for l in self.neighbors}
        self.inbox = {l: np.zeros(n) for l in self.others}
        self.iteration = 0
        self.grad_eval_count = 0

    # Selection probabilities over the neighbor set, own index included.
    @property
    def neighbor_probs(self) -> np.ndarray:
        return np.full(len(self.neighbors), 1.0 / len(self.neighbors))


@dataclass
class RoundTrace:
    """Per-iteration record of one solver run."""

    costs: list = field(default_factory=list)  # (B,) array per iteration
    steps: list = field(default_factory=list)  # (B,) array per iteration
    selected: list = field(default_factory=list)  # (B,) int array per iteration
    messages: list = field(default_factory=list)  # int per iteration
    grad_evals: int = 0
    # Populated only when keep_iterates is requested.
    gammas: list = field(default_factory=list)  # (B, N) per iteration (post-update)
    banks: list = field(default_factory=list)  # per iteration, per AP dict l -> x
    combiner_history: list = field(default_factory=list)  # per iteration, per AP dict
    step_history_eta_l: list = field(default_factory=list)  # per iteration, per AP dict

    @property
    def total_messages(self) -> int:
        return int(sum(self.messages))


@dataclass
class SolverResult:
    estimates: np.ndarray  # (B, N) final device state estimates
    trace: RoundTrace


def adaptive_step(
    gamma_t: np.ndarray,
    gamma_prev: np.ndarray,
    grad_t: np.ndarray,
    grad_prev: np.ndarray,
    epsilon: float,
    fallback: float,
) -> float:
    """Quasi-Newton step estimate with a guarded denominator.

    eta = ||dg||^2 / (|<dg, dgrad>| + epsilon ||dg||^2); returns `fallback`
    when the iterate has not moved.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be >= 0")
    dg = gamma_t - gamma_prev
    sq = float(np.dot(dg, dg))
    if sq == 0.0:
        return fallback
    denom = abs(float(np.dot(dg, grad_t - grad_prev))) + epsilon * sq
    if denom == 0.0:
        return fallback
    return sq / denom


def adaptive_combiners(
    own_gamma: np.ndarray, inbox: dict, rho: float, self_index: int
) -> dict:
    """Distance-adaptive simplex weights over the neighbor set.

    Off-weights are a scaled logistic of the state-vector distance; the
    self-weight closes the simplex.  With no neighbors the AP keeps all mass.
    """
    if rho <= 0:
        raise ConfigurationError("rho must be > 0")
    if not inbox:
        return {self_index: 1.0}
    scale = 2.0 / len(inbox)
    weights = {}
    total = 0.0
    for l, gamma_l in inbox.items():
        d = float(np.linalg.norm(own_gamma - gamma_l))
        # exp overflow saturates the weight at exactly zero, which is the limit.
        with np.errstate(over="ignore"):
            w = scale / (1.0 + np.exp(rho * d))
        weights[l] = float(w)
        total += float(w)
    weights[self_index] = 1.0 - total
    return weights


def threshold_activity(
    gamma_hat: np.ndarray, noise_power: float, threshold_scale: float
) -> ActivityPattern:
    """Element-wise activity decision: active iff gamma exceeds scale * noise."""
    if threshold_scale <= 0:
        raise ConfigurationError("threshold_scale must be > 0")
    indicators = (np.asarray(gamma_hat) > threshold_scale * noise_power).astype(np.int8)
    return ActivityPattern(indicators=indicators)


def ap_iteration(state: ApSolverState, config: SolverConfig) -> ApSolverState:
    """One full adaptation step of a single AP (Adaptation phase of a round)."""
    rng = state.rng
    gamma_t = state.gamma

    # Probabilistic gradient at the current iterate.
    grad = probabilistic_gradient(state.model, state.sample_cov, gamma_t, config.p_bar, rng)
    if grad.was_computed:
        state.grad_eval_count += 1

    # Step size from the previous two iterates.  Until the iterate first
    # leaves the origin there is no curvature information, so the cold-start
    # cap applies instead (whichever iteration first draws a gradient).
    if not state.has_moved or state.grad_prev is None:
        eta = config.eta0
        if config.epsilon > 0.0:
            eta = min(eta, 1.0 / config.epsilon)
        grad_inf = float(np.max(np.abs(grad.vector))) if grad.vector.size else 0.0
        if grad_inf > 0.0:
            eta = min(eta, config.first_step_cap * state.model.noise_power / grad_inf)
    else:
        eta = adaptive_step(
            gamma_t, state.gamma_prev, grad.vector, state.grad_prev.vector,
            config.epsilon, fallback=state.step,
        )

    # Forward step plus row-norm shrink.  Neighbor columns are the values
    # received at the last communication round; the own column is current.
    varsigma = gamma_t - eta * grad.vector - config.tau * eta * state.bank.aggregate
    r_matrix = local_parameter_matrix(gamma_t, [state.inbox[l] for l in state.others])
    z = sparsity_prox_step(varsigma, r_matrix, eta, config.beta)

    # Sample one neighbor (possibly self) and form its stochastic step scale.
    probs = state.neighbor_probs
    pick = int(rng.choice(len(state.neighbors), p=probs))
    l = state.neighbors[pick]
    p_l = float(probs[pick])

    if state.gamma_prev is None:
        combiners = dict(state.combiners)
    else:
        combiners = adaptive_combiners(
            state.gamma_prev, state.inbox, config.rho, state.ap_index
        )
    eta_l = combiners[l] * eta / p_l
    tau_eta_l = config.tau * eta_l

    gamma_ref = gamma_t if l == state.ap_index else state.inbox[l]
    x_l = state.bank.per_neighbor[l]

    # Coordinate sweep in a fresh random order; the covariance model is
    # refreshed after every coordinate.
    perm = rng.permutation(len(gamma_t))
    gamma_next = gamma_t.copy()
    if tau_eta_l > _TAU_ETA_SKIP:
        v_full = z + tau_eta_l * x_l
        updates = similarity_prox(v_full, gamma_ref, tau_eta_l)
    else:
        updates = np.maximum(z, 0.0)
    for n in perm:
        n = int(n)
        new_value = float(updates[n])
        rank1_update(state.model, n, float(gamma_next[n]), new_value)
        gamma_next[n] = new_value

    # Subgradient bookkeeping for the selected neighbor only.
    if tau_eta_l > _TAU_ETA_SKIP:
        x_new = update_neighbor_subgradient(x_l, z, gamma_next, tau_eta_l)
        update_aggregate_subgradient(state.bank, l, combiners[l], x_new)

    if not state.has_moved and bool(np.any(gamma_next != gamma_t)):
        state.has_moved = True
    state.gamma_prev = gamma_t
    state.gamma = gamma_next
    state.z = z
    state.step = eta
    state.grad_prev = grad
    state.combiners = combiners
    state.selected_neighbor = l
    state.eta_selected = eta_l
    state.iteration += 1
    return state


def exchange_round(states: list) -> int:
    """Deliver each AP's pre-update iterate to its one-hop neighbors.

    Returns the number of state vectors put on the wire this round.
    """
    messages = 0
    for state in states:
        outgoing = state.gamma_prev if state.gamma_prev is not None else state.gamma
        for l in state.others:
            states[l].inbox[state.ap_index] = outgoing
            messages += 1
    return messages


def _record_round(trace: RoundTrace, states: list, config: SolverConfig,
                  keep_iterates: bool) -> None:
    costs = np.empty(len(states))
    for b, st in enumerate(states):
        f_val = st.model.cost(st.sample_cov)
        r_matrix = local_parameter_matrix(st.gamma, [st.inbox[l] for l in st.others])
        g_val = sparsity_value(r_matrix, config.theta)
        neighbor_states = dict(st.inbox)
        neighbor_states[st.ap_index] = st.gamma
        psi_val = similarity_value(st.gamma, neighbor_states, st.combiners)
        costs[b] = f_val + config.beta * g_val + config.tau * psi_val
    trace.costs.append(costs)
    trace.steps.append(np.array([st.step for st in states]))
    trace.selected.append(np.array([st.selected_neighbor for st in states], dtype=int))
    if keep_iterates:
        trace.gammas.append(np.stack([st.gamma for st in states]))
        trace.banks.append([{l: x.copy() for l, x in st.bank.per_neighbor.items()}
                            for st in states])
        trace.combiner_history.append([dict(st.combiners) for st in states])
        probs = {st.ap_index: st.neighbor_probs for st in states}
        eta_ls = []
        for st in states:
            p = probs[st.ap_index]
            eta_ls.append({l: st.combiners[l] * st.step / p[i]
                           for i, l in enumerate(st.neighbors)})
        trace.step_history_eta_l.append(eta_ls)


def init_states(problem: DetectionProblem, config: SolverConfig, seed: int) -> list:
    config.validate()
    return [
        ApSolverState(b, problem, config, stream(seed, "ap", b))
        for b in range(problem.num_aps)
    ]


def run(problem: DetectionProblem, config: SolverConfig, seed: int,
        keep_iterates: bool = False) -> SolverResult:
    """Execute the full synchronous solve: T rounds of per-AP updates + exchange."""
    states = init_states(problem, config, seed)
    trace = RoundTrace()
    try:
        for _ in range(config.max_iters):
            for state in states:
                ap_iteration(state, config)
            trace.messages.append(exchange_round(states))
            _record_round(trace, states, config, keep_iterates)
    except NumericalDomainError as exc:
        trace.grad_evals = sum(st.grad_eval_count for st in states)
        raise TrialAbort(exc, partial_trace=trace) from exc
    trace.grad_evals = sum(st.grad_eval_count for st in states)
    estimates = np.stack([state.gamma for state in states])
    return SolverResult(estimates=estimates, trace=trace)


def noncooperative_config(config: SolverConfig) -> SolverConfig:
    """Solver configuration of the non-cooperative baseline (similarity off)."""
    return replace(config, tau=0.0)


def singleton_neighbor_sets(num_aps: int) -> tuple:
    return tuple((b,) for b in range(num_aps))


def complete_neighbor_sets(num_aps: int) -> tuple:
    full = tuple(range(num_aps))
    return tuple(full for _ in range(num_aps))
