"""Convergence diagnostics: divergence traces, Lyapunov values, step-band checks.

These quantities make the solver's convergence behavior measurable: a Bregman
divergence to a reference fixed point, a Lyapunov function combining iterate
distance with subgradient-bank distances, an empirical smoothness estimate,
the admissible step-size band, and a decay-rate fit over a recorded trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceModel, dense_cost, dense_gradient
from .errors import ConfigurationError, DomainError
from .solver import DetectionProblem, SolverConfig, run


def bregman_divergence(
    model: CovarianceModel, sample_cov: np.ndarray, x: np.ndarray, y: np.ndarray
) -> float:
    """Divergence of the ML cost between a point x and a reference y.

    d(x, y) = f(x) - f(y) - <grad f(y), x - y>; nonnegative wherever the cost
    is convex between the points, zero at x == y.
    """
    s = model.signatures.entries
    sigma2 = model.noise_power
    fx = dense_cost(s, sigma2, sample_cov, x)
    fy = dense_cost(s, sigma2, sample_cov, y)
    gy = dense_gradient(s, sigma2, sample_cov, y)
    return fx - fy - float(np.dot(gy, x - y))


def lyapunov(
    gamma: np.ndarray,
    bank: dict,
    eta_by_neighbor: dict,
    gamma_ref: np.ndarray,
    bank_ref: dict,
    tau: float,
) -> float:
    """Squared distance to the reference plus weighted bank distances.

    W = ||gamma - gamma*||^2 + sum_l (tau * eta_l)^2 ||x_l - x_l*||^2.
    """
    value = float(np.dot(gamma - gamma_ref, gamma - gamma_ref))
    for l, x_l in bank.items():
        diff = x_l - bank_ref[l]
        value += (tau * eta_by_neighbor[l]) ** 2 * float(np.dot(diff, diff))
    return value


def estimate_lipschitz(
    grad_fn,
    dim: int,
    probe_count: int,
    rng: np.random.Generator,
    lower: float = 0.0,
    upper: float = 1.0,
) -> float:
    """Empirical smoothness constant: max gradient-difference ratio over probes.

    Probes are drawn sequentially, so with a fixed stream a larger
    `probe_count` extends the same set and the estimate is non-decreasing.
    """
    if probe_count < 2:
        raise DomainError("probe_count must be >= 2")
    best = 0.0
    for _ in range(probe_count):
        x = rng.uniform(lower, upper, size=dim)
        y = rng.uniform(lower, upper, size=dim)
        dx = np.linalg.norm(x - y)
        if dx == 0.0:
            continue
        ratio = float(np.linalg.norm(grad_fn(x) - grad_fn(y)) / dx)
        best = max(best, ratio)
    return best


def ml_gradient_fn(model: CovarianceModel, sample_cov: np.ndarray):
    """Gradient closure of the ML cost for use with estimate_lipschitz."""
    s = model.signatures.entries
    sigma2 = model.noise_power
    return lambda gamma: dense_gradient(s, sigma2, sample_cov, gamma)


@dataclass
class StepBandReport:
    lower: float
    upper: float
    violations: np.ndarray  # iteration indices outside the band
    violation_rate: float


def check_step_band(eta_trace, lipschitz: float, epsilon: float) -> StepBandReport:
    """Flag steps outside [1/(L+eps), min(2/L, 1/eps)); the upper edge is open."""
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be > 0")
    if lipschitz <= 0:
        raise ConfigurationError("lipschitz must be > 0")
    eta = np.asarray(eta_trace, dtype=float)
    lower = 1.0 / (lipschitz + epsilon)
    upper = min(2.0 / lipschitz, 1.0 / epsilon)
    bad = np.flatnonzero((eta < lower) | (eta >= upper))
    rate = len(bad) / len(eta) if len(eta) else 0.0
    return StepBandReport(lower=lower, upper=upper, violations=bad, violation_rate=rate)


@dataclass
class RateReport:
    slope: float
    tail_sup_t_times_value: float
    decaying: bool


def rate_check(divergence_trace, tail_start: int | None = None) -> RateReport:
    """Log-log slope fit of a divergence trace and its tail sup of t * d_t.

    The trace is indexed from t = 1.  A slope near -1 matches a 1/t decay;
    a slope near zero flags a non-decaying trace.
    """
    d = np.asarray(divergence_trace, dtype=float)
    if len(d) < 30:
        raise DomainError("rate_check needs at least 30 recorded iterations")
    t = np.arange(1, len(d) + 1, dtype=float)
    if tail_start is None:
        tail_start = max(len(d) // 3, 5)
    mask = t >= tail_start
    vals = np.maximum(d[mask], 1e-300)
    slope = float(np.polyfit(np.log(t[mask]), np.log(vals), 1)[0])
    tail_sup = float(np.max(t[mask] * d[mask]))
    return RateReport(slope=slope, tail_sup_t_times_value=tail_sup, decaying=slope < -0.5)


def running_average(history: np.ndarray) -> np.ndarray:
    """Running averages: row t is the mean of rows 0..t (inclusive)."""
    sums = np.cumsum(history, axis=0)
    counts = np.arange(1, history.shape[0] + 1, dtype=float)
    return sums / counts.reshape((-1,) + (1,) * (history.ndim - 1))


@dataclass
class ReferenceSolution:
    """Surrogate fixed point obtained from a long full-gradient run."""

    gamma: np.ndarray  # (B, N)
    banks: list  # per AP dict l -> x
    seed: int


def reference_solution(
    problem: DetectionProblem, config: SolverConfig, seed: int, length_factor: int = 10
) -> ReferenceSolution:
    """Run length_factor times longer at p_bar = 1 to produce the reference."""
    from dataclasses import replace

    long_cfg = replace(config, p_bar=1.0, max_iters=config.max_iters * length_factor)
    result = run(problem, long_cfg, seed, keep_iterates=True)
    final_banks = result.trace.banks[-1]
    return ReferenceSolution(gamma=result.estimates, banks=final_banks, seed=seed)


@dataclass
class ConvergenceTrace:
    """Per-iteration diagnostics of one instrumented run."""

    bregman: np.ndarray = None  # (T,) mean over APs of d(avg iterate, reference)
    lyapunov: np.ndarray = None  # (T,) sum over APs
    steps: np.ndarray = None  # (T, B)
    averages: np.ndarray = None  # (T, B, N) running averages
    per_ap_bregman: np.ndarray = None  # (T, B)


def trace_payload(trace: "ConvergenceTrace") -> dict:
    """JSON-able form of a trace for embedding into a RunRecord's diagnostics."""
    return {
        "bregman": [float(x) for x in trace.bregman],
        "lyapunov": [float(x) for x in trace.lyapunov],
        "steps": [[float(v) for v in row] for row in trace.steps],
    }


def convergence_trace(
    problem: DetectionProblem,
    config: SolverConfig,
    seed: int,
    reference: ReferenceSolution,
) -> ConvergenceTrace:
    """Instrumented run producing Bregman and Lyapunov traces vs a reference."""
    result = run(problem, config, seed, keep_iterates=True)
    trace = result.trace
    gammas = np.stack(trace.gammas)  # (T, B, N)
    avgs = running_average(gammas)
    num_t, num_b, _ = gammas.shape

    ref_cost = np.empty(num_b)
    ref_grad = []
    s = problem.signatures.entries
    for b in range(num_b):
        ref_cost[b] = dense_cost(s, problem.noise_power, problem.sample_covs[b],
                                 reference.gamma[b])
        ref_grad.append(dense_gradient(s, problem.noise_power, problem.sample_covs[b],
                                       reference.gamma[b]))

    per_ap = np.empty((num_t, num_b))
    lya = np.empty(num_t)
    for t in range(num_t):
        w_total = 0.0
        for b in range(num_b):
            x = avgs[t, b]
            fx = dense_cost(s, problem.noise_power, problem.sample_covs[b], x)
            per_ap[t, b] = fx - ref_cost[b] - float(
                np.dot(ref_grad[b], x - reference.gamma[b])
            )
            w_total += lyapunov(
                gammas[t, b],
                trace.banks[t][b],
                trace.step_history_eta_l[t][b],
                reference.gamma[b],
                reference.banks[b],
                config.tau,
            )
        lya[t] = w_total
    return ConvergenceTrace(
        bregman=np.abs(per_ap).mean(axis=1),
        lyapunov=lya,
        steps=np.stack(trace.steps),
        averages=avgs,
        per_ap_bregman=per_ap,
    )
