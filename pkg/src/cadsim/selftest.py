"""Built-in identity/oracle suite behind the `selftest` CLI subcommand.

A fast subset of the oracle checks from the test suite: enough to confirm a
build is numerically sane without requiring pytest.
"""

from __future__ import annotations

import numpy as np

from .covariance import (
    CovarianceModel,
    coordinate_gradient,
    dense_cost,
    downdate,
    full_gradient,
    ml_cost,
)
from .network import generate_signatures
from .regularizers import similarity_prox, similarity_prox_objective
from .seeding import stream
from .unsourced import TreeCodeConfig, tree_decode, tree_encode


def _check_sherman_morrison(rng) -> bool:
    for _ in range(20):
        ell = int(rng.integers(4, 12))
        n = int(rng.integers(4, 12))
        sig = generate_signatures(ell, n, rng)
        gamma = rng.uniform(0.0, 1.0, n)
        model = CovarianceModel(sig, 1.0, gamma=gamma)
        idx = int(rng.integers(0, n))
        fast = downdate(model, idx, gamma[idx])
        dense_mat = model.sigma - gamma[idx] * np.outer(
            sig.entries[:, idx], sig.entries[:, idx].conj()
        )
        slow = np.linalg.inv(dense_mat)
        if np.linalg.norm(fast - slow) / np.linalg.norm(slow) > 1e-10:
            return False
    return True


def _check_gradient(rng) -> bool:
    ell, n = 6, 10
    sig = generate_signatures(ell, n, rng)
    gamma = rng.uniform(0.1, 1.0, n)
    truth = rng.uniform(0.1, 1.0, n)
    cov = (sig.entries * truth[None, :]) @ sig.entries.conj().T + np.eye(ell)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    grad = full_gradient(model, cov)
    h = 1e-6
    for i in range(n):
        up, down = gamma.copy(), gamma.copy()
        up[i] += h
        down[i] -= h
        fd = (dense_cost(sig.entries, 1.0, cov, up) - dense_cost(sig.entries, 1.0, cov, down)) / (2 * h)
        if abs(fd - grad[i]) / max(abs(grad[i]), 1e-8) > 1e-5:
            return False
        coord = coordinate_gradient(model, cov, i, gamma[i])
        if abs(coord - grad[i]) > 1e-8 * max(1.0, abs(grad[i])):
            return False
    return True


def _check_prox(rng) -> bool:
    for _ in range(100):
        v = float(rng.uniform(-1.0, 2.0))
        ref = float(rng.uniform(0.0, 1.5))
        lam = float(rng.uniform(0.0, 0.5))
        out = float(similarity_prox(np.array([v]), np.array([ref]), lam)[0])
        grid = np.arange(0.0, max(v, ref, 0.0) + 3.0 * lam + 1.0, 1e-4)
        best = float(np.min(similarity_prox_objective(grid, v, ref, lam)))
        mine = float(similarity_prox_objective(np.array([out]), v, ref, lam)[0])
        if mine > best + 1e-7:
            return False
    return True


def _check_codec(rng) -> bool:
    config = TreeCodeConfig.from_parity_width(8, 4, 4, parity_seed=7)
    for _ in range(50):
        message = int(rng.integers(0, 1 << config.total_bits))
        slots = tree_encode(message, config)
        decoded = tree_decode([[s] for s in slots], config)
        if decoded.messages != {message}:
            return False
    return True


def _check_cost_identity(rng) -> bool:
    sig = generate_signatures(5, 8, rng)
    cov = np.eye(5) * 2.0
    model = CovarianceModel(sig, 1.0)
    zero_cost = ml_cost(np.zeros(8), model, cov)
    expected = 5 * np.log(1.0) + np.trace(cov).real
    return abs(zero_cost - expected) < 1e-10


CHECKS = (
    ("sherman-morrison downdate vs dense inverse", _check_sherman_morrison),
    ("gradient vs finite differences", _check_gradient),
    ("similarity prox vs grid oracle", _check_prox),
    ("tree code roundtrip", _check_codec),
    ("ml cost closed form at zero", _check_cost_identity),
)


def run_selftest(quiet: bool = False) -> bool:
    all_ok = True
    for name, check in CHECKS:
        rng = stream(2024, "selftest", name)
        ok = check(rng)
        all_ok &= ok
        if not quiet:
            print(f"[{'ok' if ok else 'FAIL'}] {name}")
    if not quiet:
        print("selftest", "passed" if all_ok else "FAILED")
    return all_ok
