import numpy as np
import pytest

from cadsim.covariance import (
    CovarianceModel,
    build_covariance,
    coordinate_gradient,
    dense_cost,
    downdate,
    full_gradient,
    ml_cost,
    probabilistic_gradient,
    rank1_update,
)
from cadsim.errors import ConfigurationError, DomainError
from cadsim.network import generate_signatures
from cadsim.seeding import stream

FD_STEP = 1e-6


def random_instance(ell, n, seed, gamma_hi=1.0):
    rng = stream(seed, "inst")
    sig = generate_signatures(ell, n, rng)
    gamma = rng.uniform(0.05, gamma_hi, n)
    truth = rng.uniform(0.05, gamma_hi, n)
    cov = build_covariance(sig.entries, 1.0, truth)
    # perturb so the gradient is not near a stationary point
    noise = rng.standard_normal((ell, ell)) + 1j * rng.standard_normal((ell, ell))
    cov = cov + 0.05 * (noise @ noise.conj().T) / ell
    return sig, gamma, cov


def fd_gradient(sig, cov, gamma, noise_power=1.0):
    grad = np.empty_like(gamma)
    for i in range(len(gamma)):
        up, down = gamma.copy(), gamma.copy()
        up[i] += FD_STEP
        down[i] -= FD_STEP
        grad[i] = (
            dense_cost(sig.entries, noise_power, cov, up)
            - dense_cost(sig.entries, noise_power, cov, down)
        ) / (2 * FD_STEP)
    return grad


def test_ml_cost_zero_gamma_closed_form():
    sig = generate_signatures(7, 5, stream(1, "s"))
    cov = np.diag(np.arange(1.0, 8.0)).astype(complex)
    model = CovarianceModel(sig, 2.0)
    got = ml_cost(np.zeros(5), model, cov)
    expected = 7 * np.log(2.0) + np.trace(cov).real / 2.0
    assert abs(got - expected) < 1e-10


def test_ml_cost_scalar_case():
    sig_entries = np.array([[1.0 + 0j]])
    model = CovarianceModel(
        generate_signatures(1, 1, stream(2, "s")), 0.3
    )
    model.signatures.entries[0, 0] = 1.0  # force S = [1]
    model.refactor()
    a, c = 0.8, 1.7
    got = ml_cost(np.array([a]), model, np.array([[c + 0j]]))
    assert abs(got - (np.log(a + 0.3) + c / (a + 0.3))) < 1e-12


def test_ml_cost_matches_dense_oracle():
    sig, gamma, cov = random_instance(6, 10, 3)
    model = CovarianceModel(sig, 1.0)
    got = ml_cost(gamma, model, cov)
    sigma = build_covariance(sig.entries, 1.0, gamma)
    sign, logdet = np.linalg.slogdet(sigma)
    oracle = logdet + np.trace(np.linalg.solve(sigma, cov)).real
    assert sign > 0
    assert abs(got - oracle) < 1e-10 * max(1.0, abs(oracle))


def test_ml_cost_permutation_invariance():
    sig, gamma, cov = random_instance(6, 9, 4)
    model = CovarianceModel(sig, 1.0)
    perm = stream(5, "perm").permutation(9)
    sig2 = generate_signatures(6, 9, stream(6, "s"))
    sig2.entries[:] = sig.entries[:, perm]
    model2 = CovarianceModel(sig2, 1.0)
    assert ml_cost(gamma, model, cov) == pytest.approx(
        ml_cost(gamma[perm], model2, cov), abs=1e-12
    )


def test_ml_cost_rejects_negative_gamma():
    sig, gamma, cov = random_instance(4, 6, 7)
    model = CovarianceModel(sig, 1.0)
    gamma[0] = -0.1
    with pytest.raises(DomainError):
        ml_cost(gamma, model, cov)


@pytest.mark.parametrize("ell", [4, 8, 16])
def test_downdate_matches_dense_inverse(ell):
    for k in range(25):
        rng = stream(100 + ell, "dd", k)
        sig = generate_signatures(ell, ell + 3, rng)
        gamma = rng.uniform(0.0, 1.0, ell + 3)
        model = CovarianceModel(sig, 1.0, gamma=gamma)
        n = int(rng.integers(0, ell + 3))
        fast = downdate(model, n, gamma[n])
        s = sig.entries[:, n]
        dense = np.linalg.inv(model.sigma - gamma[n] * np.outer(s, s.conj()))
        assert np.linalg.norm(fast - dense) / np.linalg.norm(dense) < 1e-10


def test_downdate_zero_gamma_is_identity():
    sig, gamma, _ = random_instance(8, 8, 9)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    assert np.array_equal(downdate(model, 0, 0.0), model.sigma_inv)


@pytest.mark.parametrize("ell", [4, 8, 16])
def test_determinant_identity(ell):
    for k in range(25):
        rng = stream(200 + ell, "det", k)
        sig = generate_signatures(ell, ell + 2, rng)
        gamma = rng.uniform(0.0, 1.0, ell + 2)
        model = CovarianceModel(sig, 1.0, gamma=gamma)
        n = int(rng.integers(0, ell + 2))
        s = sig.entries[:, n]
        down_inv = downdate(model, n, gamma[n])
        sigma_down = model.sigma - gamma[n] * np.outer(s, s.conj())
        _, logdet_down = np.linalg.slogdet(sigma_down)
        _, logdet_full = np.linalg.slogdet(model.sigma)
        q = np.real(np.vdot(s, down_inv @ s))
        lhs = np.exp(logdet_full - logdet_down)
        rhs = 1.0 + gamma[n] * q
        assert abs(lhs - rhs) / abs(rhs) < 1e-10


def test_coordinate_gradient_matches_finite_difference():
    sig, gamma, cov = random_instance(6, 10, 11)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    fd = fd_gradient(sig, cov, gamma)
    for n in range(10):
        got = coordinate_gradient(model, cov, n, gamma[n])
        assert abs(got - fd[n]) / max(abs(fd[n]), 1e-8) < 1e-5


def test_coordinate_gradient_stationary_at_noise_only_fit():
    sig = generate_signatures(5, 4, stream(12, "s"))
    model = CovarianceModel(sig, 1.3)
    cov = 1.3 * np.eye(5, dtype=complex)
    for n in range(4):
        assert abs(coordinate_gradient(model, cov, n, 0.0)) < 1e-10


def test_full_gradient_matches_finite_difference():
    for k in range(5):
        sig, gamma, cov = random_instance(6, 12, 20 + k)
        model = CovarianceModel(sig, 1.0, gamma=gamma)
        grad = full_gradient(model, cov)
        fd = fd_gradient(sig, cov, gamma)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() < 1e-5


def test_full_gradient_equals_stacked_coordinate_gradients():
    sig, gamma, cov = random_instance(8, 11, 30)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    grad = full_gradient(model, cov)
    stacked = np.array(
        [coordinate_gradient(model, cov, n, gamma[n]) for n in range(11)]
    )
    assert np.allclose(grad, stacked, atol=1e-9)


def test_full_gradient_single_coordinate_reduces():
    sig, gamma, cov = random_instance(5, 1, 31)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    assert full_gradient(model, cov)[0] == pytest.approx(
        coordinate_gradient(model, cov, 0, gamma[0]), abs=1e-10
    )


def test_full_gradient_permutation_equivariance():
    sig, gamma, cov = random_instance(6, 9, 32)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    grad = full_gradient(model, cov)
    perm = stream(33, "perm").permutation(9)
    sig2 = generate_signatures(6, 9, stream(34, "s"))
    sig2.entries[:] = sig.entries[:, perm]
    model2 = CovarianceModel(sig2, 1.0, gamma=gamma[perm])
    grad2 = full_gradient(model2, cov)
    assert np.allclose(grad2, grad[perm], atol=1e-10)


def test_probabilistic_gradient_degenerate_and_rate():
    sig, gamma, cov = random_instance(5, 6, 35)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    rng = stream(36, "p")
    always = probabilistic_gradient(model, cov, gamma, 1.0, rng)
    assert always.was_computed
    assert np.allclose(always.vector, full_gradient(model, cov))

    computed = 0
    draws = 10_000
    for _ in range(draws):
        sample = probabilistic_gradient(model, cov, gamma, 0.5, rng)
        if sample.was_computed:
            computed += 1
        else:
            assert np.all(sample.vector == 0.0)
    assert abs(computed / draws - 0.5) < 0.02

    with pytest.raises(ConfigurationError):
        probabilistic_gradient(model, cov, gamma, 0.0, rng)
    with pytest.raises(ConfigurationError):
        probabilistic_gradient(model, cov, gamma, 1.2, rng)


def test_rank1_update_noop_is_bit_identical():
    sig, gamma, _ = random_instance(6, 7, 37)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    before_inv = model.sigma_inv.copy()
    before_logdet = model.logdet
    rank1_update(model, 3, gamma[3], gamma[3])
    assert np.array_equal(model.sigma_inv, before_inv)
    assert model.logdet == before_logdet


def test_rank1_update_sequence_reconstructs_dense():
    rng = stream(38, "seq")
    sig = generate_signatures(10, 15, rng)
    target = rng.uniform(0.1, 1.0, 15)
    model = CovarianceModel(sig, 1.0)
    for n in range(15):
        rank1_update(model, n, 0.0, target[n])
    dense = build_covariance(sig.entries, 1.0, target)
    assert np.linalg.norm(model.sigma - dense) / np.linalg.norm(dense) < 1e-8
    dense_inv = np.linalg.inv(dense)
    assert np.linalg.norm(model.sigma_inv - dense_inv) / np.linalg.norm(dense_inv) < 1e-8


def test_rank1_update_inverse_drift_stays_small():
    rng = stream(39, "drift")
    sig = generate_signatures(8, 12, rng)
    model = CovarianceModel(sig, 1.0)
    gamma = np.zeros(12)
    for _ in range(1000):
        n = int(rng.integers(0, 12))
        new = float(rng.uniform(0.0, 1.0))
        rank1_update(model, n, gamma[n], new)
        gamma[n] = new
    assert model.inverse_drift() < 1e-8
    # logdet tracked through updates matches a dense factorization
    _, logdet = np.linalg.slogdet(model.sigma)
    assert abs(model.logdet - logdet) < 1e-8


def test_rank1_update_validates_inputs():
    sig, gamma, _ = random_instance(5, 5, 40)
    model = CovarianceModel(sig, 1.0, gamma=gamma)
    with pytest.raises(DomainError):
        rank1_update(model, 0, gamma[0], -0.5)
    with pytest.raises(DomainError):
        rank1_update(model, 0, gamma[0] + 1.0, 0.5)


def test_model_cost_tracks_dense_cost():
    rng = stream(41, "cost")
    sig = generate_signatures(7, 9, rng)
    cov = build_covariance(sig.entries, 1.0, rng.uniform(0.1, 1.0, 9))
    model = CovarianceModel(sig, 1.0)
    gamma = np.zeros(9)
    for _ in range(300):
        n = int(rng.integers(0, 9))
        new = float(rng.uniform(0.0, 1.0))
        rank1_update(model, n, gamma[n], new)
        gamma[n] = new
    assert model.cost(cov) == pytest.approx(dense_cost(sig.entries, 1.0, cov, gamma), abs=1e-8)
