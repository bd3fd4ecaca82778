import numpy as np
import pytest

from specest.filterbank import (
    CovarianceEstimate,
    FilterBank,
    build_toeplitz_bank,
    eval_bank,
    gamma_operator,
    load_bank,
    load_covariance,
    normalize_bank,
    reachability_gramian,
    sample_covariance,
    save_bank,
    save_covariance,
    simulate_state,
    v_operator,
)
from specest.grids import FrequencyGrid, constant_spectrum
from specest.pipeline import random_spectral_factor
from specest.statespace import factor_to_spectrum

GRID = FrequencyGrid(512)


def test_toeplitz_bank_shapes_and_nilpotency():
    bank = build_toeplitz_bank(2, 4)
    assert bank.n == 8 and bank.m == 2
    assert np.allclose(np.linalg.matrix_power(bank.A, 4), 0.0)
    ctrb = np.hstack([np.linalg.matrix_power(bank.A, k) @ bank.B for k in range(8)])
    assert np.linalg.matrix_rank(ctrb) == 8
    bank.validate()


def test_toeplitz_bank_smallest_instance():
    bank = build_toeplitz_bank(1, 2)
    assert np.array_equal(bank.A, [[0.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(bank.B, [[0.0], [1.0]])


@pytest.mark.parametrize("m,p", [(1, 2), (2, 3), (3, 4)])
def test_toeplitz_bank_always_reachable(m, p):
    bank = build_toeplitz_bank(m, p)
    ctrb = np.hstack([np.linalg.matrix_power(bank.A, k) @ bank.B for k in range(bank.n)])
    assert np.linalg.matrix_rank(ctrb) == bank.n


def test_simulate_state_zero_input():
    bank = build_toeplitz_bank(2, 3)
    x = simulate_state(bank, np.zeros((10, 2)))
    assert np.array_equal(x, np.zeros((10, 6)))


def test_simulate_state_hand_recursion():
    bank = build_toeplitz_bank(1, 2)
    x = simulate_state(bank, np.array([[1.0], [0.0], [0.0]]))
    assert np.array_equal(x, [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])


def test_simulate_state_is_a_shift_register():
    bank = build_toeplitz_bank(2, 4)
    rng = np.random.default_rng(0)
    y = rng.standard_normal((40, 2))
    x = simulate_state(bank, y)
    for k in range(4, 40):
        stacked = np.concatenate([y[k - 4], y[k - 3], y[k - 2], y[k - 1]])
        assert np.array_equal(x[k], stacked)


def test_sample_covariance_basics():
    assert np.array_equal(sample_covariance(np.zeros((5, 2))).sigma, np.zeros((2, 2)))
    single = sample_covariance(np.array([[1.0, 0.0]]))
    assert np.array_equal(single.sigma, [[1.0, 0.0], [0.0, 0.0]])


def test_sample_covariance_burn_in_drops_leading_states():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((30, 3))
    with_burn = sample_covariance(x, burn_in=5)
    assert np.allclose(with_burn.sigma, sample_covariance(x[5:]).sigma)
    with pytest.raises(ValueError, match="empty"):
        sample_covariance(x, burn_in=30)


def test_sample_covariance_of_white_noise_converges_to_identity():
    bank = build_toeplitz_bank(1, 2)
    rng = np.random.default_rng(1)
    errs = {}
    for n in (1_000, 40_000):
        y = rng.standard_normal((n, 1))
        est = sample_covariance(simulate_state(bank, y), bank)
        errs[n] = np.abs(est.sigma - np.eye(2)).max()
    assert errs[40_000] < errs[1_000]
    assert errs[40_000] < 0.05
    est = sample_covariance(simulate_state(bank, rng.standard_normal((2_000, 1))))
    assert est.min_eigenvalue() >= -1e-12


def test_v_operator_projector_and_hand_value():
    bank = build_toeplitz_bank(1, 2)
    proj = bank.projector_b_perp()
    assert np.abs(proj @ bank.B).max() == 0.0
    assert np.allclose(proj, np.diag([1.0, 0.0]))
    # V(I) = P (I - diag(1, 0)) P = 0 for the two-row scalar bank.
    assert np.abs(v_operator(bank, np.eye(2))).max() == 0.0


def test_v_operator_is_linear_and_kills_lyapunov_solutions():
    bank = build_toeplitz_bank(2, 3)
    rng = np.random.default_rng(2)
    q1 = rng.standard_normal((6, 6))
    q1 = q1 + q1.T
    q2 = rng.standard_normal((6, 6))
    q2 = q2 + q2.T
    lhs = v_operator(bank, 2.0 * q1 - 3.0 * q2)
    rhs = 2.0 * v_operator(bank, q1) - 3.0 * v_operator(bank, q2)
    assert np.abs(lhs - rhs).max() <= 1e-12

    gram = reachability_gramian(bank)
    assert np.abs(v_operator(bank, gram.sigma)).max() <= 1e-12


def test_reachability_gramian_values():
    assert np.allclose(reachability_gramian(build_toeplitz_bank(2, 4)).sigma, np.eye(8))

    bank = FilterBank(np.zeros((2, 2)), np.array([[1.0], [0.5]]))
    want = bank.B @ bank.B.T
    assert np.allclose(reachability_gramian(bank).sigma, want)


def test_gramian_matches_quadrature():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 3))
    a *= 0.8 / np.abs(np.linalg.eigvals(a)).max()
    bank = FilterBank(a, rng.standard_normal((3, 1)))
    gram = reachability_gramian(bank)
    eye_spec = constant_spectrum(np.eye(1), GRID, coercive=True)
    assert np.abs(gamma_operator(bank, eye_spec) - gram.sigma).max() <= 1e-8


def test_gamma_operator_basics():
    bank = build_toeplitz_bank(2, 4)
    eye_spec = constant_spectrum(np.eye(2), GRID, coercive=True)
    assert np.abs(gamma_operator(bank, eye_spec) - np.eye(8)).max() <= 1e-12
    zero_spec = constant_spectrum(np.zeros((2, 2)), GRID)
    assert np.abs(gamma_operator(bank, zero_spec)).max() == 0.0


def test_feasible_covariances_lie_in_ker_v():
    bank = build_toeplitz_bank(2, 4)
    rng = np.random.default_rng(4)
    for seed in range(3):
        w = random_spectral_factor(2, 3, np.random.default_rng(seed), 0.7, 0.6)
        phi = factor_to_spectrum(w, GRID)
        sigma = gamma_operator(bank, phi)
        assert np.abs(v_operator(bank, sigma)).max() <= 1e-8


def test_normalize_bank():
    bank = build_toeplitz_bank(1, 2)
    same = normalize_bank(bank, np.eye(2))
    assert np.allclose(eval_bank(same, GRID), eval_bank(bank, GRID))

    half = normalize_bank(bank, 4.0 * np.eye(2))
    assert np.allclose(eval_bank(half, GRID), 0.5 * eval_bank(bank, GRID))


def test_normalize_bank_congruence_identity():
    bank = build_toeplitz_bank(2, 3)
    rng = np.random.default_rng(5)
    w = random_spectral_factor(2, 2, rng, 0.7, 0.6)
    phi = factor_to_spectrum(w, GRID)
    sigma = gamma_operator(bank, phi)  # feasible and PD by construction
    normalized = normalize_bank(bank, sigma)
    assert np.abs(gamma_operator(normalized, phi) - np.eye(6)).max() <= 1e-10


def test_bank_and_covariance_files_roundtrip(tmp_path):
    bank = build_toeplitz_bank(2, 3)
    save_bank(tmp_path / "bank.json", bank)
    back = load_bank(tmp_path / "bank.json")
    assert np.array_equal(back.A, bank.A)
    assert np.array_equal(back.B, bank.B)

    est = CovarianceEstimate(np.array([[2.0, 0.5], [0.5, 1.0]]))
    save_covariance(tmp_path / "sigma.json", est)
    assert np.array_equal(load_covariance(tmp_path / "sigma.json").sigma, est.sigma)


def test_bank_validate_rejects_bad_pairs():
    with pytest.raises(ValueError, match="unstable"):
        FilterBank(np.eye(2), np.ones((2, 1))).validate()
    with pytest.raises(ValueError, match="reachable"):
        FilterBank(np.diag([0.5, 0.5]), np.array([[1.0], [0.0]])).validate()
    with pytest.warns(UserWarning, match="n=1 <= m=1"):
        FilterBank(np.zeros((1, 1)), np.ones((1, 1))).validate()
