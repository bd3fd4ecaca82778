import numpy as np
import pytest

from specest.grids import FrequencyGrid
from specest.statespace import (
    SpectralFactor,
    StateSpaceModel,
    canonical_normalize,
    eval_transfer,
    factor_to_spectrum,
    inverse_factor,
    load_model,
    save_model,
)

GRID = FrequencyGrid(64)


def scalar_ma1():
    # W(z) = 1 + 0.5 z^{-1}
    return SpectralFactor(StateSpaceModel([[0.0]], [[1.0]], [[0.5]], [[1.0]]))


def test_eval_transfer_pure_delay_at_zero_frequency():
    model = StateSpaceModel([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    samples = eval_transfer(model, GRID)
    assert abs(samples[0, 0, 0] - 1.0) < 1e-14


def test_eval_transfer_constant_when_c_is_zero():
    model = StateSpaceModel(0.5 * np.eye(2), np.eye(2), np.zeros((2, 2)), np.diag([1.0, 2.0]))
    samples = eval_transfer(model, GRID)
    assert np.allclose(samples, np.diag([1.0, 2.0]))


def test_eval_transfer_against_truncated_impulse_response():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((2, 2))
    a *= 0.7 / np.abs(np.linalg.eigvals(a)).max()
    model = StateSpaceModel(a, rng.standard_normal((2, 1)), rng.standard_normal((1, 2)), [[0.3]])

    # Oracle: truncated series  D + sum_{l>=0} C A^l B e^{-j theta (l+1)}.
    z = np.exp(1j * GRID.nodes)
    series = np.broadcast_to(model.D.astype(complex), (GRID.size, 1, 1)).copy()
    term = model.B.copy()
    for l in range(10_000):
        series += (model.C @ term) * (z ** -(l + 1))[:, None, None]
        term = model.A @ term
    assert np.abs(eval_transfer(model, GRID) - series).max() <= 1e-8


def test_factor_to_spectrum_constant_factors():
    eye = SpectralFactor(StateSpaceModel(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2)))
    assert np.allclose(factor_to_spectrum(eye, GRID).samples, np.eye(2))

    low = np.array([[2.0, 0.0], [1.0, 1.5]])
    const = SpectralFactor(StateSpaceModel(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), low))
    assert np.allclose(factor_to_spectrum(const, GRID).samples, low @ low.T)


def test_factor_to_spectrum_scalar_ma1():
    phi = factor_to_spectrum(scalar_ma1(), GRID)
    want = 1.25 + np.cos(GRID.nodes)
    assert np.allclose(phi.samples[:, 0, 0], want)
    assert abs(phi.samples[0, 0, 0] - 2.25) < 1e-12
    phi.validate()


def test_inverse_factor_constant():
    w = SpectralFactor(StateSpaceModel(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), 2 * np.eye(2)))
    inv = inverse_factor(w)
    assert np.allclose(eval_transfer(inv, GRID), 0.5 * np.eye(2))


def test_inverse_factor_scalar_ma1():
    inv = inverse_factor(scalar_ma1())
    # Pole of the whitening filter sits at -0.5.
    assert np.allclose(np.linalg.eigvals(inv.A), [-0.5])
    samples = eval_transfer(inv, GRID)
    assert abs(samples[0, 0, 0] - 1.0 / 1.5) < 1e-12


def test_inverse_times_forward_is_identity():
    rng = np.random.default_rng(5)
    d = rng.standard_normal((2, 2)) + 2 * np.eye(2)
    w = SpectralFactor(StateSpaceModel(0.4 * np.eye(2), rng.standard_normal((2, 2)), 0.3 * rng.standard_normal((2, 2)), d))
    w.validate()
    fwd = eval_transfer(w.realization, GRID)
    bwd = eval_transfer(inverse_factor(w), GRID)
    assert np.abs(bwd @ fwd - np.eye(2)).max() <= 1e-10


def test_canonical_normalize_fixes_feedthrough():
    rng = np.random.default_rng(6)
    d = rng.standard_normal((3, 3))
    w = SpectralFactor(StateSpaceModel(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), d))
    canon = canonical_normalize(w)
    canon.validate(require_canonical=True)
    # Spectrum is untouched.
    assert np.abs(factor_to_spectrum(canon, GRID).samples - factor_to_spectrum(w, GRID).samples).max() <= 1e-12

    # Orthogonal feedthrough normalizes to the identity.
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    w_orth = SpectralFactor(StateSpaceModel(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), q))
    assert np.allclose(canonical_normalize(w_orth).realization.D, np.eye(3), atol=1e-12)


def test_canonical_normalize_is_idempotent():
    rng = np.random.default_rng(7)
    w = SpectralFactor(
        StateSpaceModel(0.3 * np.eye(2), rng.standard_normal((2, 2)), rng.standard_normal((2, 2)), rng.standard_normal((2, 2)) + 3 * np.eye(2))
    )
    once = canonical_normalize(w)
    twice = canonical_normalize(once)
    assert np.allclose(once.realization.D, twice.realization.D, atol=1e-12)
    assert np.allclose(once.realization.B, twice.realization.B, atol=1e-12)


def test_validate_flags_unstable_and_nonminimum_phase():
    unstable = SpectralFactor(StateSpaceModel([[1.1]], [[1.0]], [[1.0]], [[1.0]]))
    with pytest.raises(ValueError, match="unstable"):
        unstable.validate()

    # W(z) = 1 + 2 z^{-1} has its zero at -2, outside the disk.
    bad_zero = SpectralFactor(StateSpaceModel([[0.0]], [[1.0]], [[2.0]], [[1.0]]))
    with pytest.raises(ValueError, match="minimum phase"):
        bad_zero.validate()


def test_spectra_of_random_factors_are_hermitian_and_coercive():
    from specest.pipeline import random_spectral_factor

    for seed in range(8):
        rng = np.random.default_rng(seed)
        w = random_spectral_factor(2, 4, rng, 0.85, 0.8)
        spec = factor_to_spectrum(w, GRID)
        spec.validate()
        assert spec.min_eigenvalue() > 0.0


def test_model_json_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    model = StateSpaceModel(0.5 * np.eye(2), rng.standard_normal((2, 2)), rng.standard_normal((2, 2)), np.eye(2))
    path = tmp_path / "model.json"
    save_model(path, model)
    back = load_model(path)
    for field in ("A", "B", "C", "D"):
        assert np.array_equal(getattr(back, field), getattr(model, field))
