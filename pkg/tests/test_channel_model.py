"""Tests for the spatial correlation model, channel sampling and AWGN."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src.channel_model import (
    apply_awgn,
    build_correlation,
    correlation_for_grid,
    eigendecompose,
    j0_array,
    sample_channel,
    sinc_j0,
)
from src.constants import APERTURE_PRESETS_CM
from src.errors import ConfigError, NumericalError
from src.models import ChannelSample, CorrelationModel, PortGrid


def test_sinc_j0_values():
    """j0 is 1 at zero, vanishes at pi and uses the Taylor branch near zero."""
    assert sinc_j0(0.0) == 1.0
    assert abs(sinc_j0(math.pi)) < 1e-15
    x = 5e-5
    assert sinc_j0(x) == pytest.approx(1.0 - x * x / 6.0, abs=1e-15)
    assert sinc_j0(2.0) == pytest.approx(math.sin(2.0) / 2.0, rel=1e-15)


def test_sinc_j0_rejects_non_finite():
    with pytest.raises(NumericalError):
        sinc_j0(math.inf)
    with pytest.raises(NumericalError):
        j0_array(np.array([0.0, math.nan]))


def test_j0_array_matches_scalar():
    xs = np.array([0.0, 1e-6, 0.3, 1.0, 7.5, -2.0])
    expected = [sinc_j0(float(x)) for x in xs]
    np.testing.assert_allclose(j0_array(xs), expected, rtol=0, atol=1e-15)


def test_wavelength_from_carrier():
    grid = PortGrid.from_carrier(32, 16, 2.0, 4.0, 3.4)
    assert grid.wavelength == pytest.approx(0.088174, abs=1e-6)
    assert grid.n_s == 512


def test_invalid_grid_rejected():
    with pytest.raises(ConfigError):
        PortGrid.from_carrier(32, 1, 2.0, 4.0, 3.4)
    with pytest.raises(ConfigError):
        PortGrid.from_carrier(32, 16, 0.0, 4.0, 3.4)


@pytest.mark.parametrize("preset", sorted(APERTURE_PRESETS_CM))
def test_correlation_invariants_for_both_fas_sizes(preset):
    """Symmetric, unit diagonal, bounded, trace N_s and exact eigen-reconstruction."""
    w_x, w_y = APERTURE_PRESETS_CM[preset]
    corr = correlation_for_grid(PortGrid.from_carrier(32, 16, w_x, w_y, 3.4))
    j_matrix = corr.j_matrix

    assert np.array_equal(j_matrix, j_matrix.T)
    assert np.all(np.diag(j_matrix) == 1.0)
    assert np.all(np.abs(j_matrix) <= 1.0)
    assert np.trace(j_matrix) == pytest.approx(512.0, abs=1e-3)
    assert corr.reconstruction_error() <= 1e-8
    assert np.all(corr.eigvals >= 0.0)
    assert np.all(np.diff(corr.eigvals) <= 0.0)


def test_correlation_uses_flat_row_major_ports():
    grid = PortGrid.from_carrier(3, 4, 2.0, 4.0, 3.4)
    corr = build_correlation(grid)
    pitch_x, pitch_y = grid.spacing
    k = 2.0 * math.pi / grid.wavelength
    assert corr.j_matrix[grid.port_index(0, 0), grid.port_index(0, 1)] == pytest.approx(sinc_j0(k * pitch_x))
    assert corr.j_matrix[grid.port_index(0, 0), grid.port_index(1, 0)] == pytest.approx(sinc_j0(k * pitch_y))
    diagonal = k * math.hypot(pitch_x, pitch_y)
    assert corr.j_matrix[grid.port_index(1, 2), grid.port_index(2, 3)] == pytest.approx(sinc_j0(diagonal))


def test_eigendecompose_rejects_indefinite_matrix():
    """A matrix with a clearly negative eigenvalue names it in the error."""
    grid = PortGrid.from_carrier(2, 2, 2.0, 4.0, 3.4)
    bad = np.array([[1.0, 2.0, 0, 0], [2.0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
    with pytest.raises(NumericalError, match="worst eigenvalue -1"):
        eigendecompose(CorrelationModel(grid=grid, j_matrix=bad))


def test_sample_channel_requires_decomposition():
    corr = build_correlation(PortGrid.from_carrier(2, 2, 2.0, 4.0, 3.4))
    with pytest.raises(ConfigError):
        sample_channel(corr, 2, 1.0, np.random.default_rng(0))


def test_sample_channel_is_deterministic():
    corr = correlation_for_grid(PortGrid.from_carrier(4, 3, 2.0, 4.0, 3.4))
    first = sample_channel(corr, 3, 1.0, np.random.default_rng(11))
    second = sample_channel(corr, 3, 1.0, np.random.default_rng(11))
    assert first.g_clean.shape == (12, 3)
    assert np.array_equal(first.g_clean, second.g_clean)


def test_empirical_port_covariance_matches_correlation():
    """E[g g^H] = δ² J; each BS antenna column is an independent draw."""
    corr = correlation_for_grid(PortGrid.from_carrier(4, 3, 8.0, 16.0, 3.4))
    draws = 40_000
    sample = sample_channel(corr, draws, 1.0, np.random.default_rng(3))
    g = sample.g_clean
    empirical = (g @ g.conj().T) / draws
    assert np.max(np.abs(empirical - corr.j_matrix)) < 0.05


@pytest.mark.parametrize("snr_db", [0.0, 10.0])
def test_awgn_variance(snr_db):
    clean = ChannelSample(g_clean=np.zeros((1000, 1000), dtype=np.complex128), delta=1.0)
    noisy = apply_awgn(clean, snr_db, np.random.default_rng(5))
    variance = float(np.mean(np.abs(noisy.g_noisy) ** 2))
    assert variance == pytest.approx(10.0 ** (-snr_db / 10.0), rel=0.01)
    assert noisy.snr_db == snr_db


def test_awgn_scales_with_delta():
    clean = ChannelSample(g_clean=np.zeros((500, 400), dtype=np.complex128), delta=2.0)
    noisy = apply_awgn(clean, 0.0, np.random.default_rng(6))
    assert float(np.mean(np.abs(noisy.g_noisy) ** 2)) == pytest.approx(4.0, rel=0.02)


def test_awgn_infinite_snr_is_clean_copy():
    g = np.random.default_rng(0).standard_normal((6, 2)) + 0j
    sample = apply_awgn(ChannelSample(g_clean=g), math.inf, np.random.default_rng(1))
    assert np.array_equal(sample.g_noisy, g)
    assert sample.g_noisy is not g


def test_awgn_rejects_nan_snr():
    with pytest.raises(ConfigError):
        apply_awgn(ChannelSample(g_clean=np.zeros((2, 2), dtype=complex)), math.nan, np.random.default_rng(0))


def test_adjacent_port_correlation_on_small_aperture():
    """16 ports over 2 cm at 3.4 GHz: adjacent ports are almost fully correlated."""
    assert sinc_j0(0.09502) == pytest.approx(0.99850, abs=1e-5)
    grid = PortGrid.from_carrier(32, 16, 2.0, 4.0, 3.4)
    corr = build_correlation(grid)
    assert corr.j_matrix[grid.port_index(0, 0), grid.port_index(0, 1)] == pytest.approx(0.99850, abs=1e-5)


def test_half_wavelength_ports_are_uncorrelated():
    wavelength = 0.088174
    grid = PortGrid(n_x=2, n_y=2, w_x=wavelength / 2, w_y=wavelength, wavelength=wavelength)
    corr = build_correlation(grid)
    assert abs(corr.j_matrix[grid.port_index(0, 0), grid.port_index(0, 1)]) < 1e-12
    assert abs(corr.j_matrix[grid.port_index(0, 0), grid.port_index(1, 0)]) < 1e-12


def test_two_port_eigenvalues():
    grid = PortGrid.from_carrier(2, 2, 2.0, 4.0, 3.4)
    corr = eigendecompose(CorrelationModel(grid=grid, j_matrix=np.array([[1.0, 0.5], [0.5, 1.0]])))
    assert corr.eigvals.tolist() == pytest.approx([1.5, 0.5], abs=1e-12)


def test_zero_spectrum_gives_zero_channel():
    grid = PortGrid.from_carrier(2, 2, 2.0, 4.0, 3.4)
    corr = CorrelationModel(grid=grid, j_matrix=np.eye(4), eigvecs=np.eye(4), eigvals=np.zeros(4))
    sample = sample_channel(corr, 3, 1.0, np.random.default_rng(0))
    assert np.all(sample.g_clean == 0)
