"""Tests for the masked MSE, FFT amplitude loss, total loss and NMSE."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from src.errors import NumericalError, ShapeError
from src.objectives import (
    complex_planes,
    fft_amplitude_loss,
    masked_mse,
    nmse,
    nmse_db,
    sample_nmse,
    total_loss,
)


def _pair(shape=(2, 4, 4, 4), seed: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    generator = torch.Generator().manual_seed(seed)
    return (
        torch.randn(shape, generator=generator, dtype=torch.float64),
        torch.randn(shape, generator=generator, dtype=torch.float64),
    )


def _omega(batch: int, height: int, width: int, seed: int = 1) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    omega = torch.rand(batch, height, width, generator=generator) < 0.5
    omega[:, 0, 0] = True
    return omega


class TestMaskedMse:
    def test_zero_for_identical(self):
        u, _ = _pair()
        assert masked_mse(u, u.clone(), _omega(2, 4, 4)).item() == 0.0

    def test_single_position(self):
        """Difference vector (3, 4, 0, ...) at the only masked port → 25."""
        u_true = torch.zeros(1, 4, 3, 3)
        u_hat = u_true.clone()
        u_hat[0, 0, 1, 2] = 3.0
        u_hat[0, 1, 1, 2] = 4.0
        omega = torch.zeros(3, 3, dtype=torch.bool)
        omega[1, 2] = True
        assert masked_mse(u_hat, u_true, omega).item() == 25.0

    def test_matches_scalar_loop(self):
        u_hat, u_true = _pair(seed=2)
        omega = _omega(2, 4, 4, seed=3)
        expected = 0.0
        for b in range(2):
            positions = [(y, x) for y in range(4) for x in range(4) if omega[b, y, x]]
            total = 0.0
            for y, x in positions:
                total += sum((u_hat[b, c, y, x].item() - u_true[b, c, y, x].item()) ** 2 for c in range(4))
            expected += total / len(positions)
        expected /= 2
        assert masked_mse(u_hat, u_true, omega).item() == pytest.approx(expected, abs=1e-12)

    def test_observed_positions_do_not_matter(self):
        u_hat, u_true = _pair(seed=4)
        omega = _omega(2, 4, 4, seed=5)
        changed = torch.where(omega.unsqueeze(1), u_hat, u_hat + 100.0)
        assert masked_mse(changed, u_true, omega).item() == masked_mse(u_hat, u_true, omega).item()

    def test_accepts_flag_shaped_omega(self):
        u_hat, u_true = _pair(seed=6)
        omega = _omega(2, 4, 4)
        flags = (~omega).double().unsqueeze(1)
        assert torch.equal(masked_mse(u_hat, u_true, flags < 0.5), masked_mse(u_hat, u_true, omega))

    def test_empty_omega_rejected(self):
        u_hat, u_true = _pair()
        with pytest.raises(NumericalError):
            masked_mse(u_hat, u_true, torch.zeros(4, 4, dtype=torch.bool))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            masked_mse(torch.zeros(1, 4, 3, 3), torch.zeros(1, 4, 3, 2), torch.ones(3, 3, dtype=torch.bool))


class TestFftAmplitudeLoss:
    def test_zero_for_identical(self):
        u, _ = _pair()
        assert fft_amplitude_loss(u, u.clone()).item() == 0.0

    def test_global_phase_invariance(self):
        """Rotating every complex port value by one phase leaves amplitude spectra unchanged."""
        _, u_true = _pair(seed=7)
        rotated = complex_planes(u_true) * torch.exp(torch.tensor(1j * 0.7, dtype=torch.complex128))
        u_hat = torch.cat([rotated.real, rotated.imag], dim=1)
        assert fft_amplitude_loss(u_hat, u_true).item() <= 1e-10
        omega = torch.ones(4, 4, dtype=torch.bool)
        assert masked_mse(u_hat, u_true, omega).item() > 0.0

    def test_hand_computed_two_by_two(self):
        """U = [[1, 0], [0, 0]] has all four DFT amplitudes equal to 1."""
        u_true = torch.zeros(1, 2, 2, 2, dtype=torch.float64)
        u_true[0, 0, 0, 0] = 1.0
        assert fft_amplitude_loss(torch.zeros_like(u_true), u_true).item() == pytest.approx(1.0, abs=1e-15)

    def test_odd_channels_rejected(self):
        with pytest.raises(ShapeError):
            fft_amplitude_loss(torch.zeros(1, 3, 2, 2), torch.zeros(1, 3, 2, 2))

    def test_complex_pairing(self):
        u = torch.arange(16, dtype=torch.float64).reshape(1, 4, 2, 2)
        planes = complex_planes(u)
        assert planes.shape == (1, 2, 2, 2)
        assert planes[0, 1, 1, 0] == complex(u[0, 1, 1, 0].item(), u[0, 3, 1, 0].item())


class TestTotalLoss:
    def test_beta_zero_is_mse(self):
        u_hat, u_true = _pair(seed=8)
        omega = _omega(2, 4, 4)
        breakdown = total_loss(u_hat, u_true, omega, 0.0)
        assert breakdown.total.item() == breakdown.mse.item()
        assert breakdown.beta == 0.0

    def test_weighted_sum(self):
        u_hat, u_true = _pair(seed=9)
        breakdown = total_loss(u_hat, u_true, _omega(2, 4, 4), 0.02)
        assert breakdown.total.item() == pytest.approx(breakdown.mse.item() + 0.02 * breakdown.fft.item(), rel=1e-15)
        floats = breakdown.as_floats()
        assert set(floats) == {"total", "mse", "fft", "beta"}

    def test_identical_is_zero(self):
        u, _ = _pair()
        assert total_loss(u, u.clone(), _omega(2, 4, 4), 0.02).total.item() == 0.0

    def test_gradcheck(self):
        u_hat, u_true = _pair(shape=(1, 4, 4, 4), seed=10)
        omega = _omega(1, 4, 4, seed=11)
        u_hat.requires_grad_(True)
        assert torch.autograd.gradcheck(
            lambda x: total_loss(x, u_true, omega, 0.02).total, (u_hat,), eps=1e-6, atol=1e-6, rtol=1e-3
        )


class TestNmse:
    @pytest.fixture
    def channels(self) -> list[np.ndarray]:
        rng = np.random.default_rng(0)
        return [rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2)) for _ in range(3)]

    def test_perfect_prediction(self, channels):
        assert nmse(channels, channels) == 0.0
        assert nmse_db(0.0) == -100.0

    def test_zero_prediction(self, channels):
        assert nmse([np.zeros_like(g) for g in channels], channels) == 1.0
        assert nmse_db(1.0) == 0.0

    def test_doubled_prediction(self, channels):
        assert nmse([2 * g for g in channels], channels) == 1.0

    def test_matches_scalar_loop(self, channels):
        rng = np.random.default_rng(1)
        predictions = [g + 0.3 * rng.standard_normal(g.shape) for g in channels]
        error = sum(abs(p - g) ** 2 for pred, ref in zip(predictions, channels) for p, g in zip(pred.flat, ref.flat))
        power = sum(abs(g) ** 2 for ref in channels for g in ref.flat)
        assert nmse(predictions, channels) == pytest.approx(error / power, abs=1e-12)

    def test_zero_power_rejected(self):
        zeros = [np.zeros((2, 2), dtype=complex)]
        with pytest.raises(NumericalError):
            nmse(zeros, zeros)

    def test_count_mismatch_rejected(self, channels):
        with pytest.raises(ShapeError):
            nmse(channels[:2], channels)

    def test_per_sample_values(self, channels):
        predictions = [channels[0], np.zeros_like(channels[1]), 0.5 * channels[2]]
        assert sample_nmse(predictions, channels).tolist() == pytest.approx([0.0, 1.0, 0.25], abs=1e-12)
        with pytest.raises(ShapeError):
            sample_nmse(channels[:1], channels)
