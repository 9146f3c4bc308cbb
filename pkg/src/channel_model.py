"""FAS spatial correlation, its eigendecomposition and channel sampling.

The correlation between two ports follows the 3D rich-scattering model,
``J = j0(2π/λ · d)`` with ``d`` the physical port distance and ``j0`` the
zeroth-order spherical Bessel function (``sin x / x``). A channel draw is
``g = δ · U · sqrt(Λ) · G`` with G i.i.d. CN(0, 1).
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
from scipy import linalg

from src.constants import J0_TAYLOR_EPS, PSD_TOLERANCE
from src.errors import ConfigError, NumericalError
from src.models import ChannelSample, CorrelationModel, PortGrid


def sinc_j0(x: float) -> float:
    """Spherical Bessel j0(x) = sin(x)/x with a Taylor branch near zero."""
    if not math.isfinite(x):
        raise NumericalError(f"j0 argument must be finite, got {x}")
    if abs(x) < J0_TAYLOR_EPS:
        x2 = x * x
        return 1.0 - x2 / 6.0 + x2 * x2 / 120.0
    return math.sin(x) / x


def j0_array(x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sinc_j0`."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError("j0 argument must be finite")
    small = np.abs(x) < J0_TAYLOR_EPS
    safe = np.where(small, 1.0, x)
    x2 = x * x
    return np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)


def build_correlation(grid: PortGrid) -> CorrelationModel:
    """Port-pair correlation matrix for the grid (flat index ``y * n_x + x``)."""
    ys, xs = grid.port_coordinates()
    pitch_x, pitch_y = grid.spacing
    dx = np.abs(xs[:, None] - xs[None, :]) * pitch_x
    dy = np.abs(ys[:, None] - ys[None, :]) * pitch_y
    distance = np.sqrt(dx * dx + dy * dy)
    j_matrix = j0_array(2.0 * np.pi / grid.wavelength * distance)
    # |a-b| is symmetric already; pin the diagonal to exactly one.
    np.fill_diagonal(j_matrix, 1.0)
    logging.debug("Built %dx%d correlation matrix for grid %dx%d", grid.n_s, grid.n_s, grid.n_y, grid.n_x)
    return CorrelationModel(grid=grid, j_matrix=j_matrix)


def eigendecompose(corr: CorrelationModel) -> CorrelationModel:
    """Fill eigvecs/eigvals, sorted descending, roundoff negatives clipped to 0."""
    j_matrix = corr.j_matrix
    if j_matrix.shape[0] != j_matrix.shape[1] or not np.array_equal(j_matrix, j_matrix.T):
        raise NumericalError("correlation matrix must be square and symmetric")

    eigvals, eigvecs = linalg.eigh(j_matrix)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    worst = float(eigvals.min())
    if worst < -PSD_TOLERANCE:
        raise NumericalError(
            f"correlation matrix is not PSD: worst eigenvalue {worst:.3e} < -{PSD_TOLERANCE:g}"
        )
    clipped = int(np.count_nonzero(eigvals < 0))
    if clipped:
        logging.debug("Clipped %d roundoff-negative eigenvalues (worst %.3e)", clipped, worst)
    eigvals = np.clip(eigvals, 0.0, None)
    return dataclasses.replace(corr, eigvecs=eigvecs, eigvals=eigvals)


def correlation_for_grid(grid: PortGrid) -> CorrelationModel:
    """Build and decompose in one go; the result is shared read-only."""
    return eigendecompose(build_correlation(grid))


def complex_gaussian(rng: np.random.Generator, shape: tuple[int, ...], variance: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian with total per-entry ``variance``."""
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channel(
    corr: CorrelationModel,
    m_t: int,
    delta: float,
    rng: np.random.Generator,
    seed: int | None = None,
) -> ChannelSample:
    """Draw ``g = δ · U · sqrt(Λ) · G`` for one user (N_s × M_t)."""
    if m_t < 1:
        raise ConfigError(f"m_t must be >= 1, got {m_t}")
    if not corr.is_decomposed:
        raise ConfigError("sample_channel needs an eigendecomposed correlation model")
    g_mix = complex_gaussian(rng, (corr.grid.n_s, m_t))
    coloring = corr.eigvecs * np.sqrt(corr.eigvals)
    g_clean = delta * (coloring @ g_mix)
    return ChannelSample(g_clean=g_clean, delta=delta, seed=seed)


def noise_variance(snr_db: float, delta: float) -> float:
    """Per-entry noise variance σ² = δ² · 10^(-SNR/10)."""
    return delta * delta * 10.0 ** (-snr_db / 10.0)


def apply_awgn(sample: ChannelSample, snr_db: float, rng: np.random.Generator) -> ChannelSample:
    """Add circular AWGN at ``snr_db``; ``+inf`` means a clean copy."""
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ConfigError(f"snr_db must be a finite number or +inf, got {snr_db}")
    if snr_db == math.inf:
        return dataclasses.replace(sample, g_noisy=sample.g_clean.copy(), snr_db=snr_db)
    noise = complex_gaussian(rng, sample.g_clean.shape, noise_variance(snr_db, sample.delta))
    return dataclasses.replace(sample, g_noisy=sample.g_clean + noise, snr_db=snr_db)
