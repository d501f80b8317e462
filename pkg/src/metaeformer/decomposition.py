"""Trend/seasonal split via centered moving average with replicate padding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError


@dataclass
class DecompositionResult:
    trend: np.ndarray
    seasonal: np.ndarray


def moving_average(x, window):
    """Centered moving average over the time axis (axis 0 of an L x d array).

    The series is padded by repeating the first and last rows (window-1)/2
    times so the output length equals the input length.
    """
    x = np.asarray(x)
    if window <= 0 or window % 2 == 0:
        raise ConfigError(f"window must be odd and positive, got {window}")
    half = window // 2
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if window > 2 * x.shape[0] - 1:
        raise ConfigError(f"window {window} too large for length {x.shape[0]}")
    padded = np.pad(x, ((half, half), (0, 0)), mode="edge")
    kernel = np.ones(window) / window
    out = np.empty_like(x, dtype=np.float64)
    for j in range(x.shape[1]):
        out[:, j] = np.convolve(padded[:, j], kernel, mode="valid")
    out = out.astype(x.dtype) if np.issubdtype(x.dtype, np.floating) else out
    return out[:, 0] if squeeze else out


def decompose(x, period=24):
    """Split a series into trend (moving average) and seasonal (residual) parts.

    The averaging window is period + 1 when the period is even, so the window
    stays odd and centers symmetrically. trend + seasonal reconstructs the
    input exactly.
    """
    x = np.asarray(x)
    if x.shape[0] < 2:
        raise InputError(f"series too short to decompose: length {x.shape[0]}")
    window = period + 1 if period % 2 == 0 else period
    trend = moving_average(x, window)
    return DecompositionResult(trend=trend, seasonal=x - trend)


def decompose_batch(x, period=24):
    """Decompose a batch shaped (B, L, d); returns (trend, seasonal) arrays."""
    x = np.asarray(x)
    trend = np.empty_like(x)
    for b in range(x.shape[0]):
        trend[b] = decompose(x[b], period).trend
    return trend, x - trend
