"""Harmonic distortion and tracking-error statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NoFundamentalError(ValueError):
    pass


@dataclass(frozen=True)
class SignalWindow:
    samples: np.ndarray
    sample_rate: float
    fundamental: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if not (self.sample_rate > 0 and self.fundamental > 0):
            raise ValueError("sample_rate and fundamental must be positive")
        if len(self.samples) * self.fundamental / self.sample_rate < 2.0 - 1e-9:
            raise ValueError("window must span at least two fundamental periods")


def harmonic_amplitudes(win, n_harmonics):
    """
    Complex Fourier coefficients at k * fundamental, k = 1..n_harmonics.

    The window is first trimmed at the tail to a whole number of
    fundamental periods; each coefficient is a direct projection
    (2/N) * sum x[n] exp(-j 2 pi k f0 n / fs).
    """
    fs, f0 = win.sample_rate, win.fundamental
    if fs <= 2.0 * n_harmonics * f0:
        raise ValueError(f"sample rate {fs} Hz too low for {n_harmonics} harmonics of {f0} Hz")
    x = win.samples
    periods = math.floor(len(x) * f0 / fs + 1e-9)
    n = min(len(x), int(round(periods * fs / f0)))
    x = x[:n]
    phase = 2.0 * math.pi * f0 / fs * np.arange(n)
    ks = np.arange(1, n_harmonics + 1)
    basis = np.exp(-1j * np.outer(ks, phase))
    return (2.0 / n) * (basis @ x)


def thd(win, n_harmonics=40):
    """
    Total harmonic distortion sqrt(sum_{k>=2} |A_k|^2) / |A_1| as a ratio.

    Raises
    ------
    NoFundamentalError
        If |A_1| is below 1e-9 times the signal RMS.
    """
    amps = np.abs(harmonic_amplitudes(win, n_harmonics))
    rms = math.sqrt(float(np.mean(win.samples ** 2)))
    if amps[0] <= 1e-9 * rms or amps[0] == 0.0:
        raise NoFundamentalError("fundamental component is negligible")
    return float(math.sqrt(float(np.sum(amps[1:] ** 2))) / amps[0])


@dataclass(frozen=True)
class TrackingMetrics:
    rmse: float
    peak_to_peak_error: float
    rms_measured: float


def tracking_metrics(reference, measured):
    ref = np.asarray(reference, dtype=float)
    meas = np.asarray(measured, dtype=float)
    if ref.shape != meas.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {meas.shape}")
    if ref.size < 1:
        raise ValueError("sequences must not be empty")
    err = ref - meas
    return TrackingMetrics(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        peak_to_peak_error=float(np.max(err) - np.min(err)),
        rms_measured=float(np.sqrt(np.mean(meas ** 2))),
    )
