"""Per-patch Fourier reconstruction targets.

Bins ``k = 1 .. w/2 - 1`` are kept: DC and Nyquist carry no usable phase.
Amplitudes are scaled by ``2/w`` so a unit sinusoid has amplitude 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError

MAGNITUDE_FLOOR = 1e-12


def n_bins(w: int) -> int:
    return w // 2 - 1


def wrap_angle(x):
    """Map angles onto (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(y <= -np.pi, y + 2 * np.pi, y)


@dataclass(frozen=True)
class SpectralTarget:
    amplitude: np.ndarray
    phase: np.ndarray
    phase_sin: np.ndarray
    phase_cos: np.ndarray

    @property
    def F(self) -> int:
        return self.amplitude.shape[-1]


def dft_features(patch: np.ndarray) -> SpectralTarget:
    """Amplitude/phase targets along the last axis of ``patch`` (any leading shape)."""
    x = np.asarray(patch, dtype=np.float64)
    w = x.shape[-1]
    if w < 4 or w % 2:
        raise PreconditionError(f"patch length must be even and >= 4, got {w}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite value in patch")
    X = np.fft.rfft(x, axis=-1)[..., 1:w // 2]
    mag = np.abs(X)
    phase = np.where(mag < MAGNITUDE_FLOOR, 0.0, np.angle(X))
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return SpectralTarget(2.0 / w * mag, phase, np.sin(phase), np.cos(phase))


def inverse_features(amplitude: np.ndarray, phase: np.ndarray, w: int) -> np.ndarray:
    """Time-domain signal from retained bins only (zero DC and Nyquist)."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    X = np.zeros(amplitude.shape[:-1] + (w // 2 + 1,), dtype=np.complex128)
    X[..., 1:w // 2] = (w / 2.0) * amplitude * np.exp(1j * np.asarray(phase))
    return np.fft.irfft(X, n=w, axis=-1)


def phase_encode(phase):
    """Unit-circle encoding ``(sin phase, cos phase)``."""
    phase = np.asarray(phase, dtype=np.float64)
    return np.sin(phase), np.cos(phase)


def wrapped_angle_error(predicted, actual):
    """Smallest absolute angular distance in [0, pi]."""
    d = np.abs(np.mod(np.asarray(predicted, dtype=np.float64) - actual, 2 * np.pi))
    return np.minimum(d, 2 * np.pi - d)


def write_target_csv(path, amplitude: np.ndarray, phase: np.ndarray,
                     phase_sin: np.ndarray | None = None,
                     phase_cos: np.ndarray | None = None) -> int:
    """Write ``(patch, bin, amplitude, phase, sin, cos)`` rows; bins are numbered from 1.

    ``amplitude``/``phase`` are ``(n_patches, F)``. Returns the row count.
    """
    amplitude = np.asarray(amplitude).reshape(-1, np.shape(amplitude)[-1])
    phase = np.asarray(phase).reshape(amplitude.shape)
    if phase_sin is None or phase_cos is None:
        phase_sin, phase_cos = phase_encode(phase)
    phase_sin = np.asarray(phase_sin).reshape(amplitude.shape)
    phase_cos = np.asarray(phase_cos).reshape(amplitude.shape)
    n = 0
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["patch", "bin", "amplitude", "phase", "sin", "cos"])
        for i in range(amplitude.shape[0]):
            for k in range(amplitude.shape[1]):
                out.writerow([i, k + 1, repr(float(amplitude[i, k])), repr(float(phase[i, k])),
                              repr(float(phase_sin[i, k])), repr(float(phase_cos[i, k]))])
                n += 1
    return n
