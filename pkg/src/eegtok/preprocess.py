"""Signal conditioning: zero-phase bandpass, resampling, CAR and per-patch z-scoring."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import DataError, PreconditionError
from .recording import Recording

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterSpec:
    low_cut: float = 0.5
    high_cut: float = 44.5
    order: int = 4
    zero_phase: bool = True

    def validate(self, sample_rate: float) -> None:
        if self.order < 1:
            raise PreconditionError(f"filter order must be positive, got {self.order}")
        nyquist = sample_rate / 2
        if not 0 < self.low_cut < self.high_cut:
            raise PreconditionError(f"need 0 < low_cut < high_cut, got {self.low_cut}, {self.high_cut}")
        if self.high_cut >= nyquist:
            raise PreconditionError(f"high_cut {self.high_cut} Hz >= Nyquist {nyquist} Hz")


def _sos(spec: FilterSpec, fs: float) -> np.ndarray:
    return signal.butter(spec.order, [spec.low_cut, spec.high_cut], btype="bandpass",
                         output="sos", fs=fs)


def bandpass(rec: Recording, spec: FilterSpec = FilterSpec()) -> Recording:
    """Butterworth biquad cascade, run forward-backward when ``spec.zero_phase``."""
    spec.validate(rec.sample_rate)
    sos = _sos(spec, rec.sample_rate)
    x = rec.data.astype(np.float64)
    if spec.zero_phase:
        min_pad = 3 * (2 * len(sos) + 1)
        if rec.n_samples <= min_pad:
            raise PreconditionError(
                f"{rec.n_samples} samples too short for forward-backward padding ({min_pad})"
            )
        # even extension over one low-cut period keeps edge transients below the stopband floor
        padlen = max(min_pad, min(rec.n_samples - 1, int(rec.sample_rate / spec.low_cut)))
        y = signal.sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=padlen)
    else:
        y = signal.sosfilt(sos, x, axis=-1)
    return Recording(list(rec.electrode_names), rec.sample_rate, list(rec.trials), y)


def resample(rec: Recording, target: float = 200.0) -> Recording:
    """Polyphase resampling to ``target`` Hz; output length ``round(T * target / rate)``."""
    if not target > 0:
        raise PreconditionError(f"target rate must be positive, got {target}")
    if rec.sample_rate == target:
        return rec
    ratio = Fraction(target / rec.sample_rate).limit_denominator(10_000)
    T = rec.n_samples
    T_new = int(round(T * target / rec.sample_rate))
    y = signal.resample_poly(rec.data.astype(np.float64), ratio.numerator, ratio.denominator,
                             axis=-1)
    if y.shape[1] >= T_new:
        y = y[:, :T_new]
    else:
        y = np.pad(y, ((0, 0), (0, T_new - y.shape[1])), mode="edge")
    scale = target / rec.sample_rate
    trials = []
    for a, b in rec.trials:
        a2, b2 = int(round(a * scale)), min(int(round(b * scale)), T_new)
        if b2 > a2:
            trials.append((a2, b2))
    return Recording(list(rec.electrode_names), target, trials, y)


def car(x: np.ndarray) -> np.ndarray:
    """Common average reference across axis -2 (channels) of a ``(..., C, w)`` array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError(f"expected (..., C, w), got shape {x.shape}")
    if x.shape[-2] == 1:
        warnings.warn("CAR over a single channel yields all zeros", stacklevel=2)
    return x - x.mean(axis=-2, keepdims=True)


def car_sample(patches: np.ndarray, n_channels: int) -> np.ndarray:
    """CAR over the channels sharing each time window of a channel-major ``(P, w)`` sample."""
    P, w = patches.shape[-2:]
    grid = np.asarray(patches, dtype=np.float64).reshape(*patches.shape[:-2], n_channels, P // n_channels, w)
    grid = grid - grid.mean(axis=-3, keepdims=True)
    return grid.reshape(patches.shape)


def zscore_patch(patch: np.ndarray, epsilon: float = 1e-8) -> np.ndarray:
    """Standardize along the last axis with the population std; flat patches become zeros."""
    x = np.asarray(patch, dtype=np.float64)
    if x.shape[-1] < 2:
        raise PreconditionError("z-scoring needs at least 2 samples per patch")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite value in patch")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    sd = np.sqrt(np.mean(centered**2, axis=-1, keepdims=True))
    flat = sd <= epsilon
    out = centered / np.where(flat, 1.0, sd)
    return np.where(flat, 0.0, out)


def condition(rec: Recording, spec: FilterSpec | None = FilterSpec(), target: float = 200.0) -> Recording:
    """Ingest-time chain: bandpass (skipped when ``spec`` is None) then resample."""
    if spec is not None:
        rec = bandpass(rec, spec)
    return resample(rec, target)
