"""Synthetic sinusoid-mixture corpora with controlled phase statistics.

Each channel holds a fixed set of integer-Hz components. Every whole second
(one 200-sample patch) draws fresh phases, either uniformly or concentrated
at ``phase_center`` with a wrapped-normal spread, so patch-aligned samples
see exactly those phases as their DFT targets.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .recording import Recording, save_canonical

ELECTRODES_10_20 = ("FP1", "FP2", "F7", "F3", "FZ", "F4", "F8", "T3", "C3", "CZ", "C4", "T4",
                    "T5", "P3", "PZ", "P4", "T6", "O1", "O2")


def sinusoid_recording(rng: np.random.Generator, n_channels: int = 8, seconds: int = 32,
                       rate: int = 200, n_components: int = 3, freq_range=(2, 40),
                       phase_center: float | None = np.pi, phase_spread: float = 0.3,
                       amplitude_range=(0.5, 2.0), noise: float = 0.0,
                       electrodes=None, trials: int = 1) -> Recording:
    w = rate
    names = list(electrodes or ELECTRODES_10_20[:n_channels])[:n_channels]
    lo, hi = freq_range
    n = np.arange(w)
    data = np.zeros((n_channels, seconds * w))
    for ch in range(n_channels):
        freqs = rng.choice(np.arange(lo, hi + 1), size=n_components, replace=False)
        amps = rng.uniform(*amplitude_range, size=n_components)
        for sec in range(seconds):
            if phase_center is None:
                phases = rng.uniform(-np.pi, np.pi, size=n_components)
            else:
                phases = phase_center + phase_spread * rng.standard_normal(n_components)
            seg = (amps[:, None] * np.cos(2 * np.pi * freqs[:, None] * n / w + phases[:, None])).sum(0)
            data[ch, sec * w:(sec + 1) * w] = seg
    if noise:
        data += noise * rng.standard_normal(data.shape)
    T = data.shape[1]
    bounds = np.linspace(0, seconds, trials + 1).astype(int) * w
    return Recording(names, float(rate), list(zip(bounds[:-1], bounds[1:])), data)


def make_synthetic_corpus(directory: str | os.PathLike, n_files: int = 4, seed: int = 0,
                          **kwargs) -> list[Path]:
    """Write ``n_files`` canonical recordings ``synth_000`` ... into ``directory``."""
    directory = Path(directory)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_files):
        rec = sinusoid_recording(rng, **kwargs)
        paths.append(save_canonical(rec, directory / f"synth_{i:03d}"))
    return paths
