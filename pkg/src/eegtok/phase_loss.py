"""Reconstruction losses for spectral targets.

Two phase objectives are provided:

* ``direct_phase_loss`` regresses raw angles, ``sum (phi_hat - phi)^2``. It is
  discontinuous where the angle wraps at +-pi and is kept as the baseline.
* ``circular_phase_loss`` regresses the unit-circle encoding,
  ``sum (s_hat - sin phi)^2 + (c_hat - cos phi)^2``. For predictions on the
  unit circle this equals the squared chord ``2 - 2 cos(phi_hat - phi)``.

Every loss returns its value together with the gradient w.r.t. the
prediction(s), so the network backward pass can start from them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

MASK_RELATIVE_THRESHOLD = 1e-6

Mode = Literal["baseline", "circular"]


def _check_shapes(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"shape mismatch: {shape} vs {np.shape(a)}")


def amplitude_loss(predicted, target):
    predicted = np.asarray(predicted, dtype=np.float64)
    _check_shapes(predicted, target)
    diff = predicted - target
    return float(np.sum(diff**2)), 2.0 * diff


def direct_phase_loss(predicted_angle, target_angle, mask=None):
    """Squared angle difference with no wrapping; optional boolean ``mask`` selects bins."""
    predicted_angle = np.asarray(predicted_angle, dtype=np.float64)
    _check_shapes(predicted_angle, target_angle)
    diff = predicted_angle - target_angle
    if mask is not None:
        _check_shapes(predicted_angle, mask)
        diff = np.where(mask, diff, 0.0)
    return float(np.sum(diff**2)), 2.0 * diff


def circular_phase_loss(predicted_sin, predicted_cos, target_angle, amplitude_mask=None):
    """Returns ``(sin_loss, cos_loss, grad_sin, grad_cos)``.

    Predictions are unconstrained reals; bins outside ``amplitude_mask``
    contribute neither loss nor gradient.
    """
    predicted_sin = np.asarray(predicted_sin, dtype=np.float64)
    predicted_cos = np.asarray(predicted_cos, dtype=np.float64)
    _check_shapes(predicted_sin, predicted_cos, target_angle)
    ds = predicted_sin - np.sin(target_angle)
    dc = predicted_cos - np.cos(target_angle)
    if amplitude_mask is not None:
        _check_shapes(predicted_sin, amplitude_mask)
        ds = np.where(amplitude_mask, ds, 0.0)
        dc = np.where(amplitude_mask, dc, 0.0)
    return float(np.sum(ds**2)), float(np.sum(dc**2)), 2.0 * ds, 2.0 * dc


def amplitude_mask(amplitude, relative=MASK_RELATIVE_THRESHOLD):
    """Bins whose target amplitude reaches ``relative`` x the patch maximum."""
    amplitude = np.asarray(amplitude)
    peak = amplitude.max(axis=-1, keepdims=True)
    return (amplitude >= relative * peak) & (peak > 0)


def chord_identity(angle_a, angle_b):
    """Three forms of the squared chord between two unit-circle points."""
    lhs = (np.sin(angle_a) - np.sin(angle_b)) ** 2 + (np.cos(angle_a) - np.cos(angle_b)) ** 2
    cos_form = 2.0 - 2.0 * np.cos(np.subtract(angle_a, angle_b))
    sin_form = 4.0 * np.sin(np.subtract(angle_a, angle_b) / 2.0) ** 2
    return lhs, cos_form, sin_form


@dataclass(frozen=True)
class LossReport:
    amplitude_loss: float
    sin_loss: float
    cos_loss: float
    direct_phase_loss: float
    quantization_loss: float
    total: float
    mode: str = "circular"

    def optimized_terms(self) -> tuple[float, ...]:
        if self.mode == "baseline":
            return (self.amplitude_loss, self.direct_phase_loss, self.quantization_loss)
        return (self.amplitude_loss, self.sin_loss, self.cos_loss, self.quantization_loss)


def total_loss(mode: Mode, amplitude_loss: float = 0.0, sin_loss: float = 0.0,
               cos_loss: float = 0.0, direct_phase_loss: float = 0.0,
               quantization_loss: float = 0.0) -> LossReport:
    """Assemble a :class:`LossReport`; the unused phase terms are kept as diagnostics."""
    if mode == "circular":
        total = amplitude_loss + sin_loss + cos_loss + quantization_loss
    elif mode == "baseline":
        total = amplitude_loss + direct_phase_loss + quantization_loss
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return LossReport(float(amplitude_loss), float(sin_loss), float(cos_loss),
                      float(direct_phase_loss), float(quantization_loss), float(total), mode)


LANDSCAPE_COLUMNS = ("delta_phi", "direct_value", "direct_grad", "circular_value", "circular_grad")


def loss_landscape(delta_grid) -> np.ndarray:
    """Both phase losses as functions of the raw difference ``phi_hat - phi``.

    Returns a ``(n, 5)`` array with columns :data:`LANDSCAPE_COLUMNS`. The
    direct loss sees the unwrapped difference (so the pair ``pi - e`` vs
    ``-pi + e`` sits at ``2 pi - 2e``); the circular loss, evaluated for
    unit-circle predictions, depends only on the wrapped angle.
    """
    d = np.asarray(delta_grid, dtype=np.float64).ravel()
    if np.any(np.abs(d) > 2 * np.pi + 1e-12):
        raise ValueError("delta grid must lie within [-2 pi, 2 pi]")
    return np.column_stack([d, d**2, 2 * d, 2 - 2 * np.cos(d), 2 * np.sin(d)])


def landscape_grid(n: int, epsilon: float = 0.01) -> np.ndarray:
    """``n`` evenly spaced differences on [-2 pi, 2 pi] plus the +-(2 pi - 2 eps) boundary pair.

    ``n == 1`` yields the single point 0.
    """
    if n < 1:
        raise ValueError("grid needs at least one point")
    if n == 1:
        return np.zeros(1)
    edge = 2 * np.pi - 2 * epsilon
    return np.unique(np.concatenate([np.linspace(-2 * np.pi, 2 * np.pi, n), [-edge, edge]]))


def unit_circle_angle_gradient(predicted_angle, target_angle):
    """d(L_sin + L_cos)/d(phi_hat) for predictions ``(sin phi_hat, cos phi_hat)``, via the chain rule."""
    s, c = np.sin(predicted_angle), np.cos(predicted_angle)
    _, _, gs, gc = circular_phase_loss(s, c, target_angle)
    return gs * c - gc * s
