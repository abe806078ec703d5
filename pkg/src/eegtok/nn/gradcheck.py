"""Central finite-difference checks against analytical gradients."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError


def relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(fn, inputs, step=1e-5, n_coords=None, rng=None, floor=1e-8):
    """Worst relative error between ``fn``'s analytical gradient and central differences.

    ``fn(inputs) -> (value, grads)`` where ``inputs`` and ``grads`` are dicts
    of float64 arrays with matching keys. ``inputs`` is perturbed in place and
    restored. ``n_coords`` samples that many coordinates per array (all when
    None).
    """
    _, grads = fn(inputs)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name, x in inputs.items():
        if name not in grads:
            continue
        flat = x.reshape(-1)
        g = np.asarray(grads[name]).reshape(-1)
        coords = np.arange(flat.size)
        if n_coords is not None and n_coords < flat.size:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + step
            plus, _ = fn(inputs)
            flat[i] = old - step
            minus, _ = fn(inputs)
            flat[i] = old
            numeric = (plus - minus) / (2 * step)
            if not np.isfinite(numeric):
                raise NumericalError(f"non-finite difference at {name}[{i}]")
            worst = max(worst, float(relative_error(g[i], numeric, floor)))
    return worst
