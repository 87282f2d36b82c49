"""Shared test utilities: constructed models and independent oracles."""

from __future__ import annotations

import numpy as np

from cpdemod import mlp
from cpdemod.mlp import ModelArch, Weights


def zero_weights(arch: ModelArch) -> Weights:
    """All-zero weights: uniform predictive regardless of input."""
    return Weights(
        [np.zeros((fan_out, fan_in)) for fan_in, fan_out in arch.dims()],
        [np.zeros(fan_out) for _, fan_out in arch.dims()],
    )


def certain_weights(arch: ModelArch, label: int, scale: float = 1000.0) -> Weights:
    """Weights whose predictive is exactly one-hot on ``label``.

    Hidden layers are zero, so logits equal the output bias; a huge logit gap
    underflows every other class probability to exactly 0.0.
    """
    w = zero_weights(arch)
    w.bs[-1][label] = scale
    return w


def finite_difference_grad(w: Weights, X, y, h: float = 1e-5) -> Weights:
    """Central-difference gradient of the mean log loss, every coordinate."""
    gws = [np.empty_like(a) for a in w.ws]
    gbs = [np.empty_like(a) for a in w.bs]
    for params, grads in ((w.ws, gws), (w.bs, gbs)):
        for arr, garr in zip(params, grads):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = mlp.nll_loss(w, X, y)
                arr[idx] = orig - h
                down = mlp.nll_loss(w, X, y)
                arr[idx] = orig
                garr[idx] = (up - down) / (2.0 * h)
    return Weights(gws, gbs)


def max_rel_grad_error(analytic: Weights, numeric: Weights) -> float:
    """Largest per-coordinate relative disagreement between two gradients."""
    worst = 0.0
    for a_arrs, n_arrs in ((analytic.ws, numeric.ws), (analytic.bs, numeric.bs)):
        for a, n in zip(a_arrs, n_arrs):
            rel = np.abs(a - n) / (np.abs(a) + 1e-8)
            worst = max(worst, float(rel.max()))
    return worst


def weights_equal(a: Weights, b: Weights) -> bool:
    """Bit-exact equality of two weight sets."""
    return all(np.array_equal(x, y) for x, y in zip(a.ws, b.ws)) and all(
        np.array_equal(x, y) for x, y in zip(a.bs, b.bs)
    )
