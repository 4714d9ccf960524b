"""Finite-difference gradient verification.

The oracle perturbs raw arrays and re-runs the forward function, so it is
independent of the reverse-mode path it checks. Checks run in float64:
central differences at h=1e-3 on a float32 forward would be dominated by
rounding noise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, grad_of


def finite_difference_grads(fn, arrays, h=1e-3):
    """Central-difference gradients of scalar fn(list_of_arrays) per entry."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for ai, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(fn(arrays))
            flat[j] = orig - h
            fm = float(fn(arrays))
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-3):
    """max |a - n| / max(|a|, |n|, floor) over all entries of all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_gradients(build_fn, arrays, h=1e-3, tol=1e-3):
    """Compare reverse-mode and finite-difference gradients.

    `build_fn(tensors) -> scalar Tensor` constructs the graph from a list of
    float64 parameter tensors. Returns the max relative error; raises
    AssertionError above `tol`.
    """
    tensors = [Tensor.param(a, dtype=np.float64) for a in arrays]
    out = build_fn(tensors)
    analytic = [g.data for g in grad_of(out, tensors)]

    def value(arrs):
        ts = [Tensor.constant(a) for a in arrs]
        return build_fn(ts).item()

    numeric = finite_difference_grads(value, arrays, h=h)
    err = max_rel_error(analytic, numeric)
    if err > tol:
        raise AssertionError(f"gradient mismatch: max relative error {err:.3e} > {tol}")
    return err
