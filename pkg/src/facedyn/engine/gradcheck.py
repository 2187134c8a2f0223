"""Finite-difference gradient oracle.

Central differences evaluated element by element; meant for small
float64 tensors. The reported error is normalized per tensor by the
larger of the two gradients' max magnitudes, floored at 1e-6 so an
all-zero pair compares clean.
"""

from __future__ import annotations

import numpy as np

from facedyn.engine.tensor import no_grad


def numerical_gradient(f, tensors, h=1e-3):
    """d f() / d t for each t in `tensors` by central differences.

    `f` must be a zero-argument callable returning a scalar Tensor and
    must read the current contents of each tensor on every call.
    """
    grads = []
    with no_grad():
        for t in tensors:
            grad = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * h)
            grads.append(grad)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-6)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst


def check_gradients(f, tensors, h=1e-3):
    """Max relative error between reverse-mode grads of f and the oracle."""
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numerical_gradient(f, tensors, h=h)
    return max_relative_error(analytic, numeric)


def sampled_numerical_gradient(f, tensor, coords, h=1e-5):
    """Central differences restricted to `coords` (flat indices) of one tensor."""
    flat = tensor.data.reshape(-1)
    out = np.zeros(len(coords), dtype=tensor.data.dtype)
    with no_grad():
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            out[j] = (fp - fm) / (2.0 * h)
    return out
