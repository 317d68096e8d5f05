"""Shared test oracles: finite-difference gradient checking."""

import numpy as np


def numeric_grad(f, tensor, eps=1e-6):
    """Central-difference gradient of scalar f() w.r.t. one tensor's entries."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f().data)
        flat[i] = orig - eps
        lo = float(f().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def gradcheck(f, tensors, eps=1e-6, rtol=1e-4, atol=1e-7):
    """Compare analytic gradients of scalar f() against central differences.

    f is re-evaluated from scratch on every call so that perturbing the
    tensors' data is observed. Returns the worst relative error seen.
    """
    for t in tensors:
        t.grad = None
    out = f()
    out.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "analytic gradient missing"
        num = numeric_grad(f, t, eps=eps)
        ana = t.grad
        denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-3)
        rel = np.abs(ana - num) / denom
        mask = np.abs(ana - num) > atol
        if np.any(mask):
            worst = max(worst, float(rel[mask].max()))
        assert np.all((rel < rtol) | ~mask), (
            f"gradcheck failed: max rel err {float(rel[mask].max()):.3e}"
        )
    return worst
