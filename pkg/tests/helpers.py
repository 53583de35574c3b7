"""Shared test oracles, kept independent of the code under test."""

import numpy as np


def fd_gradient(f, array, eps=1e-5):
    """Central finite differences of the scalar function f() with respect to
    `array`, perturbing it in place and restoring it."""
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_grads(build_loss, tensors, eps=1e-5, tol=1e-4):
    """Assert analytic gradients of build_loss() match finite differences for
    every tensor in `tensors`. build_loss must rebuild the forward graph on a
    fresh tape and return (tape, loss)."""
    tape, loss = build_loss()
    for t in tensors:
        t.zero_grad()
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        numeric = fd_gradient(lambda: float(build_loss()[1].value), t.value, eps=eps)
        worst = max(worst, max_rel_err(t.grad, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3g}"
    return worst
