"""Central finite-difference gradient checking."""

import numpy as np


def numeric_grad(f, arr, eps):
    """Central differences of scalar-valued f with respect to arr, in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn, tensors, eps=1e-5):
    """Compare analytic grads of scalar loss_fn() against central differences.

    tensors: dict name -> Tensor whose .data is perturbed in place. Returns
    dict name -> relative error. loss_fn must rebuild the graph on each call.
    """
    loss = loss_fn()
    loss.backward()
    analytic = {name: np.array(t.grad, copy=True) for name, t in tensors.items()}
    errors = {}
    for name, t in tensors.items():
        num = numeric_grad(lambda: loss_fn().item(), t.data, eps)
        errors[name] = relative_error(analytic[name], num)
    return errors
