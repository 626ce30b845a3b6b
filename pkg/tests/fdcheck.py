"""Central-difference gradient oracle, independent of the tape engine.

``numeric_gradient`` perturbs one element at a time and differences the
scalar loss; it never touches ``backward`` or ``grad`` slots, so it can
arbitrate them.
"""

import numpy as np

H_DEFAULT = 1e-5


def numeric_gradient(loss_fn, array: np.ndarray, h: float = H_DEFAULT) -> np.ndarray:
    """d(loss)/d(array) by central differences, mutating a scratch copy."""
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn()
        flat[i] = orig - h
        f_minus = loss_fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = 1e-6) -> float:
    """Worst elementwise |a-n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
