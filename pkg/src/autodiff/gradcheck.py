"""
Gradient Checking Helpers
Central finite differences for verifying backward rules.
"""

from typing import Callable

import numpy as np


def numeric_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """
    Estimate d f / d array by central differences, perturbing array in place.

    Args:
        f: Zero-argument function re-evaluating the scalar objective
        array: The array f depends on (modified and restored entry by entry)
        h: Step size

    Returns:
        Array of the same shape holding the numeric gradient
    """
    grad = np.zeros_like(array, dtype=np.float64)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + h
        f_plus = f()
        array[index] = original - h
        f_minus = f()
        array[index] = original
        grad[index] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """‖a − b‖ / max(‖a‖ + ‖b‖, floor)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)
