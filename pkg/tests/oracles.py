"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np


def cox_de_boor(knots, j: int, p: int, x: float, right_end: bool = True) -> float:
    """Textbook global recursion for the j-th degree-p B-spline at x."""
    t = np.asarray(knots, dtype=float)
    if p == 0:
        if t[j] <= x < t[j + 1]:
            return 1.0
        # left limit at the right end of the domain
        if right_end and x == t[-1] and t[j] < t[j + 1] == t[-1]:
            return 1.0
        return 0.0
    out = 0.0
    d1 = t[j + p] - t[j]
    if d1 > 0:
        out += (x - t[j]) / d1 * cox_de_boor(t, j, p - 1, x, right_end)
    d2 = t[j + p + 1] - t[j + 1]
    if d2 > 0:
        out += (t[j + p + 1] - x) / d2 * cox_de_boor(t, j + 1, p - 1, x, right_end)
    return out


def all_functions(knots, p: int, x: float) -> np.ndarray:
    n = len(knots) - p - 1
    return np.array([cox_de_boor(knots, j, p, x) for j in range(n)])


def spline_dimension(n: int, p: int, k: int) -> int:
    return n * (p - k) + k + 1
