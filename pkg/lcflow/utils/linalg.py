from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def solve_tridiagonal(
    lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    """Solve a tridiagonal system with row-aligned bands.

    ``lower[i]`` and ``upper[i]`` are the coefficients of x[i-1] and x[i+1]
    in row i; lower[0] and upper[-1] are ignored.
    """
    n = diag.size
    if n == 1:
        return rhs / diag
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)
