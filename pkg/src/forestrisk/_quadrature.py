"""Composite quadrature on uniform grids.

Income integrals are taken separately over each constant-control segment so
that no Simpson panel straddles a jump of the thinning rate.
"""

import numpy as np


def simpson(y, dx):
    """Integrate uniformly spaced samples along axis 0.

    Composite Simpson when the interval count is even. An odd count closes
    with Simpson's 3/8 rule on the last three intervals, which keeps the rule
    fourth order; a single interval falls back to the trapezoid.
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0] - 1
    if m <= 0:
        return np.zeros(y.shape[1:]) if y.ndim > 1 else 0.0
    if m == 1:
        return 0.5 * dx * (y[0] + y[1])
    if m % 2 == 0:
        return dx / 3.0 * (y[0] + 4.0 * y[1:-1:2].sum(axis=0) + 2.0 * y[2:-1:2].sum(axis=0) + y[-1])
    head = simpson(y[: m - 2], dx) if m > 3 else 0.0
    tail = 3.0 * dx / 8.0 * (y[m - 3] + 3.0 * y[m - 2] + 3.0 * y[m - 1] + y[m])
    return head + tail


def piecewise_simpson(y, dx, cuts):
    """Sum of :func:`simpson` over the index ranges ``cuts[k]..cuts[k+1]``."""
    total = 0.0
    for i0, i1 in zip(cuts[:-1], cuts[1:]):
        total = total + simpson(y[i0 : i1 + 1], dx)
    return total
