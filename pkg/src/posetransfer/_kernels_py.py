"""Numpy reference kernels, used when the compiled extension is unavailable."""
import numpy as np


def quintic_eval(values, query, order):
    """Evaluate the 6-point interpolating quintic (or a derivative) at `query`.

    Both arrays are in sample-index units: sample ``i`` sits at ``x = i``.
    Each query uses the six samples nearest to it, shifted inward at the
    boundaries. Derivatives are with respect to the index, so callers scale
    by ``rate**order``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    n = values.shape[0]
    start = np.floor(query - 2.0).astype(np.intp)
    np.clip(start, 0, n - 6, out=start)

    c = values[start[:, None] + np.arange(6)]
    for k in range(1, 6):
        fk = float(k)
        for j in range(5, k - 1, -1):
            c[:, j] = (c[:, j] - c[:, j - 1]) / fk

    x = query - start.astype(np.float64)
    p = c[:, 5].copy()
    d1 = np.zeros_like(p)
    d2 = np.zeros_like(p)
    for k in range(4, -1, -1):
        fk = float(k)
        d2 = d2 * (x - fk) + 2.0 * d1
        d1 = d1 * (x - fk) + p
        p = p * (x - fk) + c[:, k]
    return (p, d1, d2)[order]
