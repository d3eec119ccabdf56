"""Evaluation metrics: relative L2 error, level-set interface extraction with
relative Hausdorff distance, radially averaged structure factor, and
crystallised area fraction.

Interface sets are plain (n_points, ndim) arrays of physical coordinates with
axis order matching the grid tuple (y, x for 2d); an empty set has shape
(0, ndim).
"""

import numpy as np
from scipy.spatial.distance import cdist


def relative_l2(pred, ref):
    """Relative L2 error of pred against ref, in percent.

    Both arrays are (n_cases, n_steps, n_channels, *spatial) with 1 or 2
    spatial axes. The norm runs over the joint time+space block of each
    (case, channel) entry. Returns (per_case_channel, mean), both x100.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError("invalid-shape: prediction and reference disagree")
    if pred.ndim not in (4, 5):
        raise ValueError("invalid-shape: expected (case, step, channel, space...)")
    axes = (1,) + tuple(range(3, pred.ndim))
    num = np.sqrt(np.sum((pred - ref) ** 2, axis=axes))
    den = np.sqrt(np.sum(ref ** 2, axis=axes))
    if np.any(den == 0.0):
        raise ValueError("undefined-reference: reference block has zero norm")
    table = 100.0 * num / den
    return table, float(table.mean())


def _cross_param(g0, g1):
    # strict sign change only, so the denominator never vanishes
    return g0 / (g0 - g1)


def extract_interface(field, level, grid):
    """Points where a nodal field crosses the level value.

    grid is the tuple of per-axis coordinate arrays (grid_coords order).
    Nodes lying exactly on the level are kept as points; strict sign changes
    on grid edges are located by linear interpolation. May return empty.
    """
    f = np.asarray(field, dtype=np.float64) - level
    if f.ndim not in (1, 2):
        raise ValueError("invalid-shape: interface extraction needs 1d or 2d fields")
    if len(grid) != f.ndim or any(len(g) != s for g, s in zip(grid, f.shape)):
        raise ValueError("invalid-shape: grid does not match the field")

    if f.ndim == 1:
        (x,) = grid
        pts = [x[f == 0.0]]
        hit = f[:-1] * f[1:] < 0.0
        t = _cross_param(f[:-1][hit], f[1:][hit])
        pts.append(x[:-1][hit] + t * (x[1:][hit] - x[:-1][hit]))
        return np.concatenate(pts).reshape(-1, 1)

    y, x = grid
    zy, zx = np.nonzero(f == 0.0)
    pts = [np.column_stack([y[zy], x[zx]])]
    g0, g1 = f[:, :-1], f[:, 1:]
    iy, ix = np.nonzero(g0 * g1 < 0.0)
    t = _cross_param(g0[iy, ix], g1[iy, ix])
    pts.append(np.column_stack([y[iy], x[ix] + t * (x[ix + 1] - x[ix])]))
    g0, g1 = f[:-1, :], f[1:, :]
    iy, ix = np.nonzero(g0 * g1 < 0.0)
    t = _cross_param(g0[iy, ix], g1[iy, ix])
    pts.append(np.column_stack([y[iy] + t * (y[iy + 1] - y[iy]), x[ix]]))
    return np.concatenate(pts, axis=0)


def hausdorff_relative(set_a, set_b, dx):
    """Symmetric Hausdorff distance between point sets, in grid-cell units."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("interface-missing: empty interface set")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("invalid-shape: point sets must be (n_points, ndim)")
    if dx <= 0:
        raise ValueError("invalid-input: dx must be positive")
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()) / dx)


def structure_factor(field):
    """Radially averaged power spectrum of the mean-free field.

    Returns (bins, s) with integer bins 1..N/2; s[i] is the mean of
    |F(c - mean)|^2 / N_points over the integer-mode shell |k| in
    [bin, bin+1).
    """
    c = np.asarray(field, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("unsupported-grid: square 2d field required")
    n = c.shape[0]
    power = np.abs(np.fft.fft2(c - c.mean())) ** 2 / c.size
    k = np.fft.fftfreq(n, d=1.0 / n)
    mag = np.hypot(k[None, :], k[:, None])
    bins = np.arange(1, n // 2 + 1)
    s = np.empty(bins.size)
    for i, b in enumerate(bins):
        shell = (mag >= b) & (mag < b + 1)
        s[i] = power[shell].mean()
    return bins, s


def area_fraction(phi):
    """Fraction of grid points in the solid phase (phi > 0)."""
    p = np.asarray(phi)
    if p.ndim != 2:
        raise ValueError("invalid-shape: area fraction is defined on 2d grids")
    return float(np.count_nonzero(p > 0.0) / p.size)
