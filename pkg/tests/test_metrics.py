import math

import numpy as np
import pytest

import pfpino.metrics as mt
import pfpino.solvers as sv


def loop_rel_l2(pred, ref):
    """Scalar-loop reference for the relative L2 table."""
    n_cases, n_steps, n_ch = pred.shape[:3]
    out = np.zeros((n_cases, n_ch))
    for ic in range(n_cases):
        for jc in range(n_ch):
            num = 0.0
            den = 0.0
            for s in range(n_steps):
                for a, b in zip(pred[ic, s, jc].ravel(), ref[ic, s, jc].ravel()):
                    num += (a - b) ** 2
                    den += b * b
            out[ic, jc] = 100.0 * math.sqrt(num) / math.sqrt(den)
    return out


def test_rel_l2_identical_is_zero():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(2, 3, 2, 16))
    table, mean = mt.relative_l2(ref.copy(), ref)
    assert np.all(table == 0.0)
    assert mean == 0.0


def test_rel_l2_homogeneous_perturbation():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=(2, 4, 3, 8, 6))
    table, mean = mt.relative_l2(1.01 * ref, ref)
    assert abs(mean - 1.0) < 1e-12
    assert np.all(np.abs(table - 1.0) < 1e-12)


def test_rel_l2_matches_scalar_loop():
    rng = np.random.default_rng(2)
    ref = rng.normal(size=(3, 4, 2, 7, 5))
    pred = ref + 0.1 * rng.normal(size=ref.shape)
    table, mean = mt.relative_l2(pred, ref)
    want = loop_rel_l2(pred, ref)
    assert np.max(np.abs(table - want)) < 1e-12
    assert abs(mean - want.mean()) < 1e-12


def test_rel_l2_scale_invariant():
    rng = np.random.default_rng(3)
    ref = rng.normal(size=(2, 3, 2, 9))
    pred = ref + rng.normal(size=ref.shape)
    _, mean = mt.relative_l2(pred, ref)
    _, scaled = mt.relative_l2(37.5 * pred, 37.5 * ref)
    assert abs(mean - scaled) < 1e-12 * mean


def test_rel_l2_errors():
    ref = np.ones((1, 2, 1, 8))
    with pytest.raises(ValueError, match="invalid-shape"):
        mt.relative_l2(np.ones((1, 2, 1, 9)), ref)
    with pytest.raises(ValueError, match="invalid-shape"):
        mt.relative_l2(np.ones((2, 1, 8)), np.ones((2, 1, 8)))
    with pytest.raises(ValueError, match="undefined-reference"):
        mt.relative_l2(ref, np.zeros_like(ref))


def test_interface_1d_linear_exact():
    x = np.linspace(0.0, 1.0, 6)
    pts = mt.extract_interface(x - 0.5, 0.0, (x,))
    assert pts.shape == (1, 1)
    assert abs(pts[0, 0] - 0.5) < 1e-15


def test_interface_1d_node_hit_and_level():
    x = np.linspace(0.0, 1.0, 5)
    pts = mt.extract_interface(x, 0.5, (x,))
    assert pts.shape == (1, 1)
    assert pts[0, 0] == 0.5  # node lies exactly on the level


def test_interface_empty_when_no_crossing():
    x = np.linspace(0.0, 1.0, 6)
    pts = mt.extract_interface(x + 2.0, 0.0, (x,))
    assert pts.shape == (0, 1)
    grid2 = (x, x)
    pts2 = mt.extract_interface(np.ones((6, 6)), 0.0, grid2)
    assert pts2.shape == (0, 2)


def test_interface_2d_circle():
    n = 128
    x = np.linspace(-0.5, 0.5, n)
    dx = x[1] - x[0]
    f = np.hypot(x[None, :], x[:, None]) - 0.3
    pts = mt.extract_interface(f, 0.0, (x, x))
    assert pts.shape[0] > 100
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert np.max(np.abs(r - 0.3)) < dx / 10.0


def test_interface_negation_identity():
    rng = np.random.default_rng(4)
    x = np.linspace(0.0, 1.0, 40)
    f = np.zeros((40, 40))
    for _ in range(6):
        kx, ky = rng.integers(1, 5, size=2)
        f += rng.normal() * np.cos(
            2 * np.pi * (kx * x[None, :] + ky * x[:, None]) + rng.uniform(0, 2 * np.pi)
        )
    a = mt.extract_interface(f, 0.12, (x, x))
    b = mt.extract_interface(-f, -0.12, (x, x))
    assert np.array_equal(a, b)


def test_interface_matches_corrosion_front():
    spc = sv.corrosion_1d_spec()
    phi = sv.make_initial_condition(spc)["phi"]
    (x,) = sv.grid_coords(spc)
    pts = mt.extract_interface(phi, 0.5, (x,))
    assert pts.shape == (1, 1)
    assert abs(pts[0, 0] - 35e-6) < sv.grid_spacing(spc)[0]


def test_interface_errors():
    x = np.linspace(0.0, 1.0, 6)
    with pytest.raises(ValueError, match="invalid-shape"):
        mt.extract_interface(np.zeros((2, 3, 4)), 0.0, (x, x, x))
    with pytest.raises(ValueError, match="invalid-shape"):
        mt.extract_interface(np.zeros(5), 0.0, (x,))


def test_hausdorff_identical_and_translate():
    rng = np.random.default_rng(5)
    a = np.column_stack([np.arange(50) * 0.75, np.zeros(50)])
    assert mt.hausdorff_relative(a, a.copy(), 0.25) == 0.0
    b = a + np.array([0.25, 0.0])  # shift by one cell, spacing 3 cells apart
    assert abs(mt.hausdorff_relative(a, b, 0.25) - 1.0) < 1e-12
    c = rng.normal(size=(30, 2))
    assert mt.hausdorff_relative(c, c + np.array([0.0, 0.25]), 0.25) <= 1.0 + 1e-12


def test_hausdorff_matches_double_loop():
    rng = np.random.default_rng(6)
    a = rng.uniform(size=(200, 2))
    b = rng.uniform(size=(200, 2))
    got = mt.hausdorff_relative(a, b, 0.05)

    def sup_inf(p, q):
        worst = 0.0
        for i in range(p.shape[0]):
            best = math.inf
            for j in range(q.shape[0]):
                best = min(best, math.hypot(*(p[i] - q[j])))
            worst = max(worst, best)
        return worst

    want = max(sup_inf(a, b), sup_inf(b, a)) / 0.05
    assert abs(got - want) < 1e-12


def test_hausdorff_symmetry_and_triangle():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(25, 2))
    b = rng.normal(size=(18, 2))
    c = rng.normal(size=(31, 2))
    hab = mt.hausdorff_relative(a, b, 1.0)
    hba = mt.hausdorff_relative(b, a, 1.0)
    assert abs(hab - hba) < 1e-12
    hac = mt.hausdorff_relative(a, c, 1.0)
    hbc = mt.hausdorff_relative(b, c, 1.0)
    assert hac <= hab + hbc + 1e-12


def test_hausdorff_errors():
    a = np.zeros((3, 2))
    with pytest.raises(ValueError, match="interface-missing"):
        mt.hausdorff_relative(np.empty((0, 2)), a, 1.0)
    with pytest.raises(ValueError, match="interface-missing"):
        mt.hausdorff_relative(a, np.empty((0, 2)), 1.0)
    with pytest.raises(ValueError, match="invalid-shape"):
        mt.hausdorff_relative(a, np.zeros((3, 1)), 1.0)
    with pytest.raises(ValueError, match="invalid-input"):
        mt.hausdorff_relative(a, a, 0.0)


def test_structure_factor_constant_is_zero():
    bins, s = mt.structure_factor(np.full((64, 64), 0.37))
    assert bins[0] == 1 and bins[-1] == 32
    assert np.all(s == 0.0)


def test_structure_factor_single_mode():
    n = 64
    x = np.arange(n) / n
    c = np.cos(2 * np.pi * 3 * x)[None, :] * np.ones((n, 1))
    bins, s = mt.structure_factor(c)
    # two spikes of |F|^2 = (n^2/2)^2 land in the 20-mode shell at |k| = 3
    want = n * n / 40.0
    assert abs(s[2] - want) < 1e-9 * want
    rest = np.delete(s, 2)
    assert np.max(np.abs(rest)) < 1e-12


def test_structure_factor_parseval():
    n = 64
    rng = np.random.default_rng(8)
    x = np.arange(n) / n
    c = np.zeros((n, n))
    for _ in range(60):
        kx, ky = rng.integers(-23, 24, size=2)
        if kx == 0 and ky == 0:
            kx = 1
        c += rng.normal() * np.cos(
            2 * np.pi * (kx * x[None, :] + ky * x[:, None]) + rng.uniform(0, 2 * np.pi)
        )
    bins, s = mt.structure_factor(c)
    counts = np.zeros(bins.size)
    for i in range(-n // 2, n // 2):
        for j in range(-n // 2, n // 2):
            mag = math.hypot(i, j)
            for bi, b in enumerate(bins):
                if b <= mag < b + 1:
                    counts[bi] += 1
    total = float(np.sum(counts * s))
    want = c.var() * n * n
    assert abs(total - want) < 1e-8 * want


def test_structure_factor_rejects_non_square():
    with pytest.raises(ValueError, match="unsupported-grid"):
        mt.structure_factor(np.zeros((64, 32)))
    with pytest.raises(ValueError, match="unsupported-grid"):
        mt.structure_factor(np.zeros(64))


def test_area_fraction():
    assert mt.area_fraction(np.ones((16, 16))) == 1.0
    assert mt.area_fraction(-np.ones((16, 16))) == 0.0
    n = 64
    x = np.arange(n) / n
    half = np.where(x[None, :] >= 0.5, 1.0, -1.0) * np.ones((n, 1))
    assert abs(mt.area_fraction(half) - 0.5) <= 1.0 / n
    with pytest.raises(ValueError, match="invalid-shape"):
        mt.area_fraction(np.zeros(10))
