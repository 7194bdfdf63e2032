import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_gdt_1d, naive_gdt_2d, naive_masked_gdt_2d
from posekit.gdt import gdt_1d, gdt_2d, masked_gdt_2d, quad_envelope


def test_single_element():
    out, arg = gdt_1d(np.array([3.5]), 1.0, 0.0)
    assert out[0] == 3.5
    assert arg[0] == 0


def test_constant_input_maps_to_self():
    f = np.full(7, 2.0)
    out, arg = gdt_1d(f, 1.0, 0.0)
    assert np.array_equal(out, f)
    assert np.array_equal(arg, np.arange(7))


def test_delta_peak_paraboloid():
    # single peak at the centre of 5x5, unit quadratic weights: value at
    # offset (dy, dx) is peak - dy^2 - dx^2, so the corners read peak - 8
    f = np.full((5, 5), -100.0)
    f[2, 2] = 10.0
    out, ay, ax = gdt_2d(f, 1.0, 0.0, 1.0, 0.0)
    for py in range(5):
        for px in range(5):
            # worst case peak - 8 = 2 still beats the -100 floor everywhere
            assert out[py, px] == 10.0 - (py - 2) ** 2 - (px - 2) ** 2
            assert ay[py, px] == 2
            assert ax[py, px] == 2
    assert out[0, 0] == 2.0
    assert out[4, 4] == 2.0


def test_1x1_slice_unchanged():
    out, ay, ax = gdt_2d(np.array([[4.25]]), 1.0, 0.5, 2.0, -0.5)
    assert out[0, 0] == 4.25
    assert ay[0, 0] == 0 and ax[0, 0] == 0


def test_linear_term_shifts_argmax():
    # strong negative slope rewards positive displacement
    f = np.zeros(9)
    out, arg = gdt_1d(f, 0.1, -2.0)
    naive_out, naive_arg = naive_gdt_1d(f, 0.1, -2.0)
    assert np.array_equal(out, naive_out)
    assert np.array_equal(arg, naive_arg)
    assert arg[8] < 8    # borrowed from the left


def test_random_1d_vs_naive_exact():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        f = rng.normal(size=n) * rng.uniform(0.5, 10)
        a = rng.uniform(0.01, 5.0)
        b = rng.uniform(-3.0, 3.0)
        out, arg = gdt_1d(f, a, b)
        naive_out, _ = naive_gdt_1d(f, a, b)
        assert np.array_equal(out, naive_out)
        # reported arg reproduces the value exactly
        d = np.arange(n, dtype=np.float64) - arg
        again = f[arg] - a * d * d - b * d
        assert np.array_equal(again, out)


def test_random_2d_vs_naive_exact():
    rng = np.random.default_rng(43)
    for _ in range(20):
        f = rng.normal(size=(6, 6)) * 3
        wx2, wy2 = rng.uniform(0.01, 2.0, 2)
        wx1, wy1 = rng.uniform(-2.0, 2.0, 2)
        out, ay, ax = gdt_2d(f, wx2, wx1, wy2, wy1)
        assert np.array_equal(out, naive_gdt_2d(f, wx2, wx1, wy2, wy1))
        # args reproduce the value
        for py in range(6):
            for px in range(6):
                dy = float(py - ay[py, px])
                dx = float(px - ax[py, px])
                v = f[ay[py, px], ax[py, px]] - wx2 * dx * dx - wx1 * dx \
                    - wy2 * dy * dy - wy1 * dy
                assert v == out[py, px]


def test_masked_all_neg_inf():
    f = np.full((3, 3), -np.inf)
    grid = np.arange(3, dtype=np.float64)
    out, ay, ax = masked_gdt_2d(f, 1.0, 0.0, 1.0, 0.0, grid, grid, grid, grid)
    assert np.all(out == -np.inf)
    assert np.all(ay == -1)
    assert np.all(ax == -1)


def test_masked_partial_neg_inf_vs_naive():
    rng = np.random.default_rng(44)
    for _ in range(20):
        f = rng.normal(size=(5, 4))
        mask = rng.random((5, 4)) < 0.4
        f[mask] = -np.inf
        xs = np.sort(rng.uniform(0, 10, 4))
        ys = np.sort(rng.uniform(0, 10, 5))
        xpos = np.sort(rng.uniform(-2, 12, 6))
        ypos = np.sort(rng.uniform(-2, 12, 3))
        ax_, bx_ = rng.uniform(0.05, 1.0), rng.uniform(-1, 1)
        ay_, by_ = rng.uniform(0.05, 1.0), rng.uniform(-1, 1)
        out, _, _ = masked_gdt_2d(f, ax_, bx_, ay_, by_, xs, ys, xpos, ypos)
        naive = naive_masked_gdt_2d(f, ax_, bx_, ay_, by_, xs, ys, xpos, ypos)
        assert np.array_equal(out, naive)


def test_arbitrary_sites_and_positions():
    sites = np.array([0.0, 1.5, 4.25])
    values = np.array([1.0, 0.5, 2.0])
    positions = np.array([-1.0, 0.7, 2.0, 5.0])
    out, arg = quad_envelope(sites, values, 0.3, 0.1, positions)
    for j, p in enumerate(positions):
        cand = values - 0.3 * (p - sites) ** 2 - 0.1 * (p - sites)
        assert out[j] == pytest.approx(cand.max(), abs=1e-12)
        assert cand[arg[j]] == cand.max()


def test_quad_floor_enforced():
    with pytest.raises(ValueError):
        gdt_1d(np.zeros(4), 0.0, 0.0)
    with pytest.raises(ValueError):
        quad_envelope(np.arange(3.0), np.zeros(3), 1e-9, 0.0, np.arange(3.0))


def test_rejects_empty_and_2d_input():
    with pytest.raises(ValueError):
        gdt_1d(np.zeros((0,)), 1.0, 0.0)
    with pytest.raises(ValueError):
        gdt_1d(np.zeros((2, 2)), 1.0, 0.0)
    with pytest.raises(ValueError):
        gdt_2d(np.zeros((4,)), 1.0, 0.0, 1.0, 0.0)


@settings(deadline=None, max_examples=60)
@given(
    f=st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=24),
    a=st.floats(0.01, 4.0),
    b=st.floats(-2.0, 2.0),
    c=st.floats(-50, 50),
)
def test_constant_shift_property(f, a, b, c):
    """Adding c to the input adds exactly c to every output; argmax fixed."""
    f = np.asarray(f)
    out1, arg1 = gdt_1d(f, a, b)
    out2, arg2 = gdt_1d(f + c, a, b)
    assert np.allclose(out2 - out1, c, rtol=0, atol=1e-9)
    assert np.array_equal(arg1, arg2)


@settings(deadline=None, max_examples=40)
@given(
    seed=st.integers(0, 2**32 - 1),
    h=st.integers(1, 8),
    w=st.integers(1, 8),
)
def test_2d_matches_naive_property(seed, h, w):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(h, w))
    wx2, wy2 = rng.uniform(0.01, 2.0, 2)
    wx1, wy1 = rng.uniform(-2.0, 2.0, 2)
    out, _, _ = gdt_2d(f, wx2, wx1, wy2, wy1)
    assert np.array_equal(out, naive_gdt_2d(f, wx2, wx1, wy2, wy1))
