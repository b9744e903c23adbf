import math

import numpy as np
import pytest

from sparse_deconv.filters import (Filter, RootFactorization, angle_to_delta,
                                   convolve, convolve_direct, deltaness,
                                   filter_from_roots, find_roots,
                                   geometric_filter, inverse_error,
                                   inverse_filter, time_reverse,
                                   truncated_inverse,
                                   truncation_error_closed_form, unit,
                                   wiener_margin)

RNG = np.random.Generator(np.random.Philox(2024))


def random_filter(n, offset=0):
    return Filter(RNG.standard_normal(n), offset)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def test_unit_is_convolution_identity():
    f = random_filter(9, offset=-3)
    out = convolve(unit(), f)
    assert out.offset == f.offset
    np.testing.assert_array_equal(out.coeffs, f.coeffs)


def test_convolution_telescopes_geometric_factor():
    # (1,-s) * (1,s,...,s^(r-1)) collapses to e0 - s^r e_r; expanded by hand
    # for r=3: (1,-s)*(1,s,s^2) = (1, 0, 0, -s^3)
    s = 0.7
    out = convolve(Filter(np.array([1.0, -s])), geometric_filter(s, 3))
    np.testing.assert_allclose(out.to_array(0, 4), [1, 0, 0, -(s**3)], atol=1e-15)


def test_convolution_hand_example_with_offsets():
    # sum-of-products oracle: (1,2)@0 * (3,4)@1 = (3,10,8)@1
    out = convolve(Filter(np.array([1.0, 2.0]), 0), Filter(np.array([3.0, 4.0]), 1))
    assert out.offset == 1
    np.testing.assert_array_equal(out.coeffs, [3.0, 10.0, 8.0])


@pytest.mark.parametrize("trial", range(5))
def test_convolution_commutative_and_associative(trial):
    f = random_filter(int(RNG.integers(1, 12)), int(RNG.integers(-4, 4)))
    g = random_filter(int(RNG.integers(1, 12)), int(RNG.integers(-4, 4)))
    h = random_filter(int(RNG.integers(1, 12)), int(RNG.integers(-4, 4)))
    fg, gf = convolve(f, g), convolve(g, f)
    assert fg.offset == gf.offset
    np.testing.assert_allclose(fg.coeffs, gf.coeffs, atol=1e-12)
    lhs = convolve(convolve(f, g), h)
    rhs = convolve(f, convolve(g, h))
    assert lhs.offset == rhs.offset
    np.testing.assert_allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)


@pytest.mark.parametrize("n,m", [(64, 64), (1000, 300), (4096, 4096), (33, 4096)])
def test_fft_matches_direct(n, m):
    f = random_filter(n)
    g = random_filter(m, offset=-5)
    fast = convolve(f, g)
    slow = convolve_direct(f, g)
    assert fast.offset == slow.offset
    np.testing.assert_allclose(fast.coeffs, slow.coeffs, atol=1e-12)


def test_zero_filter_convolution():
    z = Filter(np.zeros(3), 2)
    assert z.is_zero
    assert convolve(z, random_filter(4)).is_zero


# ---------------------------------------------------------------------------
# time reversal, shifting
# ---------------------------------------------------------------------------


def test_time_reverse_examples():
    assert time_reverse(unit()).offset == 0
    r = time_reverse(Filter(np.array([1.0, 2.0, 3.0]), 0))
    assert r.offset == -2
    np.testing.assert_array_equal(r.coeffs, [3.0, 2.0, 1.0])


def test_time_reverse_is_involution():
    f = random_filter(7, offset=-2)
    rr = time_reverse(time_reverse(f))
    assert rr.offset == f.offset
    np.testing.assert_array_equal(rr.coeffs, f.coeffs)


def test_shift_roundtrip():
    f = random_filter(5, offset=1)
    assert f.shift(3).shift(-3) == f
    assert f.shift(3).offset == 4


# ---------------------------------------------------------------------------
# geometric filters
# ---------------------------------------------------------------------------


def test_geometric_examples():
    assert geometric_filter(0.0, 5) == geometric_filter(0.0, 1)
    np.testing.assert_array_equal(geometric_filter(0.5, 3).coeffs, [1.0, 0.5, 0.25])
    with pytest.raises(ValueError):
        geometric_filter(1.0, 4)


def test_geometric_telescoping_check():
    s, L = -0.6, 12
    out = convolve(geometric_filter(s, L), Filter(np.array([1.0, -s])))
    expect = np.zeros(L + 1)
    expect[0], expect[L] = 1.0, -(s**L)
    np.testing.assert_allclose(out.to_array(0, L + 1), expect, atol=1e-15)


# ---------------------------------------------------------------------------
# root factorization
# ---------------------------------------------------------------------------


def test_filter_from_roots_empty():
    f = filter_from_roots(RootFactorization(c0=1.0))
    assert f == unit() or np.array_equal(f.coeffs, [1.0])


def test_filter_from_single_plus_root():
    f = filter_from_roots(RootFactorization(plus_roots=(0.5,), c0=1.0))
    np.testing.assert_allclose(f.coeffs, [1.0, -0.5])
    assert f.offset == 0


def test_filter_from_two_plus_roots_hand_expansion():
    # (1 - 0.5 z^-1)(1 + 0.3 z^-1) = 1 - 0.2 z^-1 - 0.15 z^-2
    f = filter_from_roots(RootFactorization(plus_roots=(0.5, -0.3), c0=1.0))
    np.testing.assert_allclose(f.coeffs, [1.0, -0.2, -0.15], atol=1e-15)


def test_filter_from_roots_rejects_big_roots():
    with pytest.raises(ValueError):
        RootFactorization(plus_roots=(1.1,))


def test_conjugate_pair_gives_real_filter():
    r = 0.4 * np.exp(1j * 0.9)
    f = filter_from_roots(RootFactorization(plus_roots=(r, np.conj(r)), c0=1.0))
    assert np.isrealobj(f.coeffs)
    np.testing.assert_allclose(f.coeffs, [1.0, -2 * 0.4 * math.cos(0.9), 0.16],
                               atol=1e-14)


def test_truncated_inverse_single_root_is_geometric():
    s, r = 0.5, 6
    w = truncated_inverse(RootFactorization(plus_roots=(s,), c0=1.0), r)
    np.testing.assert_allclose(w.coeffs, s ** np.arange(r))
    assert w.offset == 0


def test_truncated_inverse_r1_is_scaled_unit():
    rf = RootFactorization(plus_roots=(0.5, 0.4), minus_roots=(0.2,), c0=2.0)
    w = truncated_inverse(rf, 1)
    np.testing.assert_allclose(w.coeffs, [0.5])


def test_truncated_inverse_two_roots_hand_expansion():
    # (1 + 0.5 z^-1)(1 + 0.4 z^-1) partial sums at r=2
    rf = RootFactorization(plus_roots=(0.5, 0.4), c0=1.0)
    w = truncated_inverse(rf, 2)
    np.testing.assert_allclose(w.coeffs, [1.0, 0.9, 0.2], atol=1e-15)


def test_truncated_inverse_support_bound():
    rf = RootFactorization(plus_roots=(0.5, -0.3), minus_roots=(0.4,))
    for r in (1, 3, 7):
        w = truncated_inverse(rf, r)
        assert len(w) <= r * 3 + 1


# ---------------------------------------------------------------------------
# inverse error
# ---------------------------------------------------------------------------


def test_inverse_error_single_root_exact_power():
    s = 0.5
    a = Filter(np.array([1.0, -s]))
    for r in range(1, 21):
        w = geometric_filter(s, r)
        assert abs(inverse_error(a, w) - s**r) < 1e-12


def test_inverse_error_exact_inverse_is_zero():
    a = Filter(np.array([1.0, -0.3]))
    assert inverse_error(a, inverse_filter(a)) < 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_inverse_error_closed_form_mixed_roots(seed):
    rng = np.random.Generator(np.random.Philox(seed))
    rf = RootFactorization(plus_roots=(float(rng.uniform(0.2, 0.9)),),
                           minus_roots=(float(rng.uniform(0.2, 0.9)),), c0=1.0)
    a = filter_from_roots(rf)
    for r in range(2, 9):
        direct = inverse_error(a, truncated_inverse(rf, r))
        closed = truncation_error_closed_form(rf, r)
        assert abs(direct - closed) < 1e-10


def test_inverse_error_decreasing_with_log_slope():
    rf = RootFactorization(plus_roots=(0.6,), minus_roots=(0.35,), c0=1.0)
    a = filter_from_roots(rf)
    rs = np.arange(5, 26)
    errs = np.array([inverse_error(a, truncated_inverse(rf, int(r))) for r in rs])
    assert np.all(np.diff(errs) < 0)
    slope = np.polyfit(rs, np.log(errs), 1)[0]
    assert abs(slope - math.log(0.6)) < 0.05 * abs(math.log(0.6))


# ---------------------------------------------------------------------------
# deltaness and angles
# ---------------------------------------------------------------------------


def test_deltaness_examples():
    assert deltaness(Filter(np.array([2.5]), 3)) == 0.0
    assert deltaness(Filter(np.array([0.5, 0.5]))) == 1.0
    assert deltaness(Filter(np.array([1.0, 0.3, 0.09]))) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        deltaness(Filter(np.zeros(2)))


@pytest.mark.parametrize("trial", range(10))
def test_deltaness_shift_scale_invariant_and_bounded(trial):
    v = random_filter(int(RNG.integers(2, 10)))
    d = deltaness(v)
    assert 0.0 <= d <= 1.0
    assert deltaness(v.shift(int(RNG.integers(-5, 5)))) == d
    assert deltaness(v.scale(3.7)) == pytest.approx(d, rel=1e-14)
    assert deltaness(v.scale(-0.2)) == pytest.approx(d, rel=1e-14)


def test_angle_examples():
    tan, cot = angle_to_delta(unit())
    assert tan == 0.0 and cot == math.inf
    s = 0.37
    tan, _ = angle_to_delta(Filter(np.array([1.0, s])))
    assert tan == pytest.approx(s)
    tan, cot = angle_to_delta(Filter(np.array([1.0, 3.0, 4.0])))
    assert tan == pytest.approx(math.sqrt(1 + 9) / 4)
    assert cot == pytest.approx(4 / math.sqrt(10))


# ---------------------------------------------------------------------------
# frequency margin
# ---------------------------------------------------------------------------


def test_wiener_margin_unit():
    lo, hi = wiener_margin(unit())
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)


def test_wiener_margin_noninvertible():
    lo, _ = wiener_margin(Filter(np.array([1.0, -1.0])), grid=512)
    assert lo < 1e-12


def test_wiener_margin_simple_filter():
    lo, hi = wiener_margin(Filter(np.array([1.0, -0.5])), grid=1024)
    assert lo == pytest.approx(0.5, abs=1e-9)
    assert hi == pytest.approx(1.5, abs=1e-9)


def test_wiener_margin_grid_validation():
    with pytest.raises(ValueError):
        wiener_margin(random_filter(10), grid=10)


# ---------------------------------------------------------------------------
# root finding
# ---------------------------------------------------------------------------


def test_find_roots_single():
    rf = find_roots(Filter(np.array([1.0, -0.7])))
    assert len(rf.plus_roots) == 1 and len(rf.minus_roots) == 0
    assert rf.plus_roots[0] == pytest.approx(0.7, abs=1e-10)


def test_find_roots_quadratic():
    # 1 - 0.9 z^-1 + 0.2 z^-2 = (1 - 0.5 z^-1)(1 - 0.4 z^-1)
    rf = find_roots(Filter(np.array([1.0, -0.9, 0.2])))
    mods = sorted(abs(r) for r in rf.plus_roots)
    assert mods == pytest.approx([0.4, 0.5], abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_find_roots_round_trip(seed):
    rng = np.random.Generator(np.random.Philox(100 + seed))
    plus = tuple(rng.uniform(-0.8, 0.8, size=int(rng.integers(1, 4))))
    minus = tuple(rng.uniform(-0.8, 0.8, size=int(rng.integers(0, 3))))
    plus = tuple(r for r in plus if abs(r) > 0.05) or (0.5,)
    minus = tuple(r for r in minus if abs(r) > 0.05)
    a = filter_from_roots(RootFactorization(plus_roots=plus, minus_roots=minus,
                                            c0=1.3))
    rf = find_roots(a)
    rebuilt = filter_from_roots(rf)
    assert rebuilt.offset == a.offset
    np.testing.assert_allclose(rebuilt.coeffs, a.coeffs, atol=1e-8)


def test_find_roots_unit_circle_rejected():
    from sparse_deconv.filters import RootFindingError
    with pytest.raises(RootFindingError):
        find_roots(Filter(np.array([1.0, -1.0])))


# ---------------------------------------------------------------------------
# numeric inversion
# ---------------------------------------------------------------------------


def test_inverse_filter_two_sided():
    a = Filter(np.array([0.3, 1.0, -0.2]), -1)
    ai = inverse_filter(a)
    assert inverse_error(a, ai) < 1e-12
    assert ai.start < 0 < ai.stop


def test_inverse_filter_noninvertible_raises():
    with pytest.raises(ValueError):
        inverse_filter(Filter(np.array([0.5, 1.0, 0.5])))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_filter_json_round_trip():
    f = random_filter(6, offset=-2)
    g = Filter.from_json(f.to_json())
    assert g.offset == f.offset
    np.testing.assert_array_equal(g.coeffs, f.coeffs)
