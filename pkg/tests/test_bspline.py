import numpy as np
import pytest
import scipy.interpolate as si
from hypothesis import given, settings, strategies as st

from oracles import all_functions, spline_dimension
from rmiga.bspline import (
    KnotVector,
    continuity_at_breakpoint,
    evaluate_basis,
    evaluate_basis_array,
    make_open_knot_vector,
)
from rmiga.exceptions import ConfigurationError, DomainError


def full_values(kv, x, deriv=0):
    out = np.zeros(kv.dim)
    ev = evaluate_basis(kv, x, deriv)
    for j, v in zip(ev.indices, ev.derivatives[deriv]):
        if 0 <= j < kv.dim:
            out[j] = v
    return out


class TestKnotVector:
    def test_single_indicator(self):
        kv = make_open_knot_vector(1, 0, -1)
        assert kv.knots.tolist() == [0.0, 1.0]
        assert kv.dim == 1

    def test_quadratic_two_elements(self):
        kv = make_open_knot_vector(2, 2, 1)
        assert kv.knots.tolist() == [0, 0, 0, 0.5, 1, 1, 1]
        assert kv.dim == 4

    def test_broken_quadratic(self):
        kv = make_open_knot_vector(5, 2, -1)
        assert kv.multiplicities[1:-1].tolist() == [3] * 4
        assert kv.dim == 15

    @pytest.mark.parametrize("k", [-2, 2, 5])
    def test_rejects_bad_continuity(self, k):
        with pytest.raises(ConfigurationError):
            make_open_knot_vector(3, 2, k)

    def test_rejects_bad_mesh(self):
        with pytest.raises(ConfigurationError):
            make_open_knot_vector(0, 2, 1)
        with pytest.raises(ConfigurationError):
            make_open_knot_vector(2, 2, 1, (1.0, 1.0))

    def test_rejects_malformed(self):
        with pytest.raises(ConfigurationError):
            KnotVector([0, 1, 0.5, 2], 1)
        with pytest.raises(ConfigurationError):
            KnotVector([0, 0, 0, 0, 1], 2)

    @given(n=st.integers(1, 8), p=st.integers(0, 5), data=st.data())
    def test_dimension_formula(self, n, p, data):
        k = data.draw(st.integers(-1, p - 1)) if p > 0 else -1
        kv = make_open_knot_vector(n, p, k)
        assert kv.dim == kv.knots.size - p - 1 == spline_dimension(n, p, k)
        assert kv.is_open


class TestEvaluate:
    def test_constant(self):
        kv = KnotVector([0.0, 1.0], 0)
        assert evaluate_basis(kv, 0.5).values.tolist() == [1.0]

    def test_unclamped_quadratic(self):
        kv = KnotVector([0.0, 1.0, 2.0, 3.0], 2)
        ev = evaluate_basis(kv, 1.5)
        assert ev.value_of(0) == pytest.approx(0.75, abs=1e-15)

    def test_partition_two_elements(self):
        kv = make_open_knot_vector(2, 2, 1)
        for x in np.linspace(0, 1, 37):
            assert evaluate_basis(kv, x).values.sum() == pytest.approx(1.0, abs=1e-14)

    def test_domain_error(self):
        kv = make_open_knot_vector(2, 2, 1)
        with pytest.raises(DomainError):
            evaluate_basis(kv, 1.0 + 1e-9)
        with pytest.raises(DomainError):
            evaluate_basis(kv, -0.1)

    def test_right_end_uses_left_limit(self):
        kv = make_open_knot_vector(3, 2, 1)
        assert full_values(kv, 1.0).tolist() == [0, 0, 0, 0, 1.0]

    def test_right_limit_at_repeated_knot(self):
        kv = make_open_knot_vector(2, 1, -1)
        v = full_values(kv, 0.5)
        # broken linear: the right element's left function is 1 at x = 0.5
        assert v.tolist() == [0, 0, 1.0, 0]

    def test_high_derivatives_are_zero(self):
        kv = make_open_knot_vector(3, 2, 1)
        ev = evaluate_basis(kv, 0.3, 4)
        assert np.all(ev.derivatives[3:] == 0)

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(1, 5),
        p=st.integers(0, 5),
        x=st.floats(0, 1),
        data=st.data(),
    )
    def test_matches_global_recursion(self, n, p, x, data):
        k = data.draw(st.integers(-1, p - 1)) if p > 0 else -1
        kv = make_open_knot_vector(n, p, k)
        np.testing.assert_allclose(full_values(kv, x), all_functions(kv.knots, p, x), atol=1e-13)

    @settings(max_examples=60, deadline=None)
    @given(
        p=st.integers(0, 5),
        knots=st.lists(st.floats(0, 10, allow_nan=False), min_size=8, max_size=14),
        u=st.floats(0, 1),
    )
    def test_partition_and_nonnegativity(self, p, knots, u):
        t = np.sort(np.round(np.asarray(knots), 3))
        t = np.concatenate([[t[0]] * (p + 1), t, [t[-1] + 1] * (p + 1)])
        _, counts = np.unique(t, return_counts=True)
        if counts.max() > p + 1:
            return
        kv = KnotVector(t, p)
        x = kv.interval[0] + u * (kv.interval[1] - kv.interval[0])
        v = full_values(kv, x)
        assert v.sum() == pytest.approx(1.0, abs=1e-12)
        assert v.min() >= -1e-15

    @given(p=st.integers(1, 4), x=st.floats(0, 1))
    def test_local_support(self, p, x):
        kv = make_open_knot_vector(4, p, p - 1)
        v = full_values(kv, x)
        t = kv.knots
        for j in range(kv.dim):
            if not t[j] <= x <= t[j + p + 1]:
                assert v[j] == 0.0

    @pytest.mark.parametrize("p", [1, 2, 3, 4, 5])
    def test_derivatives_vs_finite_differences(self, p):
        rng = np.random.default_rng(p)
        kv = make_open_knot_vector(4, p, p - 1)
        xs = rng.uniform(0.01, 0.99, 100)
        step = 1e-6
        _, f0, d0 = evaluate_basis_array(kv, xs, 2)
        _, fp, dp = evaluate_basis_array(kv, xs + step, 2)
        _, fm, dm = evaluate_basis_array(kv, xs - step, 2)
        ok = (f0 == fp) & (f0 == fm)  # same span on both sides
        fd1 = (dp[:, 0] - dm[:, 0]) / (2 * step)
        np.testing.assert_allclose(d0[ok, 1], fd1[ok], rtol=1e-5, atol=1e-5 * np.abs(d0[ok, 1]).max())
        if p >= 2:
            fd2 = (dp[:, 1] - dm[:, 1]) / (2 * step)
            np.testing.assert_allclose(
                d0[ok, 2], fd2[ok], rtol=1e-5, atol=1e-5 * np.abs(d0[ok, 2]).max()
            )

    @pytest.mark.parametrize("p,k", [(2, 1), (3, 1), (3, 0), (4, 2)])
    def test_derivatives_match_scipy(self, p, k):
        kv = make_open_knot_vector(3, p, k)
        xs = np.linspace(0, 1, 41)
        for j in range(kv.dim):
            c = np.zeros(kv.dim)
            c[j] = 1.0
            ref = si.BSpline(kv.knots, c, p, extrapolate=False)
            for d in range(0, k + 1):
                want = ref.derivative(d)(xs[1:-1]) if d else ref(xs[1:-1])
                got = [evaluate_basis(kv, x, d).value_of(j, d) for x in xs[1:-1]]
                np.testing.assert_allclose(got, want, atol=1e-11)


class TestContinuity:
    def test_maximal(self):
        assert continuity_at_breakpoint(make_open_knot_vector(3, 2, 1), 1) == 1

    def test_broken(self):
        assert continuity_at_breakpoint(make_open_knot_vector(3, 2, -1), 1) == -1

    def test_cubic_double_knot(self):
        kv = make_open_knot_vector(2, 3, 1)
        assert continuity_at_breakpoint(kv, 1) == 1
        # one-sided derivative limits agree up to order 1, not order 2
        eps = 1e-9
        for j in range(kv.dim):
            for d in (0, 1):
                lo = evaluate_basis(kv, 0.5 - eps, d).value_of(j, d)
                hi = evaluate_basis(kv, 0.5, d).value_of(j, d)
                assert lo == pytest.approx(hi, abs=1e-6)
        jumps = [
            abs(evaluate_basis(kv, 0.5 - eps, 2).value_of(j, 2) - evaluate_basis(kv, 0.5, 2).value_of(j, 2))
            for j in range(kv.dim)
        ]
        assert max(jumps) > 1.0

    def test_rejects_boundary(self):
        kv = make_open_knot_vector(3, 2, 1)
        for idx in (0, 3):
            with pytest.raises(ConfigurationError):
                continuity_at_breakpoint(kv, idx)
