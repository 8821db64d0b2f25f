import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmmfield.field import (
    EXP_CUTOFF,
    FieldSample,
    GaussianKernel,
    eval_kernel,
    eval_kernel_gradient,
    eval_mixture,
    eval_mixture_batch,
    kernels_to_array,
    smoothstep,
    smoothstep_derivative,
)

from .oracles import central_diff, kernel_value

E_HALF = 0.6065306597126334  # exp(-0.5)


def random_kernel(rng):
    return GaussianKernel(
        float(rng.choice([-1, 1]) * rng.uniform(0.1, 2.0)),
        tuple(rng.uniform(-1, 1, 3)),
        tuple(rng.uniform(0.2, 1.5, 3)),
    )


class TestKernel:
    def test_value_at_center(self):
        assert eval_kernel(GaussianKernel(2.5, (1, 2, 3), (1, 1, 1)), (1, 2, 3)) == 2.5

    def test_unit_offset(self):
        assert eval_kernel(GaussianKernel(1.0, (0, 0, 0), (1, 1, 1)), (1, 0, 0)) == pytest.approx(E_HALF, abs=1e-15)

    def test_anisotropic_negative(self):
        v = eval_kernel(GaussianKernel(-1.0, (0, 0, 0), (2, 1, 1)), (2, 0, 0))
        assert v == pytest.approx(-E_HALF, abs=1e-15)

    def test_gradient_at_center_is_zero(self, rng):
        k = random_kernel(rng)
        assert np.all(eval_kernel_gradient(k, k.center) == 0.0)

    def test_gradient_unit_offset(self):
        g = eval_kernel_gradient(GaussianKernel(1.0, (0, 0, 0), (1, 1, 1)), (1, 0, 0))
        np.testing.assert_allclose(g, [-E_HALF, 0, 0], atol=1e-15)

    def test_cutoff_is_zero_beyond_exponent_20(self):
        k = GaussianKernel(1.0, (0, 0, 0), (1, 1, 1))
        assert eval_kernel(k, (math.sqrt(2 * EXP_CUTOFF) + 1e-9, 0, 0)) == 0.0
        assert eval_kernel(k, (math.sqrt(2 * EXP_CUTOFF) - 1e-3, 0, 0)) > 0.0

    @pytest.mark.parametrize(
        "w, ls", [(0.0, (1, 1, 1)), (float("nan"), (1, 1, 1)), (1.0, (1, 0, 1)), (1.0, (1, -2, 1))]
    )
    def test_invalid_kernels_rejected(self, w, ls):
        with pytest.raises(ValueError):
            GaussianKernel(w, (0, 0, 0), ls)

    def test_row_round_trip(self, rng):
        k = random_kernel(rng)
        assert GaussianKernel.from_row(k.as_row()) == k

    def test_value_matches_independent_formula(self, rng):
        for _ in range(200):
            k = random_kernel(rng)
            x = rng.uniform(-2, 2, 3)
            ref = kernel_value(k.weight, k.center, k.length_scales, x)
            # the cutoff drops tails below exp(-20)|w|
            assert eval_kernel(k, x) == pytest.approx(ref, rel=1e-14, abs=2.1e-9 * abs(k.weight))

    def test_gradient_matches_finite_differences_1000(self, rng):
        worst = 0.0
        for _ in range(1000):
            k = random_kernel(rng)
            x = np.asarray(k.center) + rng.normal(scale=0.7, size=3)
            g = eval_kernel_gradient(k, x)
            fd = central_diff(lambda p: eval_kernel(k, p), x, 1e-5)
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-3))
        assert worst < 1e-5


class TestMixture:
    def test_empty(self):
        v, g = eval_mixture([], (0.3, 0.1, 0.2))
        assert v == 0.0 and np.all(g == 0.0)

    def test_duplicate_doubles(self, rng):
        k = random_kernel(rng)
        x = rng.uniform(-1, 1, 3)
        v1, g1 = eval_mixture([k], x)
        v2, g2 = eval_mixture([k, k], x)
        assert v2 == 2 * v1
        np.testing.assert_array_equal(g2, 2 * g1)

    def test_sum_of_kernels(self, rng):
        ks = [random_kernel(rng) for _ in range(5)]
        for x in rng.uniform(-1.5, 1.5, (100, 3)):
            v, _ = eval_mixture(ks, x)
            ref = sum(eval_kernel(k, x) for k in ks)
            assert v == pytest.approx(ref, rel=1e-12, abs=1e-300)

    def test_batch_matches_single(self, rng):
        ks = [random_kernel(rng) for _ in range(7)]
        xs = rng.uniform(-1, 1, (50, 3))
        vb, gb = eval_mixture_batch(ks, xs)
        for i, x in enumerate(xs):
            v, g = eval_mixture(ks, x)
            assert vb[i] == v
            np.testing.assert_array_equal(gb[i], g)

    def test_kernels_to_array_shapes(self):
        assert kernels_to_array([]).shape == (0, 7)
        assert kernels_to_array(np.zeros(14)).shape == (2, 7)

    def test_invalid_sample_sentinel(self):
        s = FieldSample.invalid()
        assert not s.valid and s.value == 0.0 and np.all(s.gradient == 0.0)


kernel_rows = st.tuples(
    st.floats(0.05, 3.0) | st.floats(-3.0, -0.05),
    st.floats(-1, 1),
    st.floats(-1, 1),
    st.floats(-1, 1),
    st.floats(0.1, 2.0),
    st.floats(0.1, 2.0),
    st.floats(0.1, 2.0),
)
point = st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))


def _kern(row):
    return GaussianKernel(row[0], row[1:4], row[4:7])


@given(st.lists(kernel_rows, max_size=6), st.lists(kernel_rows, max_size=6), point)
def test_linearity(a, b, x):
    ka, kb = [_kern(r) for r in a], [_kern(r) for r in b]
    va, ga = eval_mixture(ka, x)
    vb, gb = eval_mixture(kb, x)
    v, g = eval_mixture(ka + kb, x)
    scale = sum(abs(r[0]) for r in a + b) + 1e-300
    assert abs(v - (va + vb)) <= 1e-12 * scale
    np.testing.assert_allclose(g, ga + gb, rtol=0, atol=1e-12 * scale * 100)


@given(st.lists(kernel_rows, min_size=1, max_size=8), point, st.randoms(use_true_random=False))
def test_reordering_invariance(rows, x, r):
    ks = [_kern(row) for row in rows]
    shuffled = ks[:]
    r.shuffle(shuffled)
    v1, _ = eval_mixture(ks, x)
    v2, _ = eval_mixture(shuffled, x)
    assert abs(v1 - v2) <= 1e-12 * (sum(abs(k.weight) for k in ks))


class TestSmoothstep:
    @pytest.mark.parametrize("t, expected", [(0.0, 0.0), (1.0, 1.0), (0.5, 0.5), (0.25, 0.15625)])
    def test_values(self, t, expected):
        assert smoothstep(t) == pytest.approx(expected, abs=1e-15)

    def test_clamps(self):
        assert smoothstep(-0.3) == 0.0 and smoothstep(1.7) == 1.0

    def test_flat_endpoints(self):
        h = 1e-6
        assert abs((smoothstep(h) - smoothstep(0.0)) / h) < 1e-4
        assert abs((smoothstep(1.0) - smoothstep(1.0 - h)) / h) < 1e-4

    def test_derivative(self):
        t = np.linspace(0.01, 0.99, 33)
        fd = (smoothstep(t + 1e-7) - smoothstep(t - 1e-7)) / 2e-7
        np.testing.assert_allclose(smoothstep_derivative(t), fd, atol=1e-6)
        assert smoothstep_derivative(0.0) == 0.0 and smoothstep_derivative(1.0) == 0.0

    @given(st.floats(0, 1))
    def test_symmetry(self, t):
        assert smoothstep(t) + smoothstep(1 - t) == pytest.approx(1.0, abs=1e-15)
