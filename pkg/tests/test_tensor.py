"""Tensor core: elementwise/map/reduce ops, backward, and gradient checks."""

import numpy as np
import pytest

from julesz.tensor import (DomainError, GraphError, NonFiniteError, ShapeError,
                           Tensor, concat, grad_check, set_finite_checks)


class TestElementwise:
    def test_add(self):
        out = Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_mul_by_one_is_bitwise_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal(17))
        out = x * 1.0
        assert np.array_equal(out.data, x.data)

    def test_sub_gradients_are_plus_minus_one(self):
        a, b = Tensor([5.0]), Tensor([5.0])
        out = (a - b).sum()
        np.testing.assert_array_equal(out.data, 0.0)
        out.backward()
        np.testing.assert_array_equal(a.grad, [1.0])
        np.testing.assert_array_equal(b.grad, [-1.0])

    def test_scalar_operand(self):
        x = Tensor([2.0, 4.0])
        np.testing.assert_array_equal((x / 2).data, [1.0, 2.0])
        np.testing.assert_array_equal((3 * x).data, [6.0, 12.0])
        np.testing.assert_array_equal((1 - x).data, [-1.0, -3.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 2))) * Tensor(np.ones((4,)))

    def test_division_by_zero_reported(self):
        with pytest.raises(DomainError, match="zero"):
            Tensor([1.0]) / Tensor([0.0])
        with pytest.raises(DomainError):
            Tensor([1.0, 1.0]) / Tensor([2.0, 0.0])
        with pytest.raises(DomainError):
            1.0 / Tensor([0.0, 1.0])

    def test_div_gradient(self):
        a, b = Tensor([6.0]), Tensor([2.0])
        out = (a / b).sum()
        out.backward()
        np.testing.assert_allclose(a.grad, [0.5])
        np.testing.assert_allclose(b.grad, [-1.5])


class TestMaps:
    def test_relu(self):
        out = Tensor([-1.0, 0.0, 2.0]).relu()
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_relu_gradient_mask(self):
        x = Tensor([-1.0, 0.0, 2.0])
        x.relu().sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_log_one_is_zero(self):
        assert Tensor([1.0]).log().data[0] == 0.0

    def test_square_value_and_gradient(self):
        x = Tensor([3.0])
        y = x.square().sum()
        assert y.item() == 9.0
        y.backward()
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            Tensor([0.0]).log()
        with pytest.raises(DomainError):
            Tensor([-1.0]).sqrt()
        with pytest.raises(DomainError):
            Tensor([0.0]).sqrt()

    def test_neg(self):
        x = Tensor([1.0, -2.0])
        out = -x
        np.testing.assert_array_equal(out.data, [-1.0, 2.0])


class TestReduce:
    def test_mean_all(self):
        out = Tensor([[1.0, 3.0], [5.0, 7.0]]).mean()
        assert out.item() == 4.0

    def test_sum_over_singleton_axis_keeps_values(self):
        x = Tensor(np.arange(6.0).reshape(2, 1, 3))
        out = x.sum(axes=1)
        np.testing.assert_array_equal(out.data, x.data[:, 0, :])

    def test_mean_backward_is_uniform(self):
        x = Tensor([[0.0, 0.0], [2.0, 2.0]])
        m = x.mean()
        assert m.item() == 1.0
        m.backward()
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 0.25))

    def test_empty_reduction_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 0))).sum(axes=1)

    def test_bad_axis_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 2))).sum(axes=5)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(12.0).reshape(3, 4))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_norm_squared_gives_x(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 5)))
        (x.square().sum() * 0.5).backward()
        np.testing.assert_array_equal(x.grad, x.data)

    def test_leaf_used_twice_accumulates(self):
        x = Tensor([2.0])
        y = (x * 3.0).sum() + (x * 5.0).sum()
        y.backward()
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(GraphError):
            Tensor([1.0, 2.0]).backward()

    def test_double_backward_rejected(self):
        x = Tensor([1.0])
        y = x.sum()
        y.backward()
        with pytest.raises(GraphError):
            y.backward()

    def test_composite_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal((2, 4, 8, 8)) + 3.0  # keep log/sqrt in domain

        def f(x):
            return ((x.square() + 1.0).sqrt().log() * 0.7).mean()

        report = grad_check(f, Tensor(x0), name="composite")
        assert report.passed, report.line()

    def test_forward_determinism_bitwise(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((3, 5))

        def compute():
            x = Tensor(data)
            return ((x * 2.0 + 1.0).square().mean(axes=0)).data.copy()

        assert np.array_equal(compute(), compute())


class TestStructuralOps:
    def test_reshape_roundtrip_gradient(self):
        x = Tensor(np.arange(6.0))
        y = x.reshape((2, 3)).sum()
        y.backward()
        np.testing.assert_array_equal(x.grad, np.ones(6))

    def test_expand_gradient_sums(self):
        x = Tensor(np.ones((2, 1)))
        y = x.expand((2, 5)).sum()
        y.backward()
        np.testing.assert_array_equal(x.grad, np.full((2, 1), 5.0))

    def test_expand_shape_errors(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 2))).expand((2, 5))
        with pytest.raises(ShapeError):
            Tensor(np.ones((2,))).expand((2, 2))

    def test_select_scatters_gradient(self):
        x = Tensor(np.arange(6.0).reshape(3, 2))
        x.select(1).sum().backward()
        expected = np.zeros((3, 2))
        expected[1] = 1.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_concat_splits_gradient(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 3)))
        out = concat([a, b], axis=1)
        assert out.shape == (2, 5)
        (out * 2.0).sum().backward()
        np.testing.assert_array_equal(a.grad, np.full((2, 2), 2.0))
        np.testing.assert_array_equal(b.grad, np.full((2, 3), 2.0))

    def test_grad_check_on_structural_composite(self):
        rng = np.random.default_rng(4)
        x0 = rng.standard_normal((3, 4))

        def f(x):
            left = x.select(0) + x.select(2)
            return concat([left.reshape((1, 4)), x.select(1).reshape((1, 4))], axis=0).square().sum()

        assert grad_check(f, Tensor(x0), name="structural").passed


class TestFiniteChecks:
    def test_nan_result_raises(self):
        big = Tensor([1e308])
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            big * 1e308

    def test_toggle(self):
        prev = set_finite_checks(False)
        try:
            with np.errstate(over="ignore"):
                out = Tensor([1e308]) * 1e308   # silently inf while disabled
            assert np.isinf(out.data[0])
        finally:
            set_finite_checks(prev)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            Tensor([1e308]) * 1e308


class TestGradCheckHarness:
    def test_exact_linear_case(self):
        rng = np.random.default_rng(5)
        report = grad_check(lambda x: x.mean(), Tensor(rng.standard_normal((4, 4))),
                            name="mean")
        assert report.max_rel_err < 1e-8

    def test_unreachable_input_rejected(self):
        with pytest.raises(GraphError):
            grad_check(lambda x: Tensor([1.0]).sum(), Tensor([1.0]))

    def test_impossible_tolerance_fails(self):
        # Negative control: FD truncation error alone exceeds 1e-12.
        rng = np.random.default_rng(6)
        report = grad_check(lambda x: (x.square().square()).sum(),
                            Tensor(rng.standard_normal(8) + 2.0), tol=1e-12)
        assert not report.passed
