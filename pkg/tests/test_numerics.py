import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protodec.errors import NumericError
from protodec.numerics import (AdamState, adam_step, as_matrix, cosine_sim,
                               matmul, softmax, unit_rows)


class TestAsMatrix:
    def test_coerces_and_checks_shape(self):
        m = as_matrix([[1, 2], [3, 4]], rows=2, cols=2)
        assert m.dtype == np.float64
        with pytest.raises(ValueError):
            as_matrix([[1, 2]], rows=2)
        with pytest.raises(ValueError):
            as_matrix([1, 2, 3])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            as_matrix([[1.0, np.inf]])


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(2, 5))
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)

    def test_hand_checked_2x2(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]),
                     np.array([[1.0], [1.0]]))
        np.testing.assert_array_equal(out, [[3.0], [7.0]])

    def test_against_triple_loop_oracle(self, rng):
        a = rng.normal(size=(5, 7))
        b = rng.normal(size=(7, 3))
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(7):
                    expected[i, j] += a[i, k] * b[k, j]
        assert np.abs(matmul(a, b) - expected).max() < 1e-6

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            matmul(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))

    def test_associativity(self, rng):
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 5))
            c = rng.normal(size=(5, 2))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            denom = max(1.0, np.abs(left).max())
            assert np.abs(left - right).max() / denom < 1e-5


class TestSoftmax:
    def test_uniform_on_constant_input(self):
        np.testing.assert_allclose(softmax(np.zeros(3)), np.full(3, 1 / 3),
                                   atol=1e-15)

    def test_no_overflow_on_large_gap(self):
        out = softmax(np.array([1000.0, 0.0]))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_matches_direct_formula(self):
        v = np.array([1.0, 2.0, 3.0])
        expected = np.exp(v) / np.exp(v).sum()
        np.testing.assert_allclose(softmax(v), expected, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0, np.nan]))
        with pytest.raises(ValueError):
            softmax(np.array([1.0]), temperature=0.0)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
    @settings(max_examples=200, deadline=None)
    def test_is_probability_vector(self, values):
        out = softmax(np.array(values))
        assert abs(out.sum() - 1.0) < 1e-9
        assert np.all(out >= 0.0)

    def test_order_preserving(self, rng):
        v = rng.normal(size=12)
        assert np.array_equal(np.argsort(softmax(v)), np.argsort(v))


class TestCosineSim:
    def test_self_similarity(self, rng):
        a = rng.normal(size=6)
        assert cosine_sim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_antipodal(self, rng):
        a = rng.normal(size=6)
        assert cosine_sim(a, -a) == pytest.approx(-1.0, abs=1e-12)

    def test_45_degrees(self):
        assert cosine_sim([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / np.sqrt(2))

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_sim([0.0, 0.0], [1.0, 0.0])

    def test_scale_invariance(self, rng):
        for _ in range(50):
            a = rng.normal(size=8)
            b = rng.normal(size=8)
            alpha = float(rng.uniform(0.01, 100))
            assert abs(cosine_sim(alpha * a, b) - cosine_sim(a, b)) < 1e-9

    def test_bounded(self, rng):
        for _ in range(100):
            a = rng.normal(size=4)
            b = rng.normal(size=4)
            assert -1.0 <= cosine_sim(a, b) <= 1.0


class TestUnitRows:
    def test_normalizes(self, rng):
        m = rng.normal(size=(4, 6))
        np.testing.assert_allclose(np.linalg.norm(unit_rows(m), axis=1), 1.0)

    def test_zero_row_rejected(self):
        with pytest.raises(ValueError, match="zero norm"):
            unit_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestAdam:
    def test_zero_gradient_is_identity(self, rng):
        param = rng.normal(size=(3, 4))
        state = AdamState.init(param, lr=0.1)
        current = param
        for expected_step in range(1, 6):
            current, state = adam_step(current, np.zeros_like(param), state)
            assert state.step == expected_step
        np.testing.assert_array_equal(current, param)

    def test_one_step_moves_against_gradient(self):
        # first bias-corrected step has magnitude ~= lr regardless of |grad|
        param = np.array([1.0])
        state = AdamState.init(param, lr=0.1)
        new, _ = adam_step(param, np.array([2.0]), state)
        delta = new[0] - param[0]
        assert delta < 0
        assert abs(abs(delta) - 0.1) < 1e-7

    def test_descends_quadratic(self):
        # d/dx x^2 = 2x from x=1: |x| shrinks every step for 10 steps
        x = np.array([1.0])
        state = AdamState.init(x, lr=0.1)
        path = [1.0]
        for _ in range(10):
            x, state = adam_step(x, 2 * x, state)
            path.append(abs(float(x[0])))
        assert all(path[i + 1] < path[i] for i in range(10))
        assert path[-1] < 0.1

    def test_shape_mismatch(self, rng):
        param = rng.normal(size=(2, 2))
        state = AdamState.init(param)
        with pytest.raises(ValueError):
            adam_step(param, rng.normal(size=(3, 2)), state)

    def test_non_finite_gradient(self, rng):
        param = rng.normal(size=3)
        state = AdamState.init(param)
        with pytest.raises(NumericError):
            adam_step(param, np.array([1.0, np.inf, 0.0]), state)

    def test_inputs_not_mutated(self, rng):
        param = rng.normal(size=4)
        grad = rng.normal(size=4)
        state = AdamState.init(param)
        snapshot = param.copy()
        adam_step(param, grad, state)
        np.testing.assert_array_equal(param, snapshot)
        assert state.step == 0
