import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from embaug import numerics as nx
from embaug.numerics import Tensor

from gradcheck import OPS, check_gradients, op_rng


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_matches_finite_differences(name):
    build, make = OPS[name]
    rng = op_rng(name)
    worst = max(check_gradients(build, make(rng), rng) for _ in range(20))
    assert worst < 1e-5, f"{name}: {worst:.2e}"


def test_composite_gradient():
    rng = np.random.default_rng(0)

    def build(t):
        x, W, b = t
        h = nx.tanh(nx.add(nx.matmul(x, W), b))
        return nx.softmax(nx.leaky_relu(h), axis=1)

    for _ in range(20):
        inputs = [rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 5)), rng.uniform(-2, 2, 5)]
        assert check_gradients(build, inputs, rng) < 1e-5


class TestMatmul:
    def test_identity(self):
        A = np.arange(4.0).reshape(2, 2)
        np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(A)).data, A)

    def test_hand_product(self):
        out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_annihilator(self):
        A = np.random.default_rng(1).standard_normal((3, 3))
        np.testing.assert_array_equal(nx.matmul(Tensor(A), Tensor(np.zeros((3, 2)))).data, 0.0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(nx.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nx.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestElementwise:
    def test_values(self):
        assert nx.sigmoid(Tensor(0.0)).item() == 0.5
        assert nx.tanh(Tensor(0.0)).item() == 0.0
        assert nx.leaky_relu(Tensor(-2.0), 0.2).item() == pytest.approx(-0.4, abs=1e-15)

    def test_sigmoid_extremes_are_finite(self):
        s = nx.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [0.0, 1.0])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(nx.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-12)

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_normalised_and_shift_invariant(self, x, c):
        s = nx.softmax(Tensor(x)).data
        assert np.all(s > 0) or x.size == 1
        assert abs(s.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(nx.softmax(Tensor(x + c)).data, s, atol=1e-12)


class TestCosine:
    def test_values(self):
        u = np.array([0.3, -1.2, 2.0])
        assert nx.cosine_similarity(Tensor(u), Tensor(u)).item() == pytest.approx(1.0, abs=1e-15)
        assert nx.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
        assert nx.cosine_similarity(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item() == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_degenerate_vector(self):
        with pytest.raises(nx.DegenerateVectorError) as exc:
            nx.cosine_similarity(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[1.0, 1.0], [1.0, 1.0]]))
        assert exc.value.index == 1

    @given(arrays(np.float64, 6, elements=st.floats(-10, 10)), arrays(np.float64, 6, elements=st.floats(-10, 10)),
           st.floats(0.01, 100), st.floats(0.01, 100))
    @settings(max_examples=200, deadline=None)
    def test_scale_invariance(self, u, v, a, b):
        if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
            return
        c1 = nx.cosine_similarity(Tensor(u), Tensor(v)).item()
        c2 = nx.cosine_similarity(Tensor(a * u), Tensor(b * v)).item()
        assert -1 - 1e-12 <= c1 <= 1 + 1e-12
        assert abs(c1 - c2) < 1e-12


class TestBCE:
    def test_values(self):
        assert nx.bce(Tensor(0.5), 1).item() == pytest.approx(math.log(2), abs=1e-15)
        assert nx.bce(Tensor(1 - 1e-7), 1).item() == pytest.approx(0.0, abs=1e-6)
        assert nx.bce(Tensor(0.9), 0).item() == pytest.approx(-math.log(0.1), abs=1e-12)

    def test_clamped_inputs_stay_finite(self):
        out = nx.bce(Tensor([0.0, 1.0]), [1.0, 0.0]).data
        np.testing.assert_allclose(out, -math.log(1e-7), rtol=1e-6)


class TestBackward:
    def test_linear_sum(self):
        x = np.array([[1.0], [2.0], [3.0]])
        W = Tensor(np.random.default_rng(0).standard_normal((2, 3)), requires_grad=True)
        nx.backward(nx.sum(nx.matmul(W, Tensor(x))))
        np.testing.assert_allclose(W.grad, np.outer(np.ones(2), x[:, 0]))

    def test_constant_path_gives_zero_grads(self):
        W = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = nx.sum(Tensor(np.ones((2, 2))))
        nx.backward(loss)
        np.testing.assert_array_equal(W.grad, 0.0)

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(nx.ContractError):
            nx.backward(nx.mul(x, 2.0))

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
        y = nx.mul(x, x)
        nx.backward(nx.sum(nx.add(y, y)))
        np.testing.assert_allclose(x.grad, 4 * x.data)

    def test_repeat_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            W = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
            x = Tensor(rng.standard_normal((5, 4)))
            loss = nx.mean(nx.tanh(nx.matmul(x, W)))
            nx.backward(loss)
            return loss.data.copy(), W.grad.copy()

        (l1, g1), (l2, g2) = run(), run()
        assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()
