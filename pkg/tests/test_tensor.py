import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ovvis import tensor as T
from ovvis.errors import ContractError, NumericError, ShapeError
from ovvis.gradcheck import grad_check
from ovvis.selftest import primitive_cases
from ovvis.tensor import Tensor, no_grad

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


def mp_softmax(row):
    mpmath.mp.dps = 50
    ex = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
    s = mpmath.fsum(ex)
    return [float(e / s) for e in ex]


class TestForward:
    def test_softmax_matches_high_precision(self):
        x = np.array([[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0], [0.5, 0.5, 0.5]])
        got = T.softmax(Tensor(x)).data
        for row, g in zip(x, got):
            np.testing.assert_allclose(g, mp_softmax(row), rtol=1e-14, atol=1e-300)

    def test_softmax_of_constant_row_is_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor(np.zeros((2, 4)))).data, 0.25)

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)), elements=finite))
    def test_softmax_rows_sum_to_one(self, x):
        s = T.softmax(Tensor(x)).data
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)

    def test_sigmoid_is_stable_at_extremes(self):
        out = T.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_layer_norm_statistics(self):
        x = np.random.default_rng(0).standard_normal((4, 16)) * 3 + 2
        y = T.layer_norm(Tensor(x)).data
        np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-4)

    def test_l2_normalize_zero_row_stays_zero(self):
        y = T.l2_normalize(Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]))).data
        np.testing.assert_array_equal(y[0], [0.0, 0.0])
        np.testing.assert_allclose(y[1], [0.6, 0.8])

    def test_gelu_matches_tanh_formula_in_high_precision(self):
        mpmath.mp.dps = 40
        for v in (-3.0, -0.5, 0.0, 0.7, 2.5):
            x = mpmath.mpf(v)
            ref = 0.5 * x * (1 + mpmath.tanh(mpmath.sqrt(2 / mpmath.pi) * (x + mpmath.mpf("0.044715") * x ** 3)))
            assert T.gelu(Tensor(np.array(v))).data == pytest.approx(float(ref), rel=1e-14, abs=1e-300)

    def test_getitem_with_repeated_index_accumulates_grad(self):
        x = Tensor(np.arange(3.0), requires_grad=True)
        x[np.array([0, 0, 2])].sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


class TestBroadcastRules:
    @pytest.mark.parametrize("sa,sb", [((3, 4), (3, 4)), ((3, 4), ()), ((3, 4), (4,)), ((4,), (2, 3, 4))])
    def test_allowed(self, sa, sb):
        assert T.add(Tensor(np.ones(sa)), Tensor(np.ones(sb))).shape == np.broadcast_shapes(sa, sb)

    @pytest.mark.parametrize("sa,sb", [((3, 4), (3,)), ((3, 4), (1, 4)), ((2, 3), (3, 2))])
    def test_rejected(self, sa, sb):
        with pytest.raises(ShapeError):
            T.mul(Tensor(np.ones(sa)), Tensor(np.ones(sb)))

    def test_matmul_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_row_vector_gradient_is_summed(self):
        a = Tensor(np.ones((3, 2)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (a * b).sum().backward()
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])
        np.testing.assert_array_equal(a.grad, [[1, 2]] * 3)


class TestTape:
    def test_non_finite_output_raises(self):
        with pytest.raises(NumericError):
            T.log(Tensor(np.array([0.0])))
        with pytest.raises(NumericError):
            T.exp(Tensor(np.array([1000.0])))

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_item_needs_single_element(self):
        with pytest.raises(ContractError):
            Tensor(np.ones(2)).item()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad and y._node is None

    def test_gradients_accumulate_across_backward_calls(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * x).sum().backward()
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_shared_subexpression_gets_both_paths(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x
        (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad == pytest.approx(6.0 + 27.0)

    def test_graph_is_in_creation_order(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = T.exp(x)
        z = T.sigmoid(y).sum()
        seqs = [n.seq for n in T.graph(z)]
        assert seqs == sorted(seqs) and len(seqs) == 3


@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(seed):
    rng = np.random.default_rng(seed)
    for name, fn, inputs in primitive_cases(rng):
        assert grad_check(fn, *inputs, seed=seed) < 1e-6, name


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 5)),
                  elements=st.floats(-3, 3, allow_nan=False)))
def test_softmax_gradient_property(x):
    assert grad_check(T.softmax, Tensor(x)) < 1e-5
