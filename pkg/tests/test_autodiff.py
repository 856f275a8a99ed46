"""Differentiation core: op semantics, gradient checks, graph behavior."""

import numpy as np
import pytest

from mgfusion import autodiff as ad
from mgfusion.errors import ShapeError

from oracles import assert_grad_close, finite_difference


def _away_from_kinks(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    x[np.abs(x) < margin] += 2 * margin
    return x


def _gradcheck(build, params, rtol=1e-3):
    """FD-check d(weighted sum of build())/d(params)."""
    rng = np.random.default_rng(99)
    probe = rng.normal(size=build().value.shape)

    def loss_fn():
        return float((build().value * probe).sum())

    numeric = finite_difference(loss_fn, params)
    out = build()
    loss = ad.summation(ad.mul(out, ad.constant(probe)))
    ad.zero_grad(params)
    ad.backprop(loss)
    for p in params:
        assert_grad_close(p.grad, numeric[p.name], rtol=rtol)


class TestForwardSemantics:
    def test_relu_values(self):
        out = ad.relu(ad.constant([[-1.0, 2.0]]))
        np.testing.assert_array_equal(out.value, [[0.0, 2.0]])

    def test_leaky_relu_slope(self):
        out = ad.leaky_relu(ad.constant([[-1.0]]), slope=0.01)
        np.testing.assert_allclose(out.value, [[-0.01]])

    def test_matmul_shape(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((3, 1)))
        assert ad.matmul(a, b).value.shape == (2, 1)

    def test_matmul_shape_error_names_op_and_shapes(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((2, 1)))
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 1\)"):
            ad.matmul(a, b)

    def test_elementwise_shape_error(self):
        with pytest.raises(ShapeError, match="add"):
            ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2))))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        s = ad.softmax_rows(ad.constant(rng.normal(size=(6, 5)) * 4))
        np.testing.assert_allclose(s.value.sum(axis=1), 1.0, atol=1e-9)

    def test_log_softmax_matches_log_of_softmax(self):
        rng = np.random.default_rng(1)
        x = ad.constant(rng.normal(size=(4, 7)) * 3)
        np.testing.assert_allclose(
            ad.log_softmax_rows(x).value, np.log(ad.softmax_rows(x).value), atol=1e-9
        )

    def test_scalars_are_1x1(self):
        assert ad.constant(3.0).value.shape == (1, 1)
        assert ad.trace(ad.constant(np.eye(4))).value.shape == (1, 1)

    def test_fsum_exact_permutation_invariance(self):
        vals = [1e16, 1.0, -1e16, 0.5]
        a = ad.fsum_scalars([ad.constant(v) for v in vals]).value[0, 0]
        b = ad.fsum_scalars([ad.constant(v) for v in reversed(vals)]).value[0, 0]
        assert a == b == 1.5


class TestBackward:
    def test_trace_gradient_is_identity(self):
        w = ad.Parameter("w", np.array([[1.0, 2.0], [3.0, 4.0]]))
        grads = ad.gradients(ad.trace(w.node), [w])
        np.testing.assert_array_equal(grads["w"], np.eye(2))

    def test_relu_subgradient(self):
        w = ad.Parameter("w", np.array([[-1.0, 1.0]]))
        grads = ad.gradients(ad.summation(ad.relu(w.node)), [w])
        np.testing.assert_array_equal(grads["w"], [[0.0, 1.0]])

    def test_relu_kink_uses_negative_side_slope(self):
        w = ad.Parameter("w", np.array([[0.0]]))
        assert ad.gradients(ad.summation(ad.relu(w.node)), [w])["w"][0, 0] == 0.0
        w2 = ad.Parameter("w2", np.array([[0.0]]))
        g2 = ad.gradients(ad.summation(ad.leaky_relu(w2.node, 0.01)), [w2])
        assert g2["w2"][0, 0] == 0.01

    def test_non_scalar_loss_rejected(self):
        w = ad.Parameter("w", np.ones((2, 2)))
        with pytest.raises(ShapeError, match="scalar"):
            ad.backprop(ad.relu(w.node))

    def test_unreachable_parameter_gets_zero_matrix(self):
        w = ad.Parameter("w", np.ones((2, 2)))
        orphan = ad.Parameter("orphan", np.ones((3, 1)))
        grads = ad.gradients(ad.trace(w.node), [w, orphan])
        np.testing.assert_array_equal(grads["orphan"], np.zeros((3, 1)))

    def test_double_backward_accumulates_exactly_twice(self):
        rng = np.random.default_rng(7)
        w = ad.Parameter("w", rng.normal(size=(3, 4)))
        u = ad.Parameter("u", rng.normal(size=(4, 2)))
        loss = ad.summation(ad.sigmoid(ad.matmul(w.node, u.node)))
        ad.backprop(loss)
        first_w, first_u = w.grad.copy(), u.grad.copy()
        ad.backprop(loss)
        np.testing.assert_array_equal(w.grad, 2.0 * first_w)
        np.testing.assert_array_equal(u.grad, 2.0 * first_u)

    def test_grad_shape_always_matches_value(self):
        w = ad.Parameter("w", np.ones((2, 5)))
        out = ad.softmax_rows(ad.matmul(w.node, ad.constant(np.ones((5, 3)))))
        for node in (w.node, out):
            assert node.grad.shape == node.value.shape

    def test_shared_subexpression_fanout(self):
        # d/dx of x*x via two references to the same node
        x = ad.Parameter("x", np.array([[3.0]]))
        loss = ad.summation(ad.mul(x.node, x.node))
        np.testing.assert_allclose(ad.gradients(loss, [x])["x"], [[6.0]])


class TestGradcheckAllOps:
    """Analytic gradients match central finite differences per op."""

    rng = np.random.default_rng(1234)

    def test_add_broadcast_variants(self):
        for shape_b in [(5, 4), (1, 4), (5, 1), (1, 1)]:
            a = ad.Parameter("a", self.rng.normal(size=(5, 4)))
            b = ad.Parameter("b", self.rng.normal(size=shape_b))
            _gradcheck(lambda a=a, b=b: ad.add(a.node, b.node), [a, b])

    def test_sub_and_mul_and_div(self):
        a = ad.Parameter("a", self.rng.normal(size=(4, 3)))
        b = ad.Parameter("b", self.rng.normal(size=(1, 3)))
        c = ad.Parameter("c", 1.5 + self.rng.random(size=(4, 1)))
        _gradcheck(lambda: ad.sub(a.node, b.node), [a, b])
        _gradcheck(lambda: ad.mul(a.node, b.node), [a, b])
        _gradcheck(lambda: ad.div(a.node, c.node), [a, c])

    def test_matmul_transpose_trace_scale(self):
        a = ad.Parameter("a", self.rng.normal(size=(3, 4)))
        b = ad.Parameter("b", self.rng.normal(size=(4, 3)))
        _gradcheck(lambda: ad.matmul(a.node, b.node), [a, b])
        _gradcheck(lambda: ad.transpose(a.node), [a])
        _gradcheck(lambda: ad.trace(ad.matmul(a.node, b.node)), [a, b])
        _gradcheck(lambda: ad.scale(a.node, -2.5), [a])

    def test_nonlinearities(self):
        x = ad.Parameter("x", _away_from_kinks(self.rng, (4, 5)))
        _gradcheck(lambda: ad.relu(x.node), [x])
        _gradcheck(lambda: ad.leaky_relu(x.node, 0.01), [x])
        _gradcheck(lambda: ad.sigmoid(x.node), [x])
        _gradcheck(lambda: ad.absval(x.node), [x])
        pos = ad.Parameter("pos", 0.5 + self.rng.random(size=(3, 3)))
        _gradcheck(lambda: ad.sqrt(pos.node), [pos])

    def test_reductions(self):
        x = ad.Parameter("x", self.rng.normal(size=(4, 6)))
        for axis in (None, 0, 1):
            _gradcheck(lambda axis=axis: ad.summation(x.node, axis=axis), [x])
            _gradcheck(lambda axis=axis: ad.mean(x.node, axis=axis), [x])

    def test_structure_ops(self):
        a = ad.Parameter("a", self.rng.normal(size=(3, 2)))
        b = ad.Parameter("b", self.rng.normal(size=(3, 4)))
        c = ad.Parameter("c", self.rng.normal(size=(2, 4)))
        _gradcheck(lambda: ad.concat_cols([a.node, b.node]), [a, b])
        _gradcheck(lambda: ad.concat_rows([b.node, c.node]), [b, c])
        idx = [2, 0, 0, 1]  # duplicate rows must accumulate
        _gradcheck(lambda: ad.gather_rows(b.node, idx), [a, b])
        _gradcheck(lambda: ad.entry(b.node, 1, 3), [b])

    def test_softmax_family(self):
        x = ad.Parameter("x", self.rng.normal(size=(5, 4)))
        _gradcheck(lambda: ad.softmax_rows(x.node), [x])
        _gradcheck(lambda: ad.log_softmax_rows(x.node), [x])

    def test_fsum(self):
        xs = [ad.Parameter(f"s{i}", self.rng.normal(size=(1, 1))) for i in range(4)]
        _gradcheck(lambda: ad.fsum_scalars([x.node for x in xs]), xs)

    def test_batchnorm_train_and_eval(self):
        x = ad.Parameter("x", self.rng.normal(size=(6, 3)))
        gamma = ad.Parameter("gamma", 1.0 + 0.1 * self.rng.normal(size=(1, 3)))
        beta = ad.Parameter("beta", self.rng.normal(size=(1, 3)))
        for training in (True, False):
            state = ad.BatchNormState(3)
            state.mean = self.rng.normal(size=(1, 3))
            state.var = 0.5 + self.rng.random(size=(1, 3))
            frozen = state.copy()

            def build(training=training, frozen=frozen):
                return ad.batchnorm(x.node, gamma.node, beta.node,
                                    frozen.copy(), training)

            _gradcheck(build, [x, gamma, beta])

    def test_random_chains(self):
        """Composite chains across ops on random small inputs."""
        for trial in range(5):
            rng = np.random.default_rng(500 + trial)
            w = ad.Parameter("w", _away_from_kinks(rng, (4, 3)))
            u = ad.Parameter("u", rng.normal(size=(3, 3)))

            def build():
                h = ad.leaky_relu(ad.matmul(w.node, u.node), 0.01)
                s = ad.softmax_rows(h)
                return ad.concat_cols([s, ad.sigmoid(h)])

            _gradcheck(build, [w, u])


class TestBatchNormRunningStats:
    def test_momentum_mixing(self):
        rng = np.random.default_rng(3)
        x = ad.constant(rng.normal(loc=2.0, size=(50, 4)))
        gamma = ad.constant(np.ones((1, 4)))
        beta = ad.constant(np.zeros((1, 4)))
        state = ad.BatchNormState(4, momentum=0.1)
        ad.batchnorm(x, gamma, beta, state, training=True)
        mu = x.value.mean(axis=0, keepdims=True)
        var = x.value.var(axis=0, keepdims=True) * (50 / 49)
        np.testing.assert_allclose(state.mean, 0.1 * mu)
        np.testing.assert_allclose(state.var, 0.9 + 0.1 * var)

    def test_eval_mode_ignores_batch(self):
        state = ad.BatchNormState(2)
        state.mean = np.array([[1.0, -1.0]])
        state.var = np.array([[4.0, 0.25]])
        x = ad.constant([[1.0, -1.0], [3.0, 0.0]])
        out = ad.batchnorm(x, ad.constant(np.ones((1, 2))),
                           ad.constant(np.zeros((1, 2))), state, training=False)
        expected = (x.value - state.mean) / np.sqrt(state.var + state.eps)
        np.testing.assert_allclose(out.value, expected)
