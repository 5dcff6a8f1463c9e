import numpy as np
import pytest

from phonembed import autodiff as ad
from phonembed.autodiff import Parameter, Tensor


def _param(rng, shape, name="p"):
    return Parameter(rng.normal(size=shape), name)


def _check(loss_fn, params, rng=None, n=10):
    return ad.check_gradients(loss_fn, params, n_entries=n, rng=rng or np.random.default_rng(0))


class TestElementwiseOps:
    def test_add_sub_mul_broadcast_gradients(self):
        rng = np.random.default_rng(0)
        a = _param(rng, (4, 3), "a")
        b = _param(rng, (3,), "b")
        c = _param(rng, (4, 1), "c")

        def loss():
            return ad.tsum(ad.square(ad.mul(ad.sub(ad.add(a, b), c), b)))

        assert _check(loss, [a, b, c]) < 1e-3

    def test_nonlinearities(self):
        rng = np.random.default_rng(1)
        a = _param(rng, (5, 4), "a")
        for op in (ad.sigmoid, ad.tanh, ad.relu):
            def loss(op=op):
                return ad.tsum(ad.square(op(a)))

            assert _check(loss, [a]) < 1e-3

    def test_sqrt_gradient(self):
        rng = np.random.default_rng(2)
        a = _param(rng, (6,), "a")

        def loss():
            return ad.tsum(ad.sqrt(ad.add(ad.square(a), 0.5)))

        assert _check(loss, [a]) < 1e-3

    def test_matmul_transpose_concat(self):
        rng = np.random.default_rng(3)
        a = _param(rng, (4, 3), "a")
        b = _param(rng, (3, 5), "b")

        def loss():
            prod = ad.matmul(a, b)
            both = ad.concat([prod, ad.transpose(ad.matmul(ad.transpose(b), ad.transpose(a)))], axis=1)
            return ad.tsum(ad.square(both))

        assert _check(loss, [a, b]) < 1e-3

    def test_shared_operand_accumulates(self):
        a = Parameter(np.array([3.0]), "a")
        loss = ad.mul(a, a)
        loss.backward()
        np.testing.assert_allclose(a.grad, [6.0])


class TestReductionsAndIndexing:
    def test_sum_axis_and_mean(self):
        rng = np.random.default_rng(4)
        a = _param(rng, (3, 4), "a")

        def loss():
            return ad.add(ad.tmean(ad.tsum(a, axis=1)), ad.tsum(ad.square(a)))

        assert _check(loss, [a]) < 1e-3

    def test_log_softmax_rows_normalize(self):
        rng = np.random.default_rng(5)
        logits = Tensor(rng.normal(size=(6, 9)))
        lp = ad.log_softmax(logits)
        np.testing.assert_allclose(np.exp(lp.data).sum(axis=1), 1.0, atol=1e-12)

    def test_log_softmax_pick_gradient(self):
        rng = np.random.default_rng(6)
        a = _param(rng, (5, 7), "a")
        idx = rng.integers(0, 7, size=5)

        def loss():
            return ad.mul(ad.tsum(ad.pick(ad.log_softmax(a), idx)), -1.0)

        assert _check(loss, [a]) < 1e-3

    def test_softmax_gradient(self):
        rng = np.random.default_rng(7)
        a = _param(rng, (4, 5), "a")
        w = rng.normal(size=(4, 5))

        def loss():
            return ad.tsum(ad.mul(ad.softmax(a), w))

        assert _check(loss, [a]) < 1e-3

    def test_embedding_gather_scatter(self):
        rng = np.random.default_rng(8)
        table = _param(rng, (6, 3), "table")
        ids = np.array([0, 2, 2, 5])

        def loss():
            return ad.tsum(ad.square(ad.embedding(table, ids)))

        assert _check(loss, [table]) < 1e-3
        ad.zero_grads([table])
        out = ad.embedding(table, ids)
        ad.tsum(out).backward()
        # row 2 is gathered twice, rows 1/3/4 never
        assert table.grad[2, 0] == 2.0
        assert table.grad[1].sum() == 0.0


class TestGraphMechanics:
    def test_detach_blocks_gradients(self):
        a = Parameter(np.array([2.0]), "a")
        out = ad.mul(a.detach(), 3.0)
        assert not out.requires_grad

    def test_no_grad_context(self):
        a = Parameter(np.array([2.0]), "a")
        with ad.no_grad():
            out = ad.mul(a, a)
        assert not out.requires_grad
        out2 = ad.mul(a, a)
        assert out2.requires_grad

    def test_input_gradients_survive_graph_free(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        x.requires_grad = True
        loss = ad.tsum(ad.square(x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [[2.0, 4.0]])

    def test_straight_through_forward_is_onehot(self):
        p = Tensor(np.array([[0.2, 0.5, 0.3], [0.9, 0.05, 0.05]]))
        p.requires_grad = True
        st = ad.straight_through_onehot(p)
        np.testing.assert_array_equal(st.data, [[0, 1, 0], [1, 0, 0]])
        ad.tsum(ad.mul(st, 2.0)).backward()
        np.testing.assert_allclose(p.grad, 2.0 * np.ones((2, 3)))

    def test_backward_requires_grad(self):
        t = Tensor(np.ones(3))
        with pytest.raises(ValueError):
            t.backward()

    def test_second_identical_loss_recomputes(self):
        a = Parameter(np.array([1.5]), "a")
        for _ in range(2):
            ad.zero_grads([a])
            loss = ad.square(a)
            loss.backward()
            np.testing.assert_allclose(a.grad, [3.0])


class TestGruCellOp:
    def test_matches_manual_composition(self):
        rng = np.random.default_rng(9)
        batch, hidden = 4, 6
        xp = Tensor(rng.normal(size=(batch, 3 * hidden)))
        hp = Tensor(rng.normal(size=(batch, 3 * hidden)))
        h0 = Tensor(rng.normal(size=(batch, hidden)))
        out = ad.gru_cell(xp, hp, h0)

        x, h = xp.data, hp.data
        r = 1 / (1 + np.exp(-(x[:, :hidden] + h[:, :hidden])))
        z = 1 / (1 + np.exp(-(x[:, hidden : 2 * hidden] + h[:, hidden : 2 * hidden])))
        n = np.tanh(x[:, 2 * hidden :] + r * h[:, 2 * hidden :])
        expected = (1 - z) * n + z * h0.data
        np.testing.assert_allclose(out.data, expected, atol=1e-14)

    def test_gradients_all_three_inputs(self):
        rng = np.random.default_rng(10)
        batch, hidden = 3, 5
        xp = _param(rng, (batch, 3 * hidden), "xp")
        hp = _param(rng, (batch, 3 * hidden), "hp")
        h0 = _param(rng, (batch, hidden), "h0")
        w = rng.normal(size=(batch, hidden))

        def loss():
            return ad.tsum(ad.mul(ad.gru_cell(xp, hp, h0), w))

        assert _check(loss, [xp, hp, h0], n=15) < 1e-3

    def test_recurrent_chain_gradient(self):
        rng = np.random.default_rng(11)
        hidden = 4
        w_in = _param(rng, (2, 3 * hidden), "w_in")
        w_rec = _param(rng, (hidden, 3 * hidden), "w_rec")
        xs = [Tensor(rng.normal(size=(2, 2))) for _ in range(5)]

        def loss():
            h = Tensor(np.zeros((2, hidden)))
            for x in xs:
                h = ad.gru_cell(ad.matmul(x, w_in), ad.matmul(h, w_rec), h)
            return ad.tsum(ad.square(h))

        assert _check(loss, [w_in, w_rec], n=12) < 1e-3
