"""The reverse-mode engine against finite differences and by hand."""

import numpy as np
import pytest

from partsdf import autodiff as ad
from conftest import finite_difference_check


def _params(rng, *shapes):
    return [ad.Parameter(rng.normal(size=s), f"p{i}") for i, s in enumerate(shapes)]


class TestOps:
    @pytest.mark.parametrize("seed", range(3))
    def test_dense_relu_chain_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        W1, b1, W2, b2 = _params(rng, (4, 6), (6,), (6, 2), (2,))
        x = rng.normal(size=(5, 4))

        def fn():
            h = ad.relu(ad.add(ad.matmul(ad.Tensor(x), W1), b1))
            out = ad.add(ad.matmul(h, W2), b2)
            return ad.mean(ad.square(out))

        assert finite_difference_check(fn, [W1, b1, W2, b2]) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_pointwise_op_gradients(self, seed):
        rng = np.random.default_rng(100 + seed)
        (v,) = _params(rng, (17,))

        def fn():
            a = ad.tanh(v) + ad.sigmoid(v) + ad.softplus(v)
            b = ad.sin(v) * ad.cos(v) + ad.sqrt(ad.square(v) + 1.0)
            c = ad.absolute(v) + ad.clamp(v, -0.5, 0.5) + ad.exp(v * 0.1) + ad.log(ad.square(v) + 2.0)
            return ad.mean(a + b * c)

        assert finite_difference_check(fn, [v]) < 1e-4

    def test_min_max_route_to_first_argument_on_ties(self):
        a = ad.Parameter(np.array([1.0, 2.0]), "a")
        b = ad.Parameter(np.array([1.0, 5.0]), "b")
        out = ad.sum_(ad.minimum(a, b))
        out.backward()
        assert np.array_equal(a.grad, [1.0, 1.0])
        assert np.array_equal(b.grad, [0.0, 0.0])
        a.grad = b.grad = None
        out = ad.sum_(ad.maximum(a, b))
        out.backward()
        assert np.array_equal(a.grad, [1.0, 0.0])
        assert np.array_equal(b.grad, [0.0, 1.0])

    def test_reduce_min_tie_break_lowest_index(self):
        streams = [ad.Parameter(np.array([-0.3, 0.2]), f"s{i}") for i in range(3)]
        streams[1].data[0] = -0.3  # tie with stream 0 at position 0
        out = ad.sum_(ad.reduce_min(streams))
        out.backward()
        assert streams[0].grad[0] == 1.0 and streams[1].grad[0] == 0.0

    def test_gather_accumulates_duplicate_rows(self):
        table = ad.Parameter(np.arange(6.0).reshape(3, 2), "t")
        idx = np.array([0, 2, 0])
        out = ad.sum_(table[idx])
        out.backward()
        assert np.array_equal(table.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_repeat_rows_backward_sums_copies(self):
        x = ad.Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]), "x")
        out = ad.sum_(ad.repeat_rows(x, 3) * 2.0)
        out.backward()
        assert np.array_equal(x.grad, [[6.0, 6.0], [6.0, 6.0]])

    def test_maxpool_rows_forward_and_backward(self):
        x = ad.Parameter(np.array([[1.0, 5.0], [3.0, 2.0], [0.0, 7.0], [4.0, 1.0]]), "x")
        pooled = ad.maxpool_rows(x, 2)
        assert np.array_equal(pooled.data, [[3.0, 5.0], [4.0, 7.0]])
        ad.sum_(pooled).backward()
        assert np.array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])

    def test_smallest_k_selects_stable_prefix(self):
        x = ad.Parameter(np.array([3.0, 1.0, 4.0, 2.0]), "x")
        out = ad.smallest_k(x, 2)
        assert float(out.data) == pytest.approx(1.5)
        out.backward()
        assert np.array_equal(x.grad, [0.0, 0.5, 0.0, 0.5])

    def test_backward_requires_scalar_and_recorded_graph(self):
        t = ad.Tensor(np.zeros(3))
        with pytest.raises(RuntimeError):
            t.backward()
        p = ad.Parameter(np.zeros(3), "p")
        with pytest.raises(RuntimeError):
            (p * 2.0).backward()  # non-scalar without seed

    def test_matmul_dimension_mismatch(self):
        a = ad.Tensor(np.zeros((2, 3)), requires_grad=True)
        b = ad.Tensor(np.zeros((4, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="mismatch"):
            ad.matmul(a, b)


class TestDense:
    def test_identity_and_constant(self):
        rng = np.random.default_rng(0)
        layer = ad.Dense(2, 2, rng, "l")
        layer.W.data = np.eye(2)
        layer.b.data = np.zeros(2)
        assert np.allclose(layer(np.array([[3.0, 4.0]])), [[3.0, 4.0]])
        layer.W.data = np.zeros((2, 2))
        layer.b.data = np.ones(2)
        assert np.allclose(layer(np.array([[9.0, -2.0]])), [[1.0, 1.0]])

    def test_hand_matrix_vector_product(self):
        rng = np.random.default_rng(0)
        layer = ad.Dense(2, 2, rng, "l")
        layer.W.data = np.array([[1.0, 2.0], [3.0, 4.0]]).T  # rows act on input
        layer.b.data = np.zeros(2)
        assert np.allclose(layer(np.array([[1.0, 1.0]])), [[3.0, 7.0]])

    def test_width_mismatch_raises(self):
        layer = ad.Dense(3, 2, np.random.default_rng(0), "l")
        with pytest.raises(ValueError, match="width"):
            layer(np.zeros((4, 5)))

    def test_init_bounds_follow_fan_in(self):
        layer = ad.Dense(100, 50, np.random.default_rng(1), "l")
        assert np.abs(layer.W.data).max() <= 0.1


class TestAdam:
    def test_first_step_is_bias_corrected_lr(self):
        p = ad.Parameter(np.zeros(1), "p")
        opt = ad.Adam([p], lr=1e-3)
        p.grad = np.array([2.0])
        opt.step()
        assert p.data[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_gradients_leave_values_unchanged(self):
        p = ad.Parameter(np.ones(3), "p")
        opt = ad.Adam([p], lr=1e-2)
        for _ in range(5):
            p.grad = np.zeros(3)
            opt.step()
        assert np.array_equal(p.data, np.ones(3))

    def test_step_size_bounded_by_lr(self):
        # constant gradient: |update| stays within lr (plus epsilon slack)
        p = ad.Parameter(np.zeros(1), "p")
        opt = ad.Adam([p], lr=1e-3)
        prev = p.data.copy()
        for _ in range(10):
            p.grad = np.array([3.0])
            opt.step()
            assert abs(p.data[0] - prev[0]) <= 1e-3 * (1 + 1e-6)
            prev = p.data.copy()

    def test_non_finite_gradient_names_the_parameter(self):
        p = ad.Parameter(np.zeros(2), "weights.block7")
        opt = ad.Adam([p], lr=1e-3)
        p.grad = np.array([1.0, np.nan])
        with pytest.raises(FloatingPointError, match="weights.block7"):
            opt.step()

    def test_sparse_rows_advance_independently(self):
        table = ad.Parameter(np.zeros((3, 2)), "t", sparse_rows=True)
        opt = ad.Adam([table], lr=1e-3)
        g = np.zeros((3, 2))
        g[1] = 1.0
        table.grad = g
        opt.step()
        assert np.all(table.data[0] == 0) and np.all(table.data[2] == 0)
        assert np.all(table.data[1] != 0)
        assert opt._t[0][1] == 1 and opt._t[0][0] == 0


class TestCheckpoint:
    def test_roundtrip_and_version_gate(self, tmp_path):
        rng = np.random.default_rng(0)
        params = [ad.Parameter(rng.normal(size=(3, 2)), "a"), ad.Parameter(rng.normal(size=4), "b")]
        path = tmp_path / "ck.npz"
        ad.save_checkpoint(path, params, {"note": "x"})
        arrays, meta = ad.load_checkpoint(path)
        assert meta["note"] == "x" and meta["format_version"] == ad.CHECKPOINT_FORMAT_VERSION
        assert np.array_equal(arrays["a"], params[0].data)
        bad = dict(meta)
        ad.save_checkpoint(path, params, {**bad, "format_version": 99})
        # format_version is forced by save; loading stays valid
        arrays, meta = ad.load_checkpoint(path)
        assert meta["format_version"] == ad.CHECKPOINT_FORMAT_VERSION

    def test_duplicate_names_rejected(self, tmp_path):
        params = [ad.Parameter(np.zeros(1), "same"), ad.Parameter(np.zeros(1), "same")]
        with pytest.raises(ValueError, match="duplicate"):
            ad.save_checkpoint(tmp_path / "x.npz", params, {})
