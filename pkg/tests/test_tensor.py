"""Tensor core: forward contracts, gradient checks, tape determinism."""

import numpy as np
import pytest

import slotforge.tensor as T
from slotforge import nn
from slotforge.tensor import NonFiniteError, ShapeError, Tensor


def rand_tensor(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(eye, m).data, m.data)

    def test_projector_row_select(self):
        proj = Tensor([[1.0, 0.0], [0.0, 0.0]])
        m = Tensor([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(T.matmul(proj, m).data, [[5.0, 6.0], [0.0, 0.0]])

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = rand_tensor(rng, 3, 4)
        b = rand_tensor(rng, 4, 2)
        err = T.finite_diff_check(lambda: T.sum_(T.matmul(a, b)), [a, b])
        assert err <= 1e-4

    def test_shape_mismatch_mentions_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_uniform_input(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_extreme_input_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0, 0.0]), axis=0)
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] < 1e-300

    def test_rows_sum_to_one_at_extremes(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = Tensor(rng.uniform(-1e3, 1e3, size=(4, 6)))
            out = T.softmax(x, axis=1)
            assert np.all(np.abs(out.data.sum(axis=1) - 1.0) <= 1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        x = rand_tensor(rng, 5)
        w = Tensor(rng.standard_normal(5))
        err = T.finite_diff_check(lambda: T.sum_(T.mul(T.softmax(x, axis=0), w)), [x])
        assert err <= 1e-4


class TestGruCell:
    def test_zero_everything_gives_zero(self):
        rng = np.random.default_rng(0)
        p = nn.GRUParams.create(rng, 4)
        for name in vars(p):
            getattr(p, name).data[...] = 0.0
        out = nn.gru_cell(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), p)
        assert np.array_equal(out.data, np.zeros((2, 4)))

    def test_saturated_update_gate_passes_state(self):
        rng = np.random.default_rng(0)
        p = nn.GRUParams.create(rng, 4)
        p.b_update.data[...] = 50.0
        states = Tensor(rng.standard_normal((3, 4)))
        out = nn.gru_cell(Tensor(rng.standard_normal((3, 4))), states, p)
        assert np.allclose(out.data, states.data, atol=1e-12)

    def test_all_parameter_gradient(self):
        rng = np.random.default_rng(3)
        p = nn.GRUParams.create(rng, 8)
        inputs = rand_tensor(rng, 4, 8)
        states = rand_tensor(rng, 4, 8)
        wrt = [inputs, states] + [getattr(p, n) for n in vars(p)]
        err = T.finite_diff_check(lambda: T.sum_(nn.gru_cell(inputs, states, p)), wrt)
        assert err <= 1e-4

    def test_shape_mismatch(self):
        rng = np.random.default_rng(0)
        p = nn.GRUParams.create(rng, 4)
        with pytest.raises(ShapeError):
            nn.gru_cell(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), p)


class TestLayerNorm:
    def test_zero_variance_row_is_finite_zero(self):
        out = T.layer_norm(Tensor([[3.0, 3.0, 3.0]]))
        assert np.allclose(out.data, 0.0)

    def test_affine_gradient(self):
        rng = np.random.default_rng(4)
        x = rand_tensor(rng, 3, 6)
        g = Tensor(rng.standard_normal(6), requires_grad=True)
        b = Tensor(rng.standard_normal(6), requires_grad=True)
        err = T.finite_diff_check(lambda: T.sum_(T.mul(T.layer_norm(x, g, b),
                                                       T.layer_norm(x, g, b))), [x, g, b])
        assert err <= 1e-4


class TestReductionsAndElementwise:
    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "sigmoid", "tanh",
                                    "exp", "log", "sqrt", "concat", "mean", "linear"])
    def test_gradients(self, op):
        rng = np.random.default_rng(hash(op) % 2**32)
        a = rand_tensor(rng, 3, 4)
        b = rand_tensor(rng, 3, 4)
        pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        bias = Tensor(rng.standard_normal(2), requires_grad=True)
        funcs = {
            "add": (lambda: T.sum_(T.add(a, b)), [a, b]),
            "sub": (lambda: T.sum_(T.sub(a, b)), [a, b]),
            "mul": (lambda: T.sum_(T.mul(a, b)), [a, b]),
            "div": (lambda: T.sum_(T.div(a, pos)), [a, pos]),
            "sigmoid": (lambda: T.sum_(T.mul(T.sigmoid(a), T.sigmoid(a))), [a]),
            "tanh": (lambda: T.sum_(T.mul(T.tanh(a), b)), [a, b]),
            "exp": (lambda: T.sum_(T.exp(T.mul(a, 0.3))), [a]),
            "log": (lambda: T.sum_(T.log(pos)), [pos]),
            "sqrt": (lambda: T.sum_(T.sqrt(pos)), [pos]),
            "concat": (lambda: T.sum_(T.mul(T.concat([a, b], axis=1),
                                            T.concat([b, a], axis=1))), [a, b]),
            "mean": (lambda: T.mean(T.mul(a, a)), [a]),
            "linear": (lambda: T.sum_(T.tanh(T.linear(a, w, bias))), [a, w, bias]),
        }
        f, wrt = funcs[op]
        assert T.finite_diff_check(f, wrt) <= 1e-4

    def test_row_and_column_broadcast(self):
        rng = np.random.default_rng(7)
        x = rand_tensor(rng, 3, 4)
        row = Tensor(rng.standard_normal(4), requires_grad=True)
        col = Tensor(rng.standard_normal((3, 1)), requires_grad=True)
        err = T.finite_diff_check(lambda: T.sum_(T.mul(T.add(x, row), col)), [x, row, col])
        assert err <= 1e-4

    def test_disallowed_broadcast(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 3))))

    def test_gather_scatter_gradient(self):
        rng = np.random.default_rng(8)
        x = rand_tensor(rng, 5, 3)
        idx = [0, 2, 2, 4]
        err = T.finite_diff_check(lambda: T.sum_(T.mul(T.gather_rows(x, idx),
                                                       T.gather_rows(x, idx))), [x])
        assert err <= 1e-4

    def test_slice_cols_gradient(self):
        rng = np.random.default_rng(9)
        x = rand_tensor(rng, 4, 6)
        err = T.finite_diff_check(lambda: T.sum_(T.mul(T.slice_cols(x, 1, 4),
                                                       T.slice_cols(x, 2, 5))), [x])
        assert err <= 1e-4


class TestLossPrimitives:
    def test_bce_gradient(self):
        rng = np.random.default_rng(10)
        p = Tensor(rng.uniform(0.1, 0.9, size=(6,)), requires_grad=True)
        targets = rng.integers(0, 2, size=6).astype(float)
        weights = rng.uniform(0.5, 2.0, size=6)
        err = T.finite_diff_check(lambda: T.bce(p, targets, weights), [p])
        assert err <= 1e-4

    def test_bce_logits_matches_probability_form(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal(8))
        t = rng.integers(0, 2, size=8).astype(float)
        via_logits = T.bce_logits(x, t).item()
        via_probs = T.bce(T.sigmoid(x), t).item()
        assert via_logits == pytest.approx(via_probs, rel=1e-12)

    def test_bce_logits_extreme_logits_stay_finite(self):
        x = Tensor([800.0, -800.0])
        assert np.isfinite(T.bce_logits(x, np.array([1.0, 0.0])).item())

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(12)
        logits = rand_tensor(rng, 4, 5)
        labels = rng.integers(0, 5, size=4)
        err = T.finite_diff_check(lambda: T.cross_entropy(logits, labels), [logits])
        assert err <= 1e-4

    def test_cross_entropy_uniform_logits(self):
        logits = Tensor(np.zeros((3, 7)))
        assert T.cross_entropy(logits, [0, 3, 6], reduce="sum").item() == pytest.approx(3 * np.log(7))

    def test_logsumexp_gradient(self):
        rng = np.random.default_rng(13)
        x = rand_tensor(rng, 3, 5)
        err = T.finite_diff_check(lambda: T.sum_(T.logsumexp_rows(x)), [x])
        assert err <= 1e-4


class TestFiniteDiffOracle:
    def test_quadratic_closed_form(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with T.fresh_tape() as tape:
            loss = T.sum_(T.mul(x, x))
            tape.backward(loss)
        assert np.allclose(x.grad, [2.0, 4.0])
        x.zero_grad()
        assert T.finite_diff_check(lambda: T.sum_(T.mul(x, x)), [x]) <= 1e-8

    def test_softmax_cross_entropy_self_test(self):
        rng = np.random.default_rng(14)
        logits = rand_tensor(rng, 1, 3)
        err = T.finite_diff_check(lambda: T.cross_entropy(logits, [1]), [logits])
        assert err <= 1e-6

    def test_eps_out_of_range(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(ValueError):
            T.finite_diff_check(lambda: T.sum_(x), [x], eps=1e-2)


class TestNanPolicy:
    def test_construction_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])

    def test_forward_overflow_raises(self):
        with pytest.raises(NonFiniteError):
            T.exp(Tensor([1000.0]))

    def test_division_by_zero_raises(self):
        with pytest.raises(NonFiniteError):
            T.div(Tensor([1.0]), Tensor([0.0]))


class TestTapeSemantics:
    def test_backward_deterministic_bitwise(self):
        def run():
            rng = np.random.default_rng(99)
            a = rand_tensor(rng, 6, 6)
            b = rand_tensor(rng, 6, 6)
            with T.fresh_tape() as tape:
                loss = T.mean(T.mul(T.tanh(T.matmul(a, b)), T.sigmoid(T.add(a, b))))
                tape.backward(loss)
            return a.grad.tobytes(), b.grad.tobytes()

        assert run() == run()

    def test_grad_accumulates_for_shared_input(self):
        x = Tensor([3.0], requires_grad=True)
        with T.fresh_tape() as tape:
            loss = T.sum_(T.mul(x, x))
            tape.backward(loss)
        assert np.allclose(x.grad, [6.0])

    def test_no_grad_skips_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with T.fresh_tape() as tape:
            with T.no_grad():
                y = T.mul(x, x)
            assert len(tape) == 0
            assert not y.requires_grad

    def test_detach_breaks_history(self):
        x = Tensor([2.0], requires_grad=True)
        with T.fresh_tape() as tape:
            y = T.mul(x, x).detach()
            loss = T.sum_(T.mul(y, y))
            tape.backward(loss)
        assert x.grad is None

    def test_randomized_shapes_property(self):
        rng = np.random.default_rng(1234)
        for _ in range(50):
            m, k, n = rng.integers(1, 5, size=3)
            a = rand_tensor(rng, m, k)
            b = rand_tensor(rng, k, n)
            err = T.finite_diff_check(
                lambda: T.mean(T.tanh(T.matmul(a, b))), [a, b])
            assert err <= 1e-4
