import math

import numpy as np
import pytest

from rdmt.errors import NonFinite, ShapeMismatch
from rdmt.ndiff import Adam, AdamState, Tape, Tensor, adam_step, grad_check
from rdmt.ndiff.suite import PRIMITIVES, primitive_instances
from rdmt.seqmodel import toy_gradcheck


def _p(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestForward:
    def test_sigmoid_tanh_at_zero(self):
        t = Tape()
        assert t.sigmoid(Tensor(0.0)).data == 0.5
        assert t.tanh(Tensor(0.0)).data == 0.0

    def test_sigmoid_extremes_finite(self):
        s = Tape().sigmoid(Tensor([-800.0, 800.0])).data
        assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0

    def test_dropout_rate_zero_identity(self):
        x = _p(np.arange(6.0).reshape(2, 3))
        assert Tape().dropout(x, 0.0, 1, training=True) is x

    def test_dropout_eval_identity(self):
        x = _p(np.ones((3, 3)))
        assert Tape().dropout(x, 0.5, 1, training=False) is x

    def test_dropout_seeded_and_inverted(self):
        x = _p(np.ones((200, 50)))
        a = Tape().dropout(x, 0.3, 7, training=True).data
        b = Tape().dropout(x, 0.3, 7, training=True).data
        assert np.array_equal(a, b)
        kept = a[a != 0]
        np.testing.assert_allclose(kept, 1 / 0.7)
        assert abs((a == 0).mean() - 0.3) < 0.02

    def test_dropout_rate_validated(self):
        with pytest.raises(ValueError):
            Tape().dropout(_p([1.0]), 1.0, 0, training=True)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(4, 2\)"):
            Tape().matmul(_p(np.ones((2, 3))), _p(np.ones((4, 2))))
        with pytest.raises(ShapeMismatch):
            Tape().add(_p(np.ones((2, 3))), _p(np.ones(2)))

    def test_leaf_grads_accumulate_until_zeroed(self):
        w = _p([2.0])
        for _ in range(2):
            t = Tape()
            t.backward(t.sum(t.mul(w, w)))
        assert w.grad[0] == 8.0
        w.zero_grad()
        assert w.grad is None

    def test_backward_needs_scalar(self):
        t = Tape()
        with pytest.raises(ShapeMismatch):
            t.backward(t.tanh(_p([1.0, 2.0])))

    def test_disabled_tape_records_nothing(self):
        t = Tape(enabled=False)
        out = t.sigmoid(_p([1.0]))
        assert len(t) == 0 and not out.requires_grad


class TestLSTMCell:
    def test_all_zero_gives_zero_state(self):
        B, H = 2, 3
        z = lambda *s: Tensor(np.zeros(s))  # noqa: E731
        h, c = Tape().lstm_cell(z(B, 4 * H), z(B, H), z(B, H), z(H, 4 * H))
        assert np.all(h.data == 0) and np.all(c.data == 0)

    def test_saturated_forget_gate_keeps_cell(self):
        B, H = 1, 4
        xw = np.zeros((B, 4 * H))
        xw[:, H : 2 * H] = 50.0  # forget bias
        xw[:, :H] = -50.0  # input gate shut
        c_prev = np.array([[0.3, -1.2, 2.0, 0.0]])
        h, c = Tape().lstm_cell(Tensor(xw), Tensor(np.zeros((B, H))), Tensor(c_prev), Tensor(np.zeros((H, 4 * H))))
        np.testing.assert_allclose(c.data, c_prev, atol=1e-12)

    def test_matches_gate_equations(self, rng):
        B, H, D = 3, 2, 4
        x, h0, c0 = rng.normal(size=(B, D)), rng.normal(size=(B, H)), rng.normal(size=(B, H))
        Wx, Wh, b = rng.normal(size=(D, 4 * H)), rng.normal(size=(H, 4 * H)), rng.normal(size=4 * H)
        sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
        a = x @ Wx + h0 @ Wh + b
        i, f, o, g = sig(a[:, :H]), sig(a[:, H:2 * H]), sig(a[:, 2 * H:3 * H]), np.tanh(a[:, 3 * H:])
        c_ref = f * c0 + i * g
        h_ref = o * np.tanh(c_ref)
        h, c = Tape().lstm_cell(Tensor(x @ Wx + b), Tensor(h0), Tensor(c0), Tensor(Wh))
        np.testing.assert_allclose(c.data, c_ref, rtol=1e-13)
        np.testing.assert_allclose(h.data, h_ref, rtol=1e-13)

    def test_mask_passes_state_through(self, rng):
        B, H = 3, 2
        h0, c0 = rng.normal(size=(B, H)), rng.normal(size=(B, H))
        h, c = Tape().lstm_cell(
            Tensor(rng.normal(size=(B, 4 * H))), Tensor(h0), Tensor(c0), Tensor(rng.normal(size=(H, 4 * H))), mask=[1, 0, 1]
        )
        assert np.array_equal(h.data[1], h0[1]) and np.array_equal(c.data[1], c0[1])

    def test_random_instance_gradient(self):
        f, params = next(primitive_instances("lstm_cell", 1, seed=0))
        assert grad_check(f, params).max_rel_error < 1e-5


class TestBCE:
    def test_half_is_ln2(self):
        for y in (0.0, 1.0):
            assert Tape().bce(Tensor([0.5]), [y]).data[0] == pytest.approx(math.log(2), abs=1e-12)

    def test_clamped_certainty(self):
        out = Tape().bce(Tensor([1.0, 0.0]), [1.0, 0.0]).data
        assert np.all(np.isfinite(out)) and np.all(out < 1e-11)

    def test_wrong_label_clamped_finite(self):
        out = Tape().bce(Tensor([0.0]), [1.0]).data[0]
        assert out == pytest.approx(-math.log(1e-12))

    def test_gradient_formula(self):
        p = _p([0.2, 0.7, 0.9])
        y = np.array([1.0, 0.0, 1.0])
        t = Tape()
        t.backward(t.sum(t.bce(p, y)))
        np.testing.assert_allclose(p.grad, (p.data - y) / (p.data * (1 - p.data)), rtol=1e-12)
        rep = grad_check(lambda t: t.sum(t.bce(p, y)), [p])
        assert rep.passed


def test_matmul_backward_against_central_differences(rng):
    a, b = _p(rng.normal(size=(3, 4))), _p(rng.normal(size=(4, 2)))
    r = rng.normal(size=(3, 2))
    rep = grad_check(lambda t: t.sum(t.mul(t.matmul(a, b), r)), [a, b], h=1e-5)
    assert rep.max_rel_error < 1e-6


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients_ten_instances(name):
    for f, params in primitive_instances(name, 10, seed=0):
        rep = grad_check(f, params, h=1e-5, tol=1e-4)
        assert rep.passed, f"{name}: {rep} worst={rep.worst}"


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        for g in (3.0, -0.01, 1e4):
            w = np.array([1.0])
            st = AdamState.zeros_like(w, lr=0.1)
            adam_step(w, np.array([g]), st)
            assert abs(1.0 - w[0]) == pytest.approx(0.1, rel=1e-6)
            assert st.t == 1

    def test_zero_grad_forever(self):
        w = np.array([0.7, -2.0])
        st = AdamState.zeros_like(w)
        for _ in range(50):
            adam_step(w, np.zeros(2), st)
        assert np.array_equal(w, [0.7, -2.0])

    def test_quadratic_against_reference_recurrence(self):
        w = np.array([1.0])
        st = AdamState.zeros_like(w, lr=0.05)
        # scalar reference written out independently
        rw, m, v = 1.0, 0.0, 0.0
        for t in range(1, 101):
            adam_step(w, 2 * w.copy(), st)
            g = 2 * rw
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            rw -= 0.05 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert abs(w[0]) < 0.3
        assert w[0] == pytest.approx(rw, abs=1e-12)
        assert np.all(st.v >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            adam_step(np.zeros(2), np.zeros(3), AdamState.zeros_like(np.zeros(2)))

    def test_optimizer_wrapper_matches_step(self, rng):
        p = _p(rng.normal(size=(2, 2)))
        ref = p.data.copy()
        st = AdamState.zeros_like(ref, lr=0.01)
        opt = Adam([p], lr=0.01)
        for _ in range(3):
            t = Tape()
            t.backward(t.sum(t.mul(p, p)))
            np.testing.assert_allclose(p.grad, 2 * ref, rtol=1e-15)
            opt.step()
            opt.zero_grad()
            adam_step(ref, 2 * ref, st)
        np.testing.assert_array_equal(p.data, ref)


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        x = _p(rng.normal(size=(4, 3)))
        rep = grad_check(lambda t: t.sum(t.mul(x, x)), [x])
        assert rep.max_rel_error < 1e-8 and rep.passed and rep.n_checked == 12

    def test_corrupted_backward_fails(self, rng):
        x = _p(rng.normal(size=5))

        def broken(t):
            s = x.data * x.data
            return t.sum(t._emit(s, (x,), lambda g: (g * 3 * x.data,)))

        assert not grad_check(broken, [x]).passed

    def test_nonfinite(self):
        x = _p([-1.0])
        with pytest.raises(NonFinite), np.errstate(divide="ignore"):
            grad_check(lambda t: t.sum(t.scalar_divide(x, 0.0)), [x])

    def test_needs_scalar(self):
        x = _p([1.0, 2.0])
        with pytest.raises(ValueError):
            grad_check(lambda t: t.tanh(x), [x])

    def test_parameters_restored(self, rng):
        x = _p(rng.normal(size=3))
        before = x.data.copy()
        grad_check(lambda t: t.sum(t.tanh(x)), [x])
        assert np.array_equal(x.data, before)


class TestModelGradients:
    def test_toy_model_passes(self):
        rep = toy_gradcheck(0)
        assert rep.passed, str(rep)

    @pytest.mark.slow
    def test_other_seeds_only_fail_at_roundoff(self):
        # coordinates with true gradients near 1e-8 hit the 1e-8 floor of the
        # relative error; their absolute disagreement stays at roundoff size
        for seed in range(1, 20):
            rep = toy_gradcheck(seed)
            if not rep.passed:
                _, _, a, n = rep.worst
                assert abs(a - n) < 1e-10, (seed, rep.worst)
                assert max(abs(a), abs(n)) < 1e-6
                # a larger step removes the roundoff and the same check passes
                assert toy_gradcheck(seed, h=1e-4).passed
