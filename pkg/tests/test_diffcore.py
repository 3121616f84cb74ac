import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dyngraph2seq import diffcore as dc
from dyngraph2seq.diffcore import ParamStore, Tape, Tensor


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for r in range(k):
                out[i, j] += a[i, r] * b[r, j]
    return out


def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(dc.matmul(np.eye(2), x).data, x)


def test_matmul_hand():
    assert dc.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(dc.matmul(a, b).data, naive_matmul(a, b), rtol=1e-14, atol=1e-14)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(dc.DimensionError, match=r"\[2, 3\] x \[2, 3\]"):
        dc.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(dc.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, rtol=1e-15)

    def test_no_overflow(self):
        y = dc.softmax([1000.0, 0.0]).data
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0, abs=1e-300)

    def test_high_precision_oracle(self):
        mpmath.mp.dps = 50
        exps = [mpmath.e ** v for v in (1, 2, 3)]
        expected = [float(e / mpmath.fsum(exps)) for e in exps]
        np.testing.assert_allclose(dc.softmax([1.0, 2.0, 3.0]).data, expected, rtol=1e-15)

    def test_empty_is_domain_error(self):
        with pytest.raises(dc.DimensionError):
            dc.softmax(np.zeros(0))

    def test_mask_zeroes_positions(self):
        y = dc.softmax([1.0, 5.0, 2.0], mask=[True, False, True]).data
        assert y[1] == 0.0
        assert y.sum() == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)))
    def test_simplex(self, x):
        y = dc.softmax(x).data
        assert np.all(y >= 0)
        assert abs(y.sum() - 1.0) <= 1e-12


class TestRecurrentCell:
    def test_all_zero(self):
        H = 3
        h, c = dc.recurrent_cell(np.zeros(2), np.zeros(H), np.zeros(H),
                                 np.zeros((2, 4 * H)), np.zeros((H, 4 * H)), np.zeros(4 * H))
        assert np.array_equal(h.data, np.zeros(H)) and np.array_equal(c.data, np.zeros(H))

    def test_scalar_hand_evaluation(self):
        # zero input, c_prev = 0, d_h = 1: h = o * tanh(i * g)
        h_prev = 0.7
        Wh = np.array([[0.3, -0.2, 0.9, 0.5]])
        b = np.array([0.1, 0.4, -0.3, 0.2])
        sig = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
        zi, zf, zg, zo = (Wh[0] * h_prev + b)
        i, g, o = sig(zi), math.tanh(zg), sig(zo)
        h, c = dc.recurrent_cell(np.zeros(1), [h_prev], [0.0], np.zeros((1, 4)), Wh, b)
        assert c.data[0] == pytest.approx(i * g, rel=1e-14)
        assert h.data[0] == pytest.approx(o * math.tanh(i * g), rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(dc.DimensionError):
            dc.recurrent_cell(np.zeros(2), np.zeros(3), np.zeros(3),
                              np.zeros((2, 8)), np.zeros((3, 12)), np.zeros(12))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for name, shape in [("x", (2, 3)), ("h", (2, 4)), ("c", (2, 4)), ("Wx", (3, 16)),
                            ("Wh", (4, 16)), ("b", (16,)), ("r", (2, 8))]:
            store.add(name, rng.uniform(-1, 1, size=shape))

        def f(s):
            h, c = dc.recurrent_cell(s["x"], s["h"], s["c"], s["Wx"], s["Wh"], s["b"])
            return dc.sum(dc.concat([h, c], axis=-1) * s["r"])

        reports = dc.grad_check(f, store, h=1e-5, tol=1e-5)
        assert all(r.passed for r in reports), reports


class TestBackward:
    def test_square(self):
        store = ParamStore()
        x = store.add("x", 3.0)
        with Tape() as tape:
            loss = dc.square(x)
        tape.backward(loss, store)
        assert x.grad == pytest.approx(6.0)

    def test_sum_matmul_outer_product(self, rng):
        W = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x = rng.normal(size=(4, 1))
        with Tape() as tape:
            loss = dc.sum(dc.matmul(W, x))
        tape.backward(loss)
        np.testing.assert_allclose(W.grad, np.outer(np.ones(3), x[:, 0]), rtol=1e-14)

    def test_non_scalar_loss_rejected(self):
        W = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = W * 2.0
        with pytest.raises(dc.ContractError):
            tape.backward(y)

    def test_reverse_order_replay(self):
        x = Tensor(2.0, requires_grad=True)
        with Tape() as tape:
            y = dc.tanh(x)
            z = dc.square(y)
        assert [r.out for r in tape.records] == [y, z]
        tape.backward(z)
        assert x.grad == pytest.approx(2 * math.tanh(2.0) * (1 - math.tanh(2.0) ** 2))

    def test_untouched_parameter_has_zero_gradient(self):
        store = ParamStore()
        a = store.add("a", [1.0, 2.0])
        store.add("unused", [5.0])
        with Tape() as tape:
            loss = dc.sum(a * a)
        tape.backward(loss, store)
        assert np.array_equal(store.grads["unused"], [0.0])

    def test_shared_parameter_additivity(self, rng):
        """Gradient over T=4 uses equals the sum of four single-use gradients."""
        W0 = rng.normal(size=(3, 3))
        xs = [rng.normal(size=(1, 3)) for _ in range(4)]

        def use(W, x):
            return dc.sum(dc.tanh(dc.matmul(x, W)))

        W = Tensor(W0, requires_grad=True)
        with Tape() as tape:
            total = use(W, xs[0])
            for x in xs[1:]:
                total = total + use(W, x)
        tape.backward(total)
        parts = np.zeros_like(W0)
        for x in xs:
            Wi = Tensor(W0, requires_grad=True)
            with Tape() as t:
                loss = use(Wi, x)
            t.backward(loss)
            parts += Wi.grad
        np.testing.assert_allclose(W.grad, parts, rtol=0, atol=1e-10)

    def test_no_recording_without_tape(self):
        x = Tensor(1.0, requires_grad=True)
        y = dc.tanh(x)
        assert not y.requires_grad


class TestAdam:
    def test_zero_gradient_fresh_state_is_exact_noop(self):
        store = ParamStore()
        store.add("w", [1.0, -2.0])
        dc.adam_step(store, lr=0.001)
        assert np.array_equal(store["w"].data, [1.0, -2.0])
        assert np.array_equal(store.m["w"], [0.0, 0.0]) and np.array_equal(store.v["w"], [0.0, 0.0])
        assert store.step == 1

    def test_first_step_hand_value(self):
        store = ParamStore()
        w = store.add("w", 0.0)
        w.grad = np.array(1.0)
        dc.adam_step(store, lr=0.001)
        # m_hat = 1, v_hat = 1 after bias correction
        assert store["w"].data == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
        assert np.array_equal(store["w"].grad, 0.0)

    def test_non_finite_gradient_names_slot(self):
        store = ParamStore()
        w = store.add("enc.lstm.b", [0.0])
        w.grad = np.array([np.nan])
        with pytest.raises(dc.TrainingError, match="enc.lstm.b"):
            dc.adam_step(store)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(0)
            store = ParamStore()
            store.add("w", rng.normal(size=(3, 2)))
            for _ in range(10):
                with Tape() as tape:
                    loss = dc.sum(dc.tanh(store["w"]) * dc.tanh(store["w"]))
                tape.backward(loss, store)
                dc.adam_step(store)
            return store["w"].data

        assert np.array_equal(run(), run())


class TestGradCheck:
    def test_quadratic(self):
        store = ParamStore()
        store.add("x", 3.0)
        (rep,) = dc.grad_check(lambda s: dc.square(s["x"]), store, h=1e-5)
        assert rep.max_rel_error < 1e-8 and rep.passed

    def test_corrupted_rule_is_flagged(self):
        def bad_square(x):
            xd = x.data
            return dc._record(xd * xd, (x,), lambda g: (3.0 * xd * g,))

        store = ParamStore()
        store.add("x", [3.0, -1.0])
        (rep,) = dc.grad_check(lambda s: dc.sum(bad_square(s["x"])), store)
        assert not rep.passed

    def test_non_finite_function(self):
        store = ParamStore()
        store.add("x", 1.0)
        with pytest.raises(dc.GradCheckError):
            dc.grad_check(lambda s: s["x"] * np.inf, store)

    @pytest.mark.parametrize("seed", range(5))
    def test_every_primitive(self, seed):
        """Each primitive on random inputs in [-1, 1], h = 1e-5, tol = 1e-5."""
        rng = np.random.default_rng(seed)
        store = ParamStore()
        store.add("a", rng.uniform(-1, 1, (2, 3, 4)))
        store.add("W", rng.uniform(-1, 1, (4, 5)))
        store.add("b", rng.uniform(-1, 1, (5,)))
        store.add("B", rng.uniform(-1, 1, (2, 4, 3)))
        store.add("E", rng.uniform(-1, 1, (6, 5)))
        ids = rng.integers(0, 6, size=(2, 3))
        mask = np.array([[True, True, False], [True, True, True]])

        def f(s):
            x = s["a"] @ s["W"] + s["b"]                      # matmul, add (broadcast)
            y = dc.relu(x) - dc.sigmoid(x) * dc.tanh(x)       # relu, sigmoid, tanh, mul, sub
            y = y + dc.embedding(s["E"], ids)                 # embedding
            p = dc.softmax(y, axis=-1)                        # softmax
            q = dc.softmax(dc.sum(y, axis=-1), axis=-1, mask=mask)  # sum, masked softmax
            z = dc.matmul(s["B"], p[:, :, :3])                # batched matmul, getitem
            m = dc.max(z, axis=-2)                            # max
            w = dc.where(mask[:, :, None], y, p)              # where
            st_ = dc.stack([m, m * m], axis=0)                # stack
            ce = dc.cross_entropy(y.reshape((6, 5)), ids.reshape(-1) % 5,
                                  rng_weights)                # cross_entropy
            return dc.sum(st_) + dc.sum(w * q.reshape((2, 3, 1))) + ce + dc.sum(dc.square(y[0, 1]))

        rng_weights = rng.uniform(0.1, 1.0, size=6)
        reports = dc.grad_check(f, store, h=1e-5, tol=1e-5)
        bad = [r for r in reports if not r.passed]
        assert not bad, bad
