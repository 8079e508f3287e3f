import math

import numpy as np
import pytest

from credit_pairs import nn
from credit_pairs.errors import EmptyWindow, NoRecordedForward, ShapeMismatch


def sq_loss(target):
    def loss(q):
        d = q - target
        return 0.5 * float(np.sum(d * d)), d
    return loss


def random_windows(spec, rng, batch=2, length=4):
    return nn.Windows(rng.integers(0, 3, (batch, length)),
                      rng.normal(size=(batch, length, spec.n_account)),
                      rng.normal(size=(batch, length, spec.n_price)))


def scalar_gru(x, h, W, U, b):
    """Element-by-element GRU step used as an independent oracle."""
    H = len(h)
    out = np.zeros(H)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    z, r = np.zeros(H), np.zeros(H)
    for j in range(H):
        az = b[j] + sum(x[i] * W[i, j] for i in range(len(x))) + sum(h[k] * U[k, j] for k in range(H))
        ar = b[H + j] + sum(x[i] * W[i, H + j] for i in range(len(x))) + sum(h[k] * U[k, H + j] for k in range(H))
        z[j], r[j] = sig(az), sig(ar)
    for j in range(H):
        an = b[2 * H + j] + sum(x[i] * W[i, 2 * H + j] for i in range(len(x)))
        an += sum(r[k] * h[k] * U[k, 2 * H + j] for k in range(H))
        out[j] = (1 - z[j]) * math.tanh(an) + z[j] * h[j]
    return out


class TestGruCell:
    def test_zero_weights_halves_state(self):
        v = np.array([0.4, -2.0, 1.0])
        out = nn.gru_cell_forward(np.ones(5), v, np.zeros((5, 9)), np.zeros((3, 9)), np.zeros(9))
        np.testing.assert_allclose(out, 0.5 * v)

    def test_zero_everything(self):
        out = nn.gru_cell_forward(np.ones(2), np.zeros(3), np.zeros((2, 9)), np.zeros((3, 9)), np.zeros(9))
        assert np.all(out == 0)

    def test_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x, h = rng.normal(size=4), rng.normal(size=3)
            W, U, b = rng.normal(size=(4, 9)), rng.normal(size=(3, 9)), rng.normal(size=9)
            np.testing.assert_allclose(nn.gru_cell_forward(x, h, W, U, b),
                                       scalar_gru(x, h, W, U, b), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.gru_cell_forward(np.ones(4), np.zeros(3), np.zeros((5, 9)), np.zeros((3, 9)), np.zeros(9))


class TestEncoder:
    def setup_method(self):
        self.spec = nn.NetSpec(d_a=2, d_h=6, hidden=5)
        self.params = nn.init_params(self.spec, np.random.default_rng(1))

    def test_length_one(self):
        w = random_windows(self.spec, np.random.default_rng(0), batch=1, length=1)
        (state,) = nn.encode_window(w, self.params)
        np.testing.assert_array_equal(state.c, 0.0)
        np.testing.assert_array_equal(state.h_hat[6:], 0.0)

    def test_identical_history_uniform(self):
        h = np.array([0.3, -0.2, 0.5])
        a = nn.attention_weights(np.array([1.0, 2.0, 0.0]), np.tile(h, (4, 1)))
        np.testing.assert_allclose(a, 0.25, atol=1e-15)

    def test_two_element_hand_case(self):
        h_t = np.array([1.0, 0.0, 2.0, 1.0])
        hist = np.array([[0.5, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, -1.0]])
        s1, s2 = 0.5 / 2.0, 2.0 / 2.0
        e1, e2 = math.exp(s1), math.exp(s2)
        np.testing.assert_allclose(nn.attention_weights(h_t, hist),
                                   [e1 / (e1 + e2), e2 / (e1 + e2)], atol=1e-10)

    def test_weights_are_distributions(self):
        w = random_windows(self.spec, np.random.default_rng(2), batch=1, length=9)
        for p, st in enumerate(nn.encode_window(w, self.params)):
            assert len(st.attention) == p
            if p:
                assert np.all(st.attention >= 0)
                assert st.attention.sum() == pytest.approx(1.0, abs=1e-10)

    def test_final_state_matches_forward(self):
        w = random_windows(self.spec, np.random.default_rng(3), batch=1, length=7)
        last = nn.encode_window(w, self.params)[-1]
        q, tape = nn.forward(self.params, w)
        np.testing.assert_allclose(tape.h_hat[0], last.h_hat, atol=1e-12)
        np.testing.assert_allclose(q[0], nn.q_head(last.h_hat, self.params), atol=1e-12)

    def test_empty_window(self):
        w = nn.Windows(np.zeros((1, 0), int), np.zeros((1, 0, 3)), np.zeros((1, 0, 6)))
        with pytest.raises(EmptyWindow):
            nn.encode_window(w, self.params)

    def test_output_depends_only_on_window(self):
        rng = np.random.default_rng(4)
        long = random_windows(self.spec, rng, batch=1, length=12)
        tail = nn.Windows(long.act_idx[:, -5:], long.account[:, -5:], long.prices[:, -5:])
        other = random_windows(self.spec, rng, batch=1, length=12)
        spliced = nn.Windows(np.concatenate([other.act_idx[:, :7], tail.act_idx], 1),
                             np.concatenate([other.account[:, :7], tail.account], 1),
                             np.concatenate([other.prices[:, :7], tail.prices], 1))
        # windows of the same length differing only outside the last 5 days
        q_tail = nn.q_values(self.params, tail)
        q_cut = nn.q_values(self.params, nn.Windows(spliced.act_idx[:, -5:],
                                                    spliced.account[:, -5:],
                                                    spliced.prices[:, -5:]))
        np.testing.assert_array_equal(q_tail, q_cut)

    def test_swapping_identical_history_rows(self):
        rng = np.random.default_rng(5)
        hist = rng.normal(size=(5, 6))
        hist[3] = hist[1]
        h_t = rng.normal(size=6)
        a = nn.attention_weights(h_t, hist)
        swapped = hist[[0, 3, 2, 1, 4]]
        b = nn.attention_weights(h_t, swapped)
        np.testing.assert_allclose(a @ hist, b @ swapped, atol=1e-12)


class TestQHead:
    def test_zero_weights(self):
        spec = nn.NetSpec(d_h=4, hidden=3)
        p = nn.init_params(spec, np.random.default_rng(0))
        p.arrays["q_W1"][:] = 0
        p.arrays["q_W2"][:] = 0
        p.arrays["q_b2"][:] = [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(nn.q_head(np.ones(8), p), [1.0, 2.0, 3.0])

    def test_hand_computation(self):
        spec = nn.NetSpec(d_h=2, hidden=2)
        arrays = nn.init_params(spec, np.random.default_rng(0)).arrays
        arrays["q_W1"] = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [1.0, -1.0]])
        arrays["q_b1"] = np.array([0.0, -1.0])
        arrays["q_W2"] = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]])
        arrays["q_b2"] = np.array([0.5, 0.0, 0.0])
        p = nn.QParams(spec, arrays)
        h_hat = np.array([2.0, 3.0, 5.0, 1.0])
        # hidden = relu([2 + 1, 3 - 1 - 1]) = [3, 1]
        np.testing.assert_allclose(nn.q_head(h_hat, p), [3.5, 1.0, 7.0])

    def test_wrong_width(self):
        p = nn.init_params(nn.NetSpec(d_h=4, hidden=3), np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            nn.q_head(np.ones(5), p)


class TestBackward:
    @pytest.mark.parametrize("encoder", [nn.BIGRU, nn.FEEDFORWARD])
    @pytest.mark.parametrize("d_h", [4, 8])
    def test_finite_differences(self, encoder, d_h):
        rng = np.random.default_rng(d_h)
        spec = nn.NetSpec(encoder=encoder, d_a=3, d_h=d_h, hidden=6)
        params = nn.init_params(spec, rng)
        w = random_windows(spec, rng, batch=3, length=5)
        target = rng.normal(size=(3, 3))
        assert nn.finite_difference_check(params, w, sq_loss(target)) < 1e-4

    def test_sign_flip_detected(self):
        rng = np.random.default_rng(0)
        spec = nn.NetSpec(d_a=2, d_h=4, hidden=4)
        params = nn.init_params(spec, rng)
        w = random_windows(spec, rng)
        loss = sq_loss(rng.normal(size=(2, 3)))
        q, tape = nn.forward(params, w)
        grads = {k: -v for k, v in nn.backward(params, tape, loss(q)[1]).items()}
        assert nn.finite_difference_check(params, w, loss, grads=grads) == pytest.approx(2.0, abs=1e-4)

    def test_zero_loss(self):
        rng = np.random.default_rng(0)
        spec = nn.NetSpec(d_a=2, d_h=4, hidden=4)
        params = nn.init_params(spec, rng)
        w = random_windows(spec, rng)
        zero = lambda q: (0.0, np.zeros_like(q))
        q, tape = nn.forward(params, w)
        assert all(np.all(g == 0) for g in nn.backward(params, tape, np.zeros_like(q)).values())
        assert nn.finite_difference_check(params, w, zero) == 0.0

    def test_unused_embedding_row(self):
        rng = np.random.default_rng(0)
        spec = nn.NetSpec(d_a=2, d_h=4, hidden=4)
        params = nn.init_params(spec, rng)
        w = random_windows(spec, rng)
        w = nn.Windows(np.where(w.act_idx == 2, 0, w.act_idx), w.account, w.prices)
        q, tape = nn.forward(params, w)
        g = nn.backward(params, tape, np.ones_like(q))
        assert np.all(g["embed"][2] == 0)

    def test_requires_tape(self):
        p = nn.init_params(nn.NetSpec(d_h=4, hidden=3), np.random.default_rng(0))
        with pytest.raises(NoRecordedForward):
            nn.backward(p, None, np.zeros((1, 3)))
        with pytest.raises(NoRecordedForward):
            nn.QNetwork(p).backward(np.zeros((1, 3)))


class TestAdam:
    def test_zero_gradients(self):
        p = nn.init_params(nn.NetSpec(d_h=4, hidden=3), np.random.default_rng(0))
        new = nn.optimizer_step(p, p.zeros_like(), nn.Adam())
        assert new.equals(p)

    def test_hand_update(self):
        spec = nn.NetSpec(d_h=2, hidden=1)
        p = nn.init_params(spec, np.random.default_rng(0))
        g = p.zeros_like()
        g["q_b1"][0] = 0.5
        opt = nn.Adam(nn.AdamConfig(lr=0.01))
        p1 = opt.step(p, g)
        # bias-corrected first step moves by lr * g / (|g| + eps)
        assert p1["q_b1"][0] == pytest.approx(-0.01 * 0.5 / (0.5 + 1e-8), abs=1e-15)
        g["q_b1"][0] = -0.25
        p2 = opt.step(p1, g)
        m = (0.9 * 0.1 * 0.5 + 0.1 * -0.25) / (1 - 0.9 ** 2)
        v = (0.999 * 0.001 * 0.25 + 0.001 * 0.0625) / (1 - 0.999 ** 2)
        assert p2["q_b1"][0] == pytest.approx(p1["q_b1"][0] - 0.01 * m / (math.sqrt(v) + 1e-8), abs=1e-15)

    def test_clipping(self):
        p = nn.init_params(nn.NetSpec(d_h=2, hidden=1), np.random.default_rng(0))
        g = p.zeros_like()
        g["q_b2"][:] = [30.0, 40.0, 0.0]
        a = nn.Adam(nn.AdamConfig(clip_norm=5.0))
        a.step(p, g)
        np.testing.assert_allclose(a.m["q_b2"], 0.1 * np.array([3.0, 4.0, 0.0]))

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            spec = nn.NetSpec(d_a=2, d_h=4, hidden=4)
            p = nn.init_params(spec, rng)
            w = random_windows(spec, rng)
            opt = nn.Adam()
            for _ in range(5):
                q, tape = nn.forward(p, w)
                p = opt.step(p, nn.backward(p, tape, q))
            return p
        assert run().equals(run())


class TestCheckpoint:
    @pytest.mark.parametrize("encoder", [nn.BIGRU, nn.FEEDFORWARD])
    def test_round_trip(self, tmp_path, encoder):
        spec = nn.NetSpec(encoder=encoder, d_a=2, d_h=6, hidden=5)
        p = nn.init_params(spec, np.random.default_rng(0))
        path = tmp_path / "p.json"
        nn.save_params(p, path)
        q = nn.load_params(path, spec)
        assert q.equals(p)

    def test_spec_mismatch(self, tmp_path):
        p = nn.init_params(nn.NetSpec(d_h=4, hidden=3), np.random.default_rng(0))
        nn.save_params(p, tmp_path / "p.json")
        with pytest.raises(ShapeMismatch):
            nn.load_params(tmp_path / "p.json", nn.NetSpec(d_h=6, hidden=3))

    def test_bad_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            nn.load_params(tmp_path / "x.json")


class TestNetSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            nn.NetSpec(encoder="lstm")
        with pytest.raises(ValueError):
            nn.NetSpec(d_h=5)

    def test_feedforward_width(self):
        p = nn.init_params(nn.NetSpec(encoder=nn.FEEDFORWARD, d_h=4, hidden=3),
                           np.random.default_rng(0))
        w = random_windows(p.spec, np.random.default_rng(0))
        assert nn.forward(p, w)[1].h_hat.shape == (2, 8)
