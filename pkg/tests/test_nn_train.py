import numpy as np
import pytest

from _oracles import float_lr_train
from trimpc.bilinear import ConvShape
from trimpc.errors import DataError
from trimpc.nn_train import (
    TrainConfig,
    cnn_train_step,
    count_domain_violations,
    gaussian_blobs,
    glorot_uniform,
    load_dataset,
    lr_step_closed_form_bits,
    lr_train_step,
    make_toy_cnn,
    sim_cnn_step,
    sim_lr_step,
    take_rows,
    validate_binary_labels,
)
from trimpc.oracle_metrics import auc_score, float_softmax
from trimpc.ring import RingParams, decode, encode, words_to_signed
from trimpc.session import LocalSimHarness, run_local_sim
from trimpc.sharing import open_share, reconstruct, share
from trimpc.transport import PartyId, Phase

P = RingParams()
F = P.f


class TestLrStep:
    def test_residual_zero_keeps_weights(self):
        # constant targets 0.5 with w=0: sigmoid(0) = 0.5 kills the residual
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (16, 4))
        cfg = TrainConfig(learning_rate=0.5, batch_size=16, iterations=1)

        def job(sess):
            Xs = sess.input_share("X", encode(X, P, F))
            ys = sess.input_share("y", encode(np.full(16, 0.5), P, F))
            ws = sess.input_share("w", encode(np.zeros(4), P, F))
            return open_share(sess, lr_train_step(sess, Xs, ys, ws, cfg))

        res, _ = run_local_sim(job, P, seed="lr-zero")
        assert np.abs(decode(res[PartyId.P0].value)).max() <= 2 * 2.0**-F

    def test_hand_computed_step(self):
        # X=[[1]], y=[1], w=[0], lr=0.25, B=1: grad = 0.5-1, update = +0.125
        cfg = TrainConfig(learning_rate=0.25, batch_size=1, iterations=1)

        def job(sess):
            Xs = sess.input_share("X", encode([[1.0]], P, F))
            ys = sess.input_share("y", encode([1.0], P, F))
            ws = sess.input_share("w", encode([0.0], P, F))
            return open_share(sess, lr_train_step(sess, Xs, ys, ws, cfg))

        res, _ = run_local_sim(job, P, seed="lr-hand")
        assert decode(res[PartyId.P0].value)[0] == pytest.approx(0.125, abs=1e-3)

    def test_simulator_tracks_protocol(self):
        X, y = gaussian_blobs(256, 6, seed=3)
        cfg = TrainConfig(learning_rate=0.01, batch_size=64, iterations=10, seed=3)
        Xq, yq = encode(X, P, F), encode(y, P, F)
        w0q = encode(np.zeros(6), P, F)

        def job(sess):
            Xs = sess.input_share("X", Xq)
            ys = sess.input_share("y", yq)
            ws = sess.input_share("w", w0q)
            snaps = []
            for it in range(cfg.iterations):
                rows = slice((it * 64) % 192, (it * 64) % 192 + 64)
                ws = lr_train_step(sess, take_rows(Xs, rows), take_rows(ys, rows), ws, cfg)
                snaps.append(open_share(sess, ws, name=f"w{it}"))
            return snaps

        h = LocalSimHarness(P, seed="lr-sim")
        h.sessions[PartyId.P2].debug_record = True
        res = h.run(job)
        masks = list(h.sessions[PartyId.P2].debug.values())
        X_sv = words_to_signed(Xq.words, P).reshape(X.shape)
        y_sv = words_to_signed(yq.words, P).reshape(y.shape)
        w_prev = words_to_signed(w0q.words, P).copy()
        for it, snap in enumerate(res[PartyId.P0].value):
            rows = slice((it * 64) % 192, (it * 64) % 192 + 64)
            w_sim = sim_lr_step(X_sv[rows], y_sv[rows], w_prev, cfg, P, masks[it])
            w_prot = words_to_signed(snap.words, P)
            assert np.abs(w_prot - w_sim).max() <= 2  # LSBs at scale f
            w_prev = w_prot.copy()

    def test_step_comm_matches_closed_form(self):
        cfg = TrainConfig(learning_rate=0.01, batch_size=8, iterations=1)

        def job(sess):
            Xs = sess.zeros_share((8, 3), F)
            ys = sess.zeros_share((8,), F)
            ws = sess.zeros_share((3,), F)
            lr_train_step(sess, Xs, ys, ws, cfg)

        _, stats = run_local_sim(job, P, seed="lr-comm", accounting_only=True)
        closed = lr_step_closed_form_bits(8, 3, P.n, F)
        assert stats.phase_bits(Phase.ONLINE) == closed["online_bits"]
        assert stats.phase_bits(Phase.OFFLINE) == closed["offline_bits"]
        assert stats.round_count(Phase.ONLINE) == closed["online_rounds"] == 3

    def test_auc_parity_short(self):
        X, y = gaussian_blobs(600, 8, seed=9)
        cfg = TrainConfig(learning_rate=0.01, batch_size=128, iterations=20, seed=9)

        def job(sess):
            Xs = sess.input_share("X", encode(X, P, F))
            ys = sess.input_share("y", encode(y, P, F))
            ws = sess.input_share("w", encode(np.zeros(8), P, F))
            for it in range(cfg.iterations):
                lo = (it * 128) % (600 - 128 + 1)
                ws = lr_train_step(
                    sess, take_rows(Xs, slice(lo, lo + 128)), take_rows(ys, slice(lo, lo + 128)), ws, cfg
                )
            return open_share(sess, ws)

        res, _ = run_local_sim(job, P, seed="lr-auc", timeout=120.0)
        w_sec = decode(res[PartyId.P0].value)
        w_flt = float_lr_train(X, y, 0.01, 128, 20)
        auc_sec = auc_score(y, X @ w_sec)
        auc_flt = auc_score(y, X @ w_flt)
        assert abs(auc_sec - auc_flt) <= 0.01

    def test_domain_warning_counter(self):
        assert count_domain_violations([1.0, -7.9, 8.2, -12.0]) == 2


class TestCnnStep:
    CV = ConvShape(B=4, m=8, n=8, C=1, r=2, s=2, D=2)
    CLASSES = 3

    def _data(self, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, self.CV.input_shape)
        labels = rng.integers(0, self.CLASSES, self.CV.B)
        return x, np.eye(self.CLASSES)[labels]

    def test_uniform_logits_head_gradient(self):
        # zero dense weights give zero logits; softmax outputs are uniform
        x, onehot = self._data(1)
        cfg = TrainConfig(learning_rate=0.01, batch_size=self.CV.B)
        cv = self.CV

        def job(sess):
            from trimpc.nn_train import ToyCnn, conv_layer, dense_layer, sigmoid_layer

            xs = sess.input_share("x", encode(x, P, F))
            hidden = cv.m_out * cv.n_out * cv.D
            wc = sess.input_share("wc", encode(np.zeros(cv.filter_shape) + 0.1, P, F))
            wd = sess.input_share("wd", encode(np.zeros((hidden, self.CLASSES)), P, F))
            model = ToyCnn(conv_layer(wc, cv), sigmoid_layer(), dense_layer(wd, cv.B))
            from trimpc.nonlinear import softmax_protocol
            from trimpc.proto_bm import bm_multiply
            from trimpc.sharing import truncate_share

            z1 = truncate_share(bm_multiply(sess, model.conv.fwd_spec, xs, wc).share, F)
            from trimpc.nonlinear import sigmoid_fourier

            p1 = sigmoid_fourier(sess, z1.reshape((cv.B * hidden,)))
            flat = p1.reshape((cv.B, hidden))
            logits = truncate_share(
                bm_multiply(sess, model.dense.fwd_spec, flat, wd).share, F
            )
            probs = softmax_protocol(sess, logits)
            return open_share(sess, probs)

        res, _ = run_local_sim(job, P, seed="cnn-uniform")
        probs = decode(res[PartyId.P0].value)
        assert np.abs(probs - 1.0 / self.CLASSES).max() <= 2.0**-12

    def test_zero_upstream_gradient_zero_update(self):
        # bilinearity: f(0, x) = 0 exactly, so zero residual moves nothing
        from trimpc.proto_bm import bm_multiply
        from trimpc.bilinear import backward_specs, conv_fwd_spec

        cv = self.CV
        fwd = conv_fwd_spec(cv)
        _, bwd_f = backward_specs(fwd)
        rng = np.random.default_rng(2)
        xq = encode(rng.uniform(-1, 1, cv.input_shape), P, F)

        def job(sess):
            xs = sess.input_share("x", xq)
            dz = sess.input_share("dz", encode(np.zeros(cv.output_shape), P, F))
            return open_share(sess, bm_multiply(sess, bwd_f, dz, xs).share)

        res, _ = run_local_sim(job, P, seed="cnn-zero")
        assert np.all(res[PartyId.P0].value.words == 0)

    def test_filter_gradient_matches_finite_differences(self):
        # single example, single 2x2 filter, CE loss on true softmax
        cv = ConvShape(B=1, m=4, n=4, C=1, r=2, s=2, D=1)
        classes = 2
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, cv.input_shape)
        label = 1
        onehot = np.eye(classes)[[label]]
        hidden = cv.m_out * cv.n_out * cv.D
        wc0 = glorot_uniform(cv.filter_shape, 4, 4, rng)
        wd0 = glorot_uniform((hidden, classes), hidden, classes, rng)
        cfg = TrainConfig(learning_rate=1.0, batch_size=1)

        def job(sess):
            from trimpc.nn_train import ToyCnn, conv_layer, dense_layer, sigmoid_layer

            xs = sess.input_share("x", encode(x, P, F))
            os_ = sess.input_share("onehot", encode(onehot, P, F))
            wc = sess.input_share("wc", encode(wc0, P, F))
            wd = sess.input_share("wd", encode(wd0, P, F))
            model = ToyCnn(conv_layer(wc, cv), sigmoid_layer(), dense_layer(wd, cv.B))
            new_model = cnn_train_step(sess, xs, os_, model, cfg)
            # with lr/B = 1 the update equals the (truncated) gradient
            grad = model.conv.param.sub(new_model.conv.param)
            return open_share(sess, grad)

        res, _ = run_local_sim(job, P, seed="cnn-fd")
        got = decode(res[PartyId.P0].value).reshape(cv.filter_shape)

        from trimpc.oracle_metrics import central_difference_grad, float_conv2d, float_sigmoid

        def loss(wc_f):
            z = float_conv2d(x, wc_f, cv)
            act = float_sigmoid(z).reshape(1, hidden)
            probs = float_softmax(act @ wd0)
            return float(-np.log(probs[0, label]))

        fd = central_difference_grad(loss, wc0.copy())
        # vector-relative: near-zero components would turn fixed-point LSBs
        # into unbounded pointwise ratios
        rel = np.linalg.norm(got - fd) / np.linalg.norm(fd)
        assert rel < 1e-2

    def test_simulator_tracks_protocol(self):
        x, onehot = self._data(5)
        cv = self.CV
        cfg = TrainConfig(learning_rate=0.05, batch_size=cv.B, iterations=4, seed=5)
        xq, oq = encode(x, P, F), encode(onehot, P, F)

        def job(sess):
            xs = sess.input_share("x", xq)
            os_ = sess.input_share("onehot", oq)
            model = make_toy_cnn(sess, cv, self.CLASSES, seed=7)
            snaps = []
            for it in range(cfg.iterations):
                model = cnn_train_step(sess, xs, os_, model, cfg)
                snaps.append(
                    (
                        open_share(sess, model.conv.param, f"wc{it}"),
                        open_share(sess, model.dense.param, f"wd{it}"),
                    )
                )
            return snaps

        h = LocalSimHarness(P, seed="cnn-sim", timeout=120.0)
        h.sessions[PartyId.P2].debug_record = True
        res = h.run(job)
        masks = list(h.sessions[PartyId.P2].debug.values())

        rng = np.random.default_rng(7)
        hidden = cv.m_out * cv.n_out * cv.D
        wc = glorot_uniform(cv.filter_shape, cv.r * cv.s * cv.C, cv.r * cv.s * cv.D, rng)
        wd = glorot_uniform((hidden, self.CLASSES), hidden, self.CLASSES, rng)
        wc_sv = words_to_signed(encode(wc, P, F).words, P).reshape(cv.filter_shape)
        wd_sv = words_to_signed(encode(wd, P, F).words, P).reshape(hidden, self.CLASSES)
        x_sv = words_to_signed(xq.words, P).reshape(cv.input_shape)
        o_sv = words_to_signed(oq.words, P).reshape(cv.B, self.CLASSES)
        for it, (wc_s, wd_s) in enumerate(res[PartyId.P0].value):
            wc_new, wd_new = sim_cnn_step(
                x_sv, o_sv, wc_sv, wd_sv, cv, 16, cfg, P, masks[it]
            )
            pc = words_to_signed(wc_s.words, P).reshape(cv.filter_shape)
            pd = words_to_signed(wd_s.words, P).reshape(hidden, self.CLASSES)
            assert np.abs(pc - wc_new).max() <= 2
            assert np.abs(pd - wd_new).max() <= 2
            wc_sv, wd_sv = pc.copy(), pd.copy()


class TestData:
    def test_toy_csv(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("a,b,label\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n")
        X, y = load_dataset(str(p), seed=1)
        assert X.shape == (3, 2) and y.shape == (3,)
        assert X.min() >= -1.0 and X.max() <= 1.0
        validate_binary_labels(y)

    def test_parse_error_diagnostics(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1.0,2.0,0\n3.0,oops,1\n")
        with pytest.raises(DataError, match="row 2, column 2"):
            load_dataset(str(p))

    def test_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("1.0,2.0,0\n3.0,1\n")
        with pytest.raises(DataError, match="row 2"):
            load_dataset(str(p))

    def test_nonbinary_labels_rejected(self, tmp_path):
        p = tmp_path / "multi.csv"
        p.write_text("1.0,0\n2.0,2\n")
        X, y = load_dataset(str(p))
        with pytest.raises(DataError):
            validate_binary_labels(y)

    def test_deterministic_shuffle(self, tmp_path):
        p = tmp_path / "rows.csv"
        p.write_text("\n".join(f"{i},.5" for i in range(20)))
        X1, _ = load_dataset(str(p), seed=4)
        X2, _ = load_dataset(str(p), seed=4)
        X3, _ = load_dataset(str(p), seed=5)
        assert np.array_equal(X1, X2)
        assert not np.array_equal(X1, X3)

    def test_share_roundtrip_of_loaded_data(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        X, _ = load_dataset(str(p))
        t = encode(X, P, F)
        rng = np.random.default_rng(0)
        s0, s1 = share(t, rng)
        assert np.array_equal(reconstruct(s0, s1).words, t.words)
