import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fd_oracle import fd_input_grad, fd_param_grads, rel_err
from featacq.core import DimensionMismatchError, FeatureCatalog, FeatureMeta, as_cost, initial_state, query
from featacq.nets import (
    AdamConfig,
    BinaryCode,
    BitEncoder,
    DenoisingAutoencoder,
    DenseNet,
    Layer,
    NonFiniteInputError,
    NonFiniteLossError,
    OutOfRangeError,
    StaleCacheError,
    adam_step,
    backward,
    bernoulli_reconstruction,
    corrupt_bits,
    cross_entropy,
    dae_missing_posteriors,
    decode_binary,
    dense_net,
    encode_binary,
    fit,
    forward,
    init_adam,
    load_net,
    make_rng,
    mc_certainty,
    minibatches,
    net_from_dict,
    net_to_dict,
    predict_proba,
    save_net,
    squared,
    train_epoch,
)


def softmax_np(z):
    e = np.exp(z - z.max())
    return e / e.sum()


class TestForward:
    def test_identity_layer_passes_input_through(self):
        net = DenseNet([Layer(np.eye(4), np.zeros(4), "identity")])
        x = np.array([1.0, -2.0, 0.5, 3.0])
        out, _ = forward(net, x)
        assert np.array_equal(out, x)

    def test_softmax_symmetry(self):
        net = DenseNet([Layer(np.eye(3), np.zeros(3), "softmax")])
        out, _ = forward(net, np.zeros(3))
        assert np.allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)

    def test_softmax_sums_to_one(self):
        net = dense_net([5, 8, 3], ["relu", "softmax"], rng=0)
        x = make_rng(1).normal(size=(20, 5)) * 10
        out, _ = forward(net, x)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out >= 0)

    def test_zero_dropout_train_equals_eval(self):
        net = dense_net([4, 6, 2], ["relu", "identity"], dropout=0.0, rng=3)
        x = make_rng(4).normal(size=(7, 4))
        train_out, _ = forward(net, x, mode="train", rng=5)
        eval_out, _ = forward(net, x, mode="eval")
        assert np.array_equal(train_out, eval_out)

    def test_dropout_deterministic_under_seed(self):
        net = dense_net([4, 16, 2], ["relu", "identity"], dropout=[0.5, 0.0], rng=0)
        x = make_rng(1).normal(size=(5, 4))
        a, _ = forward(net, x, mode="train", rng=42)
        b, _ = forward(net, x, mode="train", rng=42)
        c, _ = forward(net, x, mode="train", rng=43)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rejects_nonfinite_and_bad_width(self):
        net = dense_net([3, 2], ["identity"], rng=0)
        with pytest.raises(NonFiniteInputError):
            forward(net, np.array([1.0, np.nan, 0.0]))
        with pytest.raises(DimensionMismatchError):
            forward(net, np.zeros(4))

    def test_softmax_must_be_last_and_dry(self):
        with pytest.raises(ValueError):
            DenseNet(
                [
                    Layer(np.eye(3), np.zeros(3), "softmax"),
                    Layer(np.eye(3), np.zeros(3), "identity"),
                ]
            )
        with pytest.raises(ValueError):
            DenseNet([Layer(np.eye(3), np.zeros(3), "softmax", dropout_rate=0.2)])

    def test_mismatched_layer_widths_rejected(self):
        with pytest.raises(ValueError):
            DenseNet(
                [
                    Layer(np.zeros((4, 3)), np.zeros(4), "relu"),
                    Layer(np.zeros((2, 5)), np.zeros(2), "identity"),
                ]
            )


class TestBackward:
    def test_linear_closed_form(self):
        # y = w*x, L = (y - 0)^2: dL/dw = 2*w*x*x, dL/dx = 2*w^2*x
        w = 1.7
        x = np.array([0.6])
        net = DenseNet([Layer(np.array([[w]]), np.zeros(1), "identity")])
        out, cache = forward(net, x, mode="train", rng=0)
        loss, grad = squared(out[None, :], np.zeros((1, 1)))
        grads = backward(net, cache, grad[0])
        assert loss == pytest.approx((w * 0.6) ** 2)
        assert grads.weights[0][0, 0] == pytest.approx(2 * w * 0.6 * 0.6)
        assert grads.x[0] == pytest.approx(2 * w * w * 0.6)

    def test_dead_relu_path(self):
        net = dense_net([3, 5, 2], ["relu", "identity"], rng=0)
        out, cache = forward(net, np.zeros(3), mode="train", rng=0)
        grads = backward(net, cache, np.ones(2))
        assert np.all(grads.weights[0] == 0.0)
        assert np.all(grads.x == 0.0)

    def test_matches_finite_differences_two_layer(self):
        gen = make_rng(7)
        net = dense_net([4, 8, 3], ["sigmoid", "softmax"], rng=gen)
        x = gen.normal(size=4)
        r = gen.normal(size=3)
        out, cache = forward(net, x, mode="train", rng=11)
        grads = backward(net, cache, r)
        fd = fd_param_grads(net, x, r, seed=11)
        analytic = []
        for i in range(len(net.layers)):
            analytic.extend([grads.weights[i], grads.biases[i]])
        for a, f in zip(analytic, fd):
            assert rel_err(a, f) <= 1e-4
        assert rel_err(grads.x, fd_input_grad(net, x, r, seed=11)) <= 1e-4

    def test_matches_finite_differences_with_dropout(self):
        # fixed seed pins the dropout masks, so the differentiated function is smooth
        gen = make_rng(19)
        net = dense_net([3, 10, 2], ["sigmoid", "identity"], dropout=[0.4, 0.0], rng=gen)
        x = gen.normal(size=3)
        r = gen.normal(size=2)
        out, cache = forward(net, x, mode="train", rng=99)
        grads = backward(net, cache, r)
        fd = fd_param_grads(net, x, r, seed=99)
        assert rel_err(grads.weights[0], fd[0]) <= 1e-4
        assert rel_err(grads.weights[1], fd[2]) <= 1e-4
        assert rel_err(grads.x, fd_input_grad(net, x, r, seed=99)) <= 1e-4

    def test_stale_cache_rejected(self):
        net = dense_net([3, 4, 2], ["relu", "identity"], rng=0)
        other = dense_net([3, 5, 2], ["relu", "identity"], rng=0)
        _, cache = forward(net, np.zeros(3), mode="train", rng=0)
        with pytest.raises(StaleCacheError):
            backward(other, cache, np.ones(2))
        with pytest.raises(StaleCacheError):
            backward(net, cache, np.ones(3))


class TestLosses:
    def test_cross_entropy_value_and_grad_through_softmax(self):
        net = DenseNet([Layer(np.eye(3), np.zeros(3), "softmax")])
        z = np.array([[1.0, 2.0, -1.0]])
        out, cache = forward(net, z, mode="train", rng=0)
        y = np.array([[0.0, 1.0, 0.0]])
        loss, grad = cross_entropy(out, y)
        assert loss == pytest.approx(-np.log(softmax_np(z[0])[1]))
        grads = backward(net, cache, grad)
        # through the softmax jacobian the logit gradient is (p - y) / n
        assert np.allclose(grads.x, softmax_np(z[0]) - y[0], atol=1e-12)

    def test_bernoulli_masking(self):
        out = np.array([[0.9, 0.2]])
        target = np.array([[1.0, 1.0]])
        w = np.array([[1.0, 0.0]])
        loss, grad = bernoulli_reconstruction(out, target, w)
        assert loss == pytest.approx(-np.log(0.9))
        assert grad[0, 1] == 0.0

    def test_squared_weighting(self):
        out = np.array([[1.0, 3.0]])
        target = np.array([[0.0, 0.0]])
        w = np.array([[1.0, 0.0]])
        loss, grad = squared(out, target, w)
        assert loss == pytest.approx(1.0)
        assert grad[0, 1] == 0.0


class TestTraining:
    def test_zero_learning_rate_keeps_parameters(self):
        net = dense_net([2, 4, 2], ["relu", "softmax"], rng=0)
        before = [l.weight.copy() for l in net.layers]
        x = make_rng(1).normal(size=(32, 2))
        y = np.tile([1.0, 0.0], (32, 1))
        cfg = AdamConfig(learning_rate=0.0, batch_size=8)
        train_epoch(net, [(x, y)], "cross-entropy", cfg, init_adam(net), rng=0)
        for w0, layer in zip(before, net.layers):
            assert np.array_equal(w0, layer.weight)

    def test_adam_first_step_is_signed_learning_rate(self):
        net = DenseNet([Layer(np.array([[1.0]]), np.zeros(1), "identity")])
        from featacq.nets import Gradients

        grads = Gradients(weights=[np.array([[0.5]])], biases=[np.array([0.0])], x=np.zeros(1))
        cfg = AdamConfig(learning_rate=0.01)
        adam_step(net, grads, init_adam(net), cfg)
        assert net.layers[0].weight[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-6)

    def test_separable_toy_reaches_99_percent(self):
        gen = make_rng(5)
        x = gen.normal(size=(200, 2))
        labels = (x[:, 0] + x[:, 1] > 0).astype(int)
        y = np.zeros((200, 2))
        y[np.arange(200), labels] = 1.0
        net = dense_net([2, 2], ["softmax"], rng=6)
        history = fit(net, x, y, "cross-entropy", AdamConfig(learning_rate=0.05, batch_size=32), epochs=200, rng=7)
        acc = (predict_proba(net, x).argmax(axis=1) == labels).mean()
        assert acc >= 0.99
        assert history[9] <= history[0]

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_nonfinite_loss_aborts(self):
        net = DenseNet([Layer(np.array([[1e200]]), np.zeros(1), "identity")])
        x = np.array([[1e200]])
        y = np.array([[0.0]])
        with pytest.raises(NonFiniteLossError):
            train_epoch(net, [(x, y)], "squared", AdamConfig(), init_adam(net), rng=0)

    def test_minibatches_cover_everything_once(self):
        seen = np.concatenate(list(minibatches(103, 16, rng=0)))
        assert sorted(seen) == list(range(103))


class TestCertainty:
    def make_peaked_net(self, dropout):
        # hidden identity layer carries the dropout, softmax head reads it straight
        return DenseNet(
            [
                Layer(np.eye(3), np.zeros(3), "identity", dropout_rate=dropout),
                Layer(np.eye(3), np.zeros(3), "softmax"),
            ]
        )

    def test_no_dropout_equals_single_pass(self):
        net = self.make_peaked_net(0.0)
        x = np.array([2.0, 0.5, -1.0])
        expected = predict_proba(net, x)
        for m in (1, 7, 50):
            cert, mean = mc_certainty(net, x, samples=m, rng=0)
            assert np.array_equal(mean, expected)
            assert cert == expected.max()

    def test_peaked_logits_with_mild_dropout(self):
        # exact reference: enumerate the 8 keep patterns of the 3 hidden units
        net = self.make_peaked_net(0.1)
        x = np.array([10.0, 0.0, 0.0])
        keep = 0.9
        expected = np.zeros(3)
        for pattern in itertools.product([0, 1], repeat=3):
            p_pattern = np.prod([keep if b else 1 - keep for b in pattern])
            logits = x * np.array(pattern) / keep
            expected += p_pattern * softmax_np(logits)
        cert, mean = mc_certainty(net, x, samples=10_000, rng=0)
        assert np.allclose(mean, expected, atol=0.02)
        assert cert >= 0.9

    def test_certainty_bounds(self):
        net = dense_net([4, 8, 3], ["relu", "softmax"], dropout=[0.3, 0.0], rng=0)
        for seed in range(5):
            x = make_rng(seed).normal(size=4)
            cert, _ = mc_certainty(net, x, samples=10, rng=seed)
            assert 1 / 3 <= cert <= 1.0

    def test_more_samples_less_spread(self):
        net = dense_net([4, 16, 3], ["relu", "softmax"], dropout=[0.5, 0.0], rng=1)
        x = make_rng(2).normal(size=4)
        small = [mc_certainty(net, x, samples=5, rng=s)[0] for s in range(50)]
        large = [mc_certainty(net, x, samples=100, rng=s)[0] for s in range(50)]
        assert np.std(large) < np.std(small)

    def test_requires_softmax_head(self):
        net = dense_net([3, 2], ["identity"], rng=0)
        with pytest.raises(ValueError):
            mc_certainty(net, np.zeros(3), samples=3, rng=0)


class TestBinaryCode:
    def test_known_encodings(self):
        assert list(encode_binary(0.5, 3)) == [1.0, 0.0, 0.0]
        assert list(encode_binary(0.0, 3)) == [0.0, 0.0, 0.0]
        assert list(encode_binary(0.875, 3)) == [1.0, 1.0, 1.0]

    def test_out_of_range(self):
        with pytest.raises(OutOfRangeError):
            encode_binary(0.9, 3)
        with pytest.raises(OutOfRangeError):
            encode_binary(-0.1, 3)

    def test_weights_are_halving(self):
        code = BinaryCode(levels=3, bits=(1.0, 0.0, 1.0))
        assert code.weights == (0.5, 0.25, 0.125)
        assert code.decode() == 0.625

    @given(st.integers(min_value=1, max_value=8), st.floats(min_value=0.0, max_value=1.0))
    def test_decode_within_half_step(self, levels, u):
        top = 1.0 - 2.0**-levels
        v = u * top
        decoded = decode_binary(encode_binary(v, levels))
        assert abs(decoded - v) <= 2.0 ** -(levels + 1) + 1e-12


def two_feature_catalog():
    return FeatureCatalog(
        [
            FeatureMeta("a", "real", "laboratory", as_cost(1)),
            FeatureMeta("b", "real", "laboratory", as_cost(1)),
        ]
    )


class TestBitEncoder:
    def test_min_max_scaling(self):
        cat = two_feature_catalog()
        train = np.array([[0.0, 10.0], [4.0, 20.0], [8.0, 30.0]])
        enc = BitEncoder.fit(train, cat, levels=3)
        bits = enc.encode(np.array([[8.0, 10.0]]), cat)
        # max value encodes to all ones, min to all zeros
        assert list(bits[0]) == [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]

    def test_out_of_range_clips(self):
        cat = two_feature_catalog()
        enc = BitEncoder.fit(np.array([[0.0, 0.0], [1.0, 1.0]]), cat, levels=2)
        bits = enc.encode(np.array([[5.0, -5.0]]), cat)
        assert list(bits[0]) == [1.0, 1.0, 0.0, 0.0]

    def test_wide_feature_uses_code_index(self):
        cat = FeatureCatalog(
            [
                FeatureMeta("a", "real", "laboratory", as_cost(1)),
                FeatureMeta("c", "categorical", "questionnaire", as_cost(1), 3),
            ]
        )
        rows = np.array(
            [
                [0.0, 1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 1.0],
            ]
        )
        enc = BitEncoder.fit(rows, cat, levels=2)
        scal = enc.scalars(rows, cat)
        assert scal.tolist() == [[0.0, 0.0], [1.0, 2.0]]

    def test_constant_feature_encodes_to_zero(self):
        cat = two_feature_catalog()
        enc = BitEncoder.fit(np.array([[3.0, 0.0], [3.0, 1.0]]), cat, levels=3)
        bits = enc.encode(np.array([[3.0, 0.5]]), cat)
        assert list(bits[0][:3]) == [0.0, 0.0, 0.0]


class TestDenoisingAutoencoder:
    def test_validation(self):
        with pytest.raises(ValueError):
            DenoisingAutoencoder(dense_net([6, 4], ["sigmoid"], rng=0))
        with pytest.raises(ValueError):
            DenoisingAutoencoder(dense_net([6, 6], ["identity"], rng=0))

    def test_zero_net_gives_half_everywhere(self):
        cat = two_feature_catalog()
        enc = BitEncoder.fit(np.array([[0.0, 0.0], [1.0, 1.0]]), cat, levels=3)
        net = DenseNet([Layer(np.zeros((6, 6)), np.zeros(6), "sigmoid")])
        dae = DenoisingAutoencoder(net)
        state = initial_state(cat)
        post = dae_missing_posteriors(dae, state, enc, cat)
        assert np.all(post == 0.5)

    def test_acquired_features_pass_through(self):
        cat = two_feature_catalog()
        enc = BitEncoder.fit(np.array([[0.0, 0.0], [1.0, 1.0]]), cat, levels=3)
        net = dense_net([6, 8, 6], ["relu", "sigmoid"], rng=0)
        dae = DenoisingAutoencoder(net)
        state = query(initial_state(cat), 0, 1.0, cat)
        post = dae_missing_posteriors(dae, state, enc, cat)
        assert list(post[0]) == [1.0, 1.0, 1.0]
        assert np.all((0 < post[1]) & (post[1] < 1))

    def test_corrupt_bits_blanks_unavailable(self):
        bits = np.ones((2, 4))
        avail = np.array([[True, False], [True, True]])
        out = corrupt_bits(bits, avail, levels=2, corruption_rate=0.0, rng=0)
        assert list(out[0]) == [1.0, 1.0, 0.5, 0.5]
        assert list(out[1]) == [1.0, 1.0, 1.0, 1.0]

    def test_learns_a_copied_feature(self):
        # feature b always equals feature a; a trained denoiser should
        # reconstruct b's bits from a's when b is missing
        cat = two_feature_catalog()
        gen = make_rng(0)
        vals = gen.random((512, 1))
        rows = np.hstack([vals, vals])
        enc = BitEncoder.fit(rows, cat, levels=3)
        bits = enc.encode(rows, cat)
        avail = np.ones((512, 2), dtype=bool)
        net = dense_net([6, 32, 6], ["relu", "sigmoid"], rng=1)
        dae = DenoisingAutoencoder(net, corruption_rate=0.5)
        cfg = AdamConfig(learning_rate=0.01, batch_size=64)
        state = init_adam(net)
        for epoch in range(120):
            parts = []
            for idx in minibatches(512, 64, rng=1000 + epoch):
                x = corrupt_bits(bits[idx], avail[idx], 3, 0.5, rng=2000 + epoch)
                w = np.repeat(avail[idx].astype(float), 3, axis=1)
                parts.append((x, bits[idx], w))
            train_epoch(net, parts, "bernoulli-reconstruction", cfg, state, rng=3000 + epoch)
        errs = []
        for row, row_bits in zip(rows[:64], bits[:64]):
            s = query(initial_state(cat), 0, row[0], cat)
            post = dae_missing_posteriors(dae, s, enc, cat)
            errs.append(np.abs(post[1] - row_bits[3:]).mean())
        assert np.mean(errs) <= 0.1


class TestCheckpoints:
    def test_round_trip_bit_identical(self):
        net = dense_net([3, 5, 2], ["relu", "softmax"], dropout=[0.2, 0.0], rng=0)
        buf = io.StringIO()
        save_net(net, buf)
        buf.seek(0)
        back = load_net(buf)
        for a, b in zip(net.layers, back.layers):
            assert np.array_equal(a.weight, b.weight)
            assert np.array_equal(a.bias, b.bias)
            assert a.activation == b.activation
            assert a.dropout_rate == b.dropout_rate

    def test_version_and_kind_checked(self):
        net = dense_net([2, 2], ["identity"], rng=0)
        doc = net_to_dict(net)
        doc["format_version"] = 99
        with pytest.raises(ValueError):
            net_from_dict(doc)
        doc = net_to_dict(net)
        doc["kind"] = "other"
        with pytest.raises(ValueError):
            net_from_dict(doc)
