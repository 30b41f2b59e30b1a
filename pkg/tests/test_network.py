import numpy as np
import pytest

from domenet.activations import MdomeParams, simplex_vertices
from domenet.network import (
    Activation,
    Conv2d,
    Dense,
    DomeActivation,
    Flatten,
    MaxPool,
    MdomeHead,
    Network,
    PdomeActivation,
    StaleCacheError,
    build_network,
    load_checkpoint,
    logit_decompose,
    loss,
    predict_from_output,
    save_checkpoint,
)
from domenet.tensor import ShapeError

LN2 = 0.6931471805599453
LN3 = 1.0986122886681098


def numeric_grad(arr, f, h=1e-5):
    """Central-difference gradient of f() with respect to the array in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        lp = f()
        arr[idx] = old - h
        lm = f()
        arr[idx] = old
        g[idx] = (lp - lm) / (2.0 * h)
    return g


def check_network_gradients(net, x, y, rtol=1e-4, atol=1e-7, h=1e-5):
    out, _, cache = net.forward(x)
    value, dout = loss(net.loss_kind, out, y)
    grads, d_input = net.backward(cache, dout)

    def f():
        out2, _, _ = net.forward(x)
        return loss(net.loss_kind, out2, y)[0]

    for p in net.parameters():
        fd = numeric_grad(p.value, f, h=h)
        assert np.allclose(grads[p.key], fd, rtol=rtol, atol=atol), p.key
    fd_in = numeric_grad(x, f, h=h)
    assert np.allclose(d_input, fd_in, rtol=rtol, atol=atol)


class TestForward:
    def test_single_logit_sigmoid_at_origin(self):
        layer = Dense(2, 1, bias=False)
        layer.w[...] = [[1.0], [1.0]]
        net = Network([layer, Activation("sigmoid")], embedding_index=0, loss_kind="bce")
        out, _, _ = net.forward(np.zeros((1, 2)))
        assert out[0, 0] == 0.5

    def test_lenet_yields_2d_embedding(self):
        net = build_network("lenet-2d", "sigmoid", 2, seed=0)
        out, emb, _ = net.forward(np.zeros((1, 1, 28, 28)))
        assert emb.shape == (1, 2)
        assert out.shape == (1, 1)

    def test_mdome_head_uniform_at_origin(self):
        ident = Dense(2, 2, bias=False)
        ident.w[...] = np.eye(2)
        proj = Dense(2, 2, bias=False)
        head = MdomeHead(MdomeParams(refs=simplex_vertices(3)))
        net = Network([ident, proj, head], embedding_index=0, loss_kind="mse")
        out, _, _ = net.forward(np.zeros((1, 2)))
        assert np.allclose(out, 1.0 / 3.0, atol=1e-12)

    def test_shape_mismatch_raises(self):
        net = build_network("mlp", "softmax", 3, input_shape=(2,), seed=0)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((4, 5)))


class TestBackward:
    def test_dense_weight_gradient_is_input_outer_product(self):
        rng = np.random.default_rng(0)
        layer = Dense(3, 2, bias=False, rng=rng)
        x = rng.standard_normal((4, 3))
        _, ctx = layer.forward(x)
        dy = rng.standard_normal((4, 2))
        _, grads = layer.backward(ctx, dy)
        oracle = np.zeros((3, 2))
        for b in range(4):
            oracle += np.outer(x[b], dy[b])
        assert np.allclose(grads["w"], oracle, atol=1e-12)

    def test_zero_loss_gradient_gives_zero_param_gradients(self):
        net = build_network("mlp", "softmax", 3, input_shape=(2,), seed=1)
        out, _, cache = net.forward(np.random.default_rng(2).uniform(size=(5, 2)))
        grads, d_in = net.backward(cache, np.zeros_like(out))
        assert all(np.allclose(g, 0.0) for g in grads.values())
        assert np.allclose(d_in, 0.0)

    def test_stale_cache_rejected(self):
        net = build_network("mlp", "softmax", 3, input_shape=(2,), seed=1)
        out, _, cache = net.forward(np.zeros((2, 2)))
        net.mark_updated()
        with pytest.raises(StaleCacheError):
            net.backward(cache, np.zeros_like(out))

    def test_gradients_sigmoid_head_dense_net(self):
        rng = np.random.default_rng(3)
        net = Network(
            [Dense(2, 4, rng=rng), Activation("tanh"), Dense(4, 1, rng=rng),
             Activation("sigmoid")],
            embedding_index=1, loss_kind="bce",
        )
        x = rng.uniform(-1, 1, size=(6, 2))
        y = rng.integers(0, 2, size=6)
        check_network_gradients(net, x, y)

    def test_gradients_dome_head_with_pdome_hidden(self):
        rng = np.random.default_rng(4)
        net = Network(
            [Dense(2, 4, rng=rng), PdomeActivation(), Dense(4, 1, rng=rng),
             DomeActivation()],
            embedding_index=1, loss_kind="bce",
        )
        x = rng.uniform(-1, 1, size=(6, 2))
        y = rng.integers(0, 2, size=6)
        check_network_gradients(net, x, y)

    def test_gradients_mdome_head(self):
        rng = np.random.default_rng(5)
        net = Network(
            [Dense(3, 4, rng=rng), Activation("tanh"), Dense(4, 2, rng=rng),
             MdomeHead(MdomeParams(refs=simplex_vertices(3), sigma=2.0))],
            embedding_index=2, loss_kind="mse",
        )
        x = rng.uniform(-1, 1, size=(5, 3))
        y = rng.integers(0, 3, size=5)
        check_network_gradients(net, x, y)

    def test_gradients_conv_pool_net(self):
        rng = np.random.default_rng(6)
        net = Network(
            [Conv2d(1, 2, 3, padding=1, rng=rng), Activation("tanh"), MaxPool(2),
             Conv2d(2, 3, 2, rng=rng), Activation("tanh"), Flatten(),
             Dense(3 * 2 * 2, 2, rng=rng)],
            embedding_index=5, loss_kind="ce_softmax",
        )
        x = rng.uniform(0, 1, size=(3, 1, 6, 6))
        y = rng.integers(0, 2, size=3)
        check_network_gradients(net, x, y)

    def test_gradients_softmax_activation_layer(self):
        rng = np.random.default_rng(7)
        net = Network(
            [Dense(3, 4, rng=rng), Activation("softmax"), Dense(4, 3, rng=rng)],
            embedding_index=1, loss_kind="ce_softmax",
        )
        x = rng.uniform(-1, 1, size=(4, 3))
        y = rng.integers(0, 3, size=4)
        check_network_gradients(net, x, y)

    def test_gradients_relu_and_maxpool(self):
        # inputs chosen away from relu kinks and pooling ties
        rng = np.random.default_rng(8)
        net = Network(
            [Conv2d(1, 2, 3, rng=rng), Activation("relu"), MaxPool(2), Flatten(),
             Dense(2 * 2 * 2, 2, rng=rng)],
            embedding_index=3, loss_kind="ce_softmax",
        )
        x = rng.uniform(0.1, 1, size=(3, 1, 6, 6))
        y = rng.integers(0, 2, size=3)
        check_network_gradients(net, x, y)


class TestLoss:
    def test_mse_zero_at_exact_one_hot(self):
        out = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        value, grad = loss("mse", out, np.array([1, 0]))
        assert value == 0.0
        assert np.array_equal(grad, np.zeros_like(out))

    def test_bce_at_half(self):
        value, _ = loss("bce", np.array([[0.5]]), np.array([1]))
        assert value == pytest.approx(LN2, rel=1e-12)

    def test_ce_uniform_logits(self):
        value, _ = loss("ce_softmax", np.zeros((1, 3)), np.array([0]))
        assert value == pytest.approx(LN3, rel=1e-12)

    def test_ce_shift_invariance(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((5, 4))
        y = rng.integers(0, 4, size=5)
        v1, g1 = loss("ce_softmax", logits, y)
        v2, g2 = loss("ce_softmax", logits + 123.456, y)
        assert v1 == pytest.approx(v2, abs=1e-10)
        assert np.allclose(g1, g2, atol=1e-10)

    def test_bce_domain_error(self):
        with pytest.raises(ValueError):
            loss("bce", np.array([[1.0]]), np.array([1]))
        with pytest.raises(ValueError):
            loss("bce", np.array([[-0.1]]), np.array([0]))

    def test_loss_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        for kind, out in (
            ("bce", rng.uniform(0.05, 0.95, size=(6, 1))),
            ("ce_softmax", rng.standard_normal((6, 4))),
            ("mse", rng.uniform(0, 1, size=(6, 4))),
        ):
            y = rng.integers(0, out.shape[1] if out.shape[1] > 1 else 2, size=6)
            _, grad = loss(kind, out, y)
            fd = numeric_grad(out, lambda: loss(kind, out, y)[0], h=1e-6)
            assert np.allclose(grad, fd, rtol=1e-5, atol=1e-8), kind


class TestPredict:
    def test_vector_argmax(self):
        assert predict_from_output(np.array([[0.2, 0.7, 0.1]]))[0] == 1

    def test_scalar_threshold_boundary(self):
        assert predict_from_output(np.array([[0.5]]))[0] == 1
        assert predict_from_output(np.array([[0.4999]]))[0] == 0

    def test_mdome_anchor_classified_to_own_class(self):
        p = MdomeParams(refs=simplex_vertices(3))
        head = MdomeHead(p)
        net = Network([Dense(2, 2, bias=False), head], embedding_index=0, loss_kind="mse")
        net.layers[0].w[...] = np.eye(2)
        x = (float(p.mu) * p.refs.vertices[2])[None, :]
        assert net.predict(x)[0] == 2

    def test_argmax_tie_lowest_index(self):
        assert predict_from_output(np.array([[0.4, 0.4, 0.2]]))[0] == 0


class TestLogitDecompose:
    def test_parallel_unit_vectors(self):
        assert logit_decompose([1.0, 0.0], [1.0, 0.0]) == (1.0, 1.0, 1.0, 1.0)

    def test_orthogonal(self):
        _, _, cos_t, z = logit_decompose([0.0, 1.0], [1.0, 0.0])
        assert cos_t == 0.0 and z == 0.0

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            x = rng.standard_normal(5)
            w = rng.standard_normal(5)
            norm_x, norm_w, cos_t, z = logit_decompose(x, w)
            assert z == pytest.approx(float(np.dot(x, w)), abs=1e-12)
            assert norm_x * norm_w * cos_t == pytest.approx(z, rel=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            logit_decompose([0.0, 0.0], [1.0, 0.0])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        net = build_network("mlp", "mdome", 3, input_shape=(2,), seed=42)
        path = tmp_path / "model.dome"
        save_checkpoint(net, path)
        restored = load_checkpoint(path)
        for a, b in zip(net.parameters(), restored.parameters()):
            assert a.key == b.key
            assert np.array_equal(a.value, b.value)
        # identical bytes when re-saved
        path2 = tmp_path / "again.dome"
        save_checkpoint(restored, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_magic_header(self, tmp_path):
        net = build_network("mlp", "softmax", 3, input_shape=(2,), seed=0)
        path = tmp_path / "model.dome"
        save_checkpoint(net, path)
        assert path.read_bytes()[:5] == b"DOME1"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.dome"
        path.write_bytes(b"NOPE1" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_forward_deterministic(self):
        net = build_network("mlp", "softmax", 3, input_shape=(2,), seed=7)
        x = np.random.default_rng(1).uniform(size=(8, 2))
        out1, _, _ = net.forward(x)
        out2, _, _ = net.forward(x)
        assert np.array_equal(out1, out2)
