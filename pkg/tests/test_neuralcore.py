import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vtmap import neuralcore as nc


def t64(a, grad=True):
    return nc.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -------------------------------------------------------------------- dense


def test_dense_identity_relu():
    w, b = t64(np.eye(2)), t64(np.zeros(2))
    out = nc.dense(t64([1.0, -2.0], False), w, b, "relu")
    np.testing.assert_array_equal(out.data, [1.0, 0.0])


def test_dense_linear_hand_product():
    w, b = t64([[1, 2], [3, 4]]), t64([1, 1])
    np.testing.assert_array_equal(nc.dense(t64([1, 1], False), w, b).data, [4.0, 8.0])


def test_dense_zero_weights_relu_gives_zero():
    w, b = t64(np.zeros((3, 5))), t64(np.zeros(3))
    x = np.random.default_rng(0).normal(size=5)
    np.testing.assert_array_equal(nc.dense(t64(x, False), w, b, "relu").data, np.zeros(3))


def test_dense_shape_mismatch_names_shapes():
    with pytest.raises(nc.DimensionError, match=r"\(3, 4\)"):
        nc.dense(t64(np.ones(5)), t64(np.ones((3, 4))), t64(np.ones(3)))


# --------------------------------------------------------------------- conv


def brute_conv(x, k, b):
    h, w, _ = x.shape
    pad = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, w, k.shape[3]))
    for i in range(h):
        for j in range(w):
            patch = pad[i:i + 3, j:j + 3, :]
            for o in range(k.shape[3]):
                out[i, j, o] = np.sum(patch * k[:, :, :, o]) + b[o]
    return out


def test_conv_zero_kernel_gives_bias():
    out = nc.conv2d(t64(np.random.rand(1, 5, 6, 2)), t64(np.zeros((3, 3, 2, 3))),
                    t64([0.5, -1.0, 2.0]))
    np.testing.assert_array_equal(out.data, np.broadcast_to([0.5, -1.0, 2.0], (1, 5, 6, 3)))


def test_conv_identity_kernel():
    k = np.zeros((3, 3, 1, 1))
    k[1, 1, 0, 0] = 1.0
    x = np.random.default_rng(1).random((1, 7, 7, 1))
    out = nc.conv2d(t64(x), t64(k), t64([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_sliding_window():
    rng = np.random.default_rng(2)
    x, k, b = rng.normal(size=(5, 5, 1)), rng.normal(size=(3, 3, 1, 2)), rng.normal(size=2)
    out = nc.conv2d(t64(x[None]), t64(k), t64(b)).data[0]
    np.testing.assert_allclose(out, brute_conv(x, k, b), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(nc.DimensionError):
        nc.conv2d(t64(np.ones((1, 4, 4, 2))), t64(np.ones((3, 3, 1, 4))), t64(np.ones(4)))


@settings(max_examples=15, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), cin=st.integers(1, 3), cout=st.integers(1, 3),
       seed=st.integers(0, 10_000))
def test_conv_matches_sliding_window_property(h, w, cin, cout, seed):
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(h, w, cin)), rng.normal(size=(3, 3, cin, cout)), rng.normal(size=cout)
    np.testing.assert_allclose(nc.conv2d(t64(x[None]), t64(k), t64(b)).data[0],
                               brute_conv(x, k, b), atol=1e-12)


# --------------------------------------------------------------------- pool


@pytest.mark.parametrize("size,pooled", [(68, 34), (17, 9), (1, 1), (34, 17), (9, 5)])
def test_pool_ceil_shapes(size, pooled):
    out = nc.maxpool2d(t64(np.zeros((1, size, size, 2))))
    assert out.shape == (1, pooled, pooled, 2)


def test_pool_constant_and_block():
    np.testing.assert_array_equal(nc.maxpool2d(t64(np.full((1, 5, 5, 1), 0.3))).data,
                                  np.full((1, 3, 3, 1), 0.3))
    block = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert nc.maxpool2d(t64(block)).data.item() == 4.0


def test_pool_gradient_routes_to_one_cell_ties_lowest():
    x = t64(np.ones((1, 3, 3, 1)))
    out = nc.maxpool2d(x)
    loss = nc.mse_loss(out, np.zeros(out.shape))
    nc.backward(loss)
    g = x.grad[0, :, :, 0]
    # every window is a tie; the top-left cell of each window receives the gradient
    assert np.count_nonzero(g) == 4
    assert g[0, 0] != 0 and g[0, 2] != 0 and g[2, 0] != 0 and g[2, 2] != 0


def test_pool_routed_gradient_sum_is_preserved():
    rng = np.random.default_rng(3)
    x = t64(rng.normal(size=(2, 7, 6, 3)))
    out = nc.maxpool2d(x)
    upstream = rng.normal(size=out.shape)
    out._backward(upstream)
    assert np.isclose(x.grad.sum(), upstream.sum())
    assert np.count_nonzero(x.grad) == upstream.size


def test_fused_conv_relu_pool_matches_composition():
    rng = np.random.default_rng(4)
    x, k, b = t64(rng.normal(size=(2, 7, 9, 2))), t64(rng.normal(size=(3, 3, 2, 3))), t64(rng.normal(size=3))
    ref = nc.maxpool2d(nc.conv2d(x, k, b, "relu")).data
    np.testing.assert_array_equal(nc.conv_relu_pool(x, k, b).data, ref)


# --------------------------------------------------------------------- lstm


def lstm_params(n_in, n, rng=None, scale=0.5):
    if rng is None:
        return t64(np.zeros((4 * n, n_in))), t64(np.zeros((4 * n, n))), t64(np.zeros(4 * n))
    return (t64(rng.normal(size=(4 * n, n_in)) * scale), t64(rng.normal(size=(4 * n, n)) * scale),
            t64(rng.normal(size=4 * n) * scale))


def test_lstm_zero_weights_zero_states():
    w_ih, w_hh, b = lstm_params(3, 4)
    out = nc.lstm(t64(np.random.rand(2, 6, 3), False), w_ih, w_hh, b)
    np.testing.assert_array_equal(out.data, 0.0)


def test_lstm_scalar_hand_trace():
    # n_in = n_h = 1, T = 1: z = w_ih x + b (h0 = 0)
    w_ih = t64([[0.5], [-0.25], [2.0], [1.0]])
    w_hh = t64(np.zeros((4, 1)))
    b = t64([0.1, 0.2, -0.3, 0.0])
    x = 0.8
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, g, o = sig(0.5 * x + 0.1), sig(-0.25 * x + 0.2), max(2.0 * x - 0.3, 0.0), sig(x)
    c = f * 0.0 + i * g          # c0 = 0
    h = o * max(c, 0.0)
    out = nc.lstm(t64([[x]], False), w_ih, w_hh, b)
    assert abs(out.data[0, 0] - h) < 1e-12


def test_lstm_forget_bias_persistence():
    n = 1
    w_ih = np.zeros((4, 1))
    w_ih[2, 0] = 1.0            # candidate = relu(x)
    x = np.zeros((1, 6, 1))
    x[0, 0, 0] = 5.0            # write once, then zero input
    cells = {}
    for fb in (10.0, -10.0):
        b = np.zeros(4)
        b[0] = 10.0             # input gate open
        b[1] = fb
        b[3] = 10.0             # output gate open
        out = nc.lstm(t64(x, False), t64(w_ih), t64(np.zeros((4, n))), t64(b)).data
        cells[fb] = out[0, -1, 0]
    assert cells[10.0] > 4.9
    assert cells[-10.0] < 1e-6


def test_lstm_sequence_equals_repeated_step():
    rng = np.random.default_rng(5)
    w_ih, w_hh, b = lstm_params(3, 4, rng)
    x = rng.normal(size=(2, 5, 3))
    seq = nc.lstm(t64(x, False), w_ih, w_hh, b).data
    h = c = np.zeros((2, 4))
    for t in range(5):
        h, c = nc.lstm_step(x[:, t], h, c, w_ih.data, w_hh.data, b.data)
        np.testing.assert_allclose(seq[:, t], h, atol=1e-12)
    last = nc.lstm(t64(x, False), w_ih, w_hh, b, return_sequence=False).data
    np.testing.assert_allclose(last, h, atol=1e-12)


def test_lstm_empty_sequence():
    w_ih, w_hh, b = lstm_params(3, 2)
    with pytest.raises(ValueError, match="empty"):
        nc.lstm(t64(np.zeros((1, 0, 3))), w_ih, w_hh, b)


# ------------------------------------------------------------ loss/backward


def test_mse_values():
    assert nc.mse_loss(t64([[1.0, 2.0]]), np.array([[1.0, 2.0]])).data == 0.0
    assert nc.mse_loss(t64(np.ones((3, 2)) + 1), np.ones((3, 2))).data == 1.0
    assert nc.mse_loss(t64([1.0, 2.0]), np.zeros(2)).data == 2.5
    with pytest.raises(nc.DimensionError):
        nc.mse_loss(t64([1.0, 2.0]), np.zeros(3))


def test_backward_scalar_square():
    x = t64([3.0])
    nc.backward(nc.mse_loss(x, np.zeros(1)))
    assert x.grad[0] == 6.0


def test_relu_blocks_negative():
    x = t64([-1.0])
    nc.backward(nc.mse_loss(nc.relu(x), np.ones(1)))
    assert x.grad[0] == 0.0


def test_backward_non_scalar_raises():
    with pytest.raises(nc.RankError):
        nc.backward(nc.relu(t64([1.0, 2.0])))


def test_backward_starts_from_zero():
    x = t64([3.0])
    nc.backward(nc.mse_loss(x, np.zeros(1)))
    nc.backward(nc.mse_loss(x, np.zeros(1)))
    assert x.grad[0] == 6.0


def test_gather_sums_repeated_rows():
    x = t64(np.arange(6.0).reshape(3, 2))
    out = nc.gather(x, np.array([[0, 0], [2, 0]]))
    out._backward(np.ones(out.shape))
    np.testing.assert_array_equal(x.grad, [[3, 3], [0, 0], [1, 1]])


def test_window_batch_matches_dense_layout():
    rng = np.random.default_rng(6)
    trunk = [nc.ConvPool(1, 2, "c"), nc.Flatten()]
    model = nc.ModelGraph([nc.TimeDistributed(trunk), nc.LSTM(2 * 3 * 3, 3, False, "l")]).init(1)
    model.astype(np.float64)
    frames = rng.random((7, 5, 5, 1))
    index = rng.integers(0, 7, size=(4, 3))
    a = model(nc.WindowBatch(frames, index)).data
    b = model(frames[index]).data
    np.testing.assert_allclose(a, b, atol=1e-12)


# --------------------------------------------------------------------- adam


def test_adam_zero_gradient_is_identity():
    p = {"w": t64([1.0, -2.0])}
    state = nc.AdamState(p)
    p["w"].grad = np.zeros(2)
    nc.adam_step(p, state)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_and_second_step():
    p = {"w": t64([0.0])}
    state = nc.AdamState(p, lr=1e-3)
    p["w"].grad = np.ones(1)
    nc.adam_step(p, state)
    assert abs(p["w"].data[0] + 1e-3) < 1e-9
    p["w"].grad = np.ones(1)
    nc.adam_step(p, state)
    assert abs(p["w"].data[0] + 2e-3) < 1e-9
    assert state.t == 2


def test_adam_missing_gradient_names_parameter():
    p = {"layer.weight": t64([0.0])}
    with pytest.raises(ValueError, match="layer.weight"):
        nc.adam_step(p, nc.AdamState(p))


# ---------------------------------------------------------- finite diffs


def test_fd_dense_mse():
    rng = np.random.default_rng(7)
    w, b = t64(rng.normal(size=(4, 8))), t64(rng.normal(size=4))
    x, y = rng.normal(size=(3, 8)), rng.normal(size=(3, 4))
    err = nc.finite_difference_check(lambda: nc.mse_loss(nc.dense(x, w, b, "relu"), y), [w, b])
    assert err < 1e-4


def test_fd_conv_pool_mse():
    rng = np.random.default_rng(8)
    k, b = t64(rng.normal(size=(3, 3, 1, 2))), t64(rng.normal(size=2))
    x = rng.normal(size=(1, 6, 6, 1))
    y = rng.normal(size=(1, 3, 3, 2))
    err = nc.finite_difference_check(
        lambda: nc.mse_loss(nc.maxpool2d(nc.conv2d(x, k, b, "relu")), y), [k, b])
    assert err < 1e-4


def test_fd_detects_injected_fault():
    rng = np.random.default_rng(9)
    w, b = t64(rng.normal(size=(4, 8))), t64(rng.normal(size=4))
    x, y = rng.normal(size=(3, 8)), rng.normal(size=(3, 4))

    def faulty():
        out = nc.dense(x, w, b)
        inner = out._backward

        def scaled(g):
            inner(1.1 * g)
        out._backward = scaled
        return nc.mse_loss(out, y)

    assert nc.finite_difference_check(faulty, [w, b]) > 1e-2


def test_model_graph_registers_once():
    d = nc.Dense(2, 2, name="same")
    with pytest.raises(ValueError, match="registered twice"):
        nc.ModelGraph([d, d])
