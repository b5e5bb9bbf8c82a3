import numpy as np
import pytest

from umamba import functional as F
from umamba.gradcheck import check_gradients
from umamba.tensor import Tensor


def naive_conv(x, w, b, stride, pad, groups=1):
    c_in, n = x.shape
    c_out, cin_g, k = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad)))
    t_out = (n + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, t_out))
    cout_g = c_out // groups
    for o in range(c_out):
        g = o // cout_g
        for t in range(t_out):
            for i in range(cin_g):
                for j in range(k):
                    out[o, t] += w[o, i, j] * xp[g * cin_g + i, t * stride + j]
        if b is not None:
            out[o] += b[o]
    return out


def naive_transposed(x, w, stride):
    c_in, n = x.shape
    _, c_out, k = w.shape
    out = np.zeros((c_out, (n - 1) * stride + k))
    for i in range(c_in):
        for o in range(c_out):
            for t in range(n):
                out[o, t * stride:t * stride + k] += x[i, t] * w[i, o]
    return out


def test_identity_kernel():
    y = F.conv1d(Tensor([[1.0, 2, 3, 4, 5]]), Tensor([[[1.0]]]))
    np.testing.assert_array_equal(y.data, [[1, 2, 3, 4, 5]])


def test_encoder_geometry_shape():
    y = F.conv1d(Tensor(np.zeros((1, 24000))), Tensor(np.zeros((128, 1, 41))), stride=20)
    assert y.shape == (128, 1198)


def test_conv_matches_loop(rng):
    x = rng.standard_normal((3, 16))
    w = rng.standard_normal((2, 3, 3))
    b = rng.standard_normal(2)
    got = F.conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, 1, 0), atol=1e-12, rtol=0)


@pytest.mark.parametrize("stride,pad,groups", [(2, 2, 1), (3, 1, 1), (2, 2, 4), (1, 0, 2)])
def test_conv_geometries_match_loop(rng, stride, pad, groups):
    x = rng.standard_normal((4, 13))
    w = rng.standard_normal((4, 4 // groups, 5))
    got = F.conv1d(Tensor(x), Tensor(w), stride=stride, padding=pad, groups=groups).data
    np.testing.assert_allclose(got, naive_conv(x, w, None, stride, pad, groups), atol=1e-12)


def test_transposed_single_frame():
    y = F.transposed_conv1d(Tensor([[1.0]]), Tensor([[[1.0, 1.0, 1.0]]]))
    np.testing.assert_array_equal(y.data, [[1, 1, 1]])


def test_transposed_matches_scatter(rng):
    x = rng.standard_normal((2, 7))
    w = rng.standard_normal((2, 3, 5))
    got = F.transposed_conv1d(Tensor(x), Tensor(w), stride=3).data
    np.testing.assert_allclose(got, naive_transposed(x, w, 3), atol=1e-12)


@pytest.mark.parametrize("c_in,c_out,k,stride,groups", [
    (1, 128 // 16, 41, 20, 1), (8, 8, 5, 2, 8), (8, 8, 4, 2, 8), (8, 1, 41, 20, 1), (3, 2, 5, 3, 1),
])
def test_adjoint_identity(rng, c_in, c_out, k, stride, groups):
    x = rng.standard_normal((2, c_in, 97))
    w = rng.standard_normal((c_out, c_in // groups, k))
    y = F.conv1d(Tensor(x), Tensor(w), stride=stride, groups=groups).data
    r = rng.standard_normal(y.shape)
    # the conv kernel layout (C_out, C_in/g, k) is exactly the transposed-conv layout for the reverse map
    back = F.transposed_conv1d(Tensor(r), Tensor(w), stride=stride, groups=groups).data
    back = np.pad(back, ((0, 0), (0, 0), (0, 97 - back.shape[-1])))
    assert np.vdot(y, r) == pytest.approx(np.vdot(x, back), rel=1e-10)


def test_conv_errors():
    with pytest.raises(ValueError):
        F.conv1d(Tensor(np.ones((1, 5))), Tensor(np.ones((1, 1, 3))), stride=0)
    with pytest.raises(ValueError):
        F.conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((1, 3, 3))))
    with pytest.raises(ValueError):
        F.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 3))))
    with pytest.raises(ValueError):
        F.transposed_conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((3, 1, 3))))


def test_layer_norm_examples(rng):
    const = F.layer_norm_channels(Tensor(np.full((4, 3), 2.5)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(const.data, 0.0)
    col = F.layer_norm_channels(Tensor([[1.0], [3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-15)
    np.testing.assert_allclose(col.data, [[-1.0], [1.0]], atol=1e-12)
    y = F.layer_norm_channels(Tensor(rng.standard_normal((4, 9))), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.abs(y.mean(axis=0)).max() < 1e-9
    np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-6)


def test_layer_norm_rejects_empty():
    with pytest.raises(ValueError):
        F.layer_norm_channels(Tensor(np.ones((0, 3))), Tensor(np.ones(0)), Tensor(np.ones(0)))


OPS = {
    "conv1d": (lambda x, w, b: F.conv1d(x, w, b, stride=2, padding=(1, 2)), [(2, 3, 11), (4, 3, 3), (4,)]),
    "conv1d_depthwise": (lambda x, w, b: F.conv1d(x, w, b, stride=2, padding=2, groups=3), [(3, 12), (3, 1, 5), (3,)]),
    "transposed": (lambda x, w, b: F.transposed_conv1d(x, w, b, stride=3), [(2, 2, 5), (2, 3, 4), (3,)]),
    "transposed_depthwise": (lambda x, w, b: F.transposed_conv1d(x, w, b, stride=2, groups=3), [(3, 6), (3, 1, 4), (3,)]),
    "pointwise": (lambda x, w, b: F.pointwise(x, w, b), [(2, 3, 5), (4, 3), (4,)]),
    "layer_norm": (lambda x, g, b: F.layer_norm_channels(x, g, b), [(2, 4, 5), (4,), (4,)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    op, shapes = OPS[name]
    err = check_gradients(op, [rng.standard_normal(s) for s in shapes])
    assert max(err.values()) < 1e-4


def test_selective_scan_gradient(rng):
    F_, N, T_ = 3, 4, 9
    args = [rng.standard_normal((2, F_, T_)), rng.uniform(0.05, 0.5, (2, F_, T_)), -rng.uniform(0.5, 3, (F_, N)),
            rng.standard_normal((2, N, T_)), rng.standard_normal((2, N, T_)), rng.standard_normal(F_)]
    err = check_gradients(lambda *a: F.selective_scan(*a, block_size=4), args)
    assert max(err.values()) < 1e-4


def test_selective_scan_op_matches_numpy_core(rng):
    from umamba import ssm
    x = rng.standard_normal((3, 20))
    delta = rng.uniform(0.01, 0.3, (3, 20))
    A = -rng.uniform(0.5, 2.0, (3, 5))
    B, C = rng.standard_normal((2, 5, 20))
    D = rng.standard_normal(3)
    got = F.selective_scan(Tensor(x), Tensor(delta), Tensor(A), Tensor(B), Tensor(C), Tensor(D)).data
    want = ssm.selective_scan(A, B, C, delta, x, D, method="sequential")
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_linear_interp_endpoints():
    i0, i1, w = F.linear_interp_weights(2, 4)
    x = np.array([0.0, 2.0])
    np.testing.assert_allclose(x[i0] * (1 - w) + x[i1] * w, [0, 2 / 3, 4 / 3, 2])


def test_mac_tally_counts_conv():
    with F.mac_tally() as tally:
        F.conv1d(Tensor(np.ones((2, 3, 10))), Tensor(np.ones((4, 3, 3))))
    assert sum(tally.values()) == 2 * 4 * 3 * 3 * 8
