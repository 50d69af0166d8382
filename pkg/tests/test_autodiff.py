import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobileunetr import autodiff as ad
from mobileunetr.autodiff import Tape, Tensor, backward, gradcheck, no_grad, precision
from mobileunetr.errors import DegenerateBatchError, DimensionError, NonFiniteError, PatchSizeError


def t(rng, *shape):
    return Tensor(rng.standard_normal(shape))


# --- naive oracles --------------------------------------------------------

def conv_loop(x, w, b, stride, pad, groups):
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    per = cout // groups
    for o in range(cout):
        g = o // per
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, g * cg:(g + 1) * cg, i * stride:i * stride + k, j * stride:j * stride + k]
                out[:, o, i, j] = (patch * w[o]).sum(axis=(1, 2, 3))
    return out + (0 if b is None else b[None, :, None, None])


def tconv_loop(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    full = np.zeros((n, cout, (h - 1) * stride + k, (wd - 1) * stride + k))
    for i in range(h):
        for j in range(wd):
            full[:, :, i * stride:i * stride + k, j * stride:j * stride + k] += np.einsum("nc,cokl->nokl", x[:, :, i, j], w)
    out = full[:, :, pad:full.shape[2] - pad, pad:full.shape[3] - pad]
    return out + (0 if b is None else b[None, :, None, None])


@pytest.mark.parametrize("stride,pad,groups,cin,cout", [
    (1, 1, 1, 3, 4), (2, 1, 1, 3, 5), (1, 0, 1, 2, 2), (2, 1, 4, 4, 4), (1, 1, 2, 4, 6),
])
def test_conv2d_matches_loop(rng, stride, pad, groups, cin, cout):
    x = rng.standard_normal((2, cin, 7, 6))
    w = rng.standard_normal((cout, cin // groups, 3, 3))
    b = rng.standard_normal(cout)
    with precision(np.float64):
        got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad, groups=groups).data
    np.testing.assert_allclose(got, conv_loop(x, w, b, stride, pad, groups), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("k,stride,pad", [(2, 2, 0), (3, 2, 1), (4, 2, 1), (3, 1, 0)])
def test_transpose_conv_matches_scatter(rng, k, stride, pad):
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(2)
    with precision(np.float64):
        got = ad.transpose_conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(got, tconv_loop(x, w, b, stride, pad), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name,fn,shapes", [
    ("add_broadcast", lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
    ("mul_broadcast", lambda a, b: ad.mul(a, b), [(2, 3, 4), (3, 1)]),
    ("div", lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)), [(3, 4), (3, 4)]),
    ("sigmoid", lambda a: ad.sigmoid(a), [(5, 3)]),
    ("silu", lambda a: ad.silu(a), [(5, 3)]),
    ("matmul_batched", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)]),
    ("linear", lambda x, w, b: ad.linear(x, w, b), [(2, 3, 4), (5, 4), (5,)]),
    ("softmax", lambda a: ad.softmax(a, axis=-1), [(2, 3, 6)]),
    ("layer_norm", lambda x, g, b: ad.layer_norm(x, g, b), [(2, 3, 6), (6,), (6,)]),
    ("mean_axis", lambda a: ad.mean(a, axis=(0, 2)), [(2, 3, 4)]),
    ("transpose", lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    ("narrow", lambda a: ad.narrow(a, 1, 1, 2), [(2, 4, 3)]),
    ("concat", lambda a, b: ad.concat([a, b], axis=1), [(2, 3, 2), (2, 1, 2)]),
    ("upsample", lambda a: ad.upsample_nearest(a, 2), [(1, 2, 3, 3)]),
    ("unfold", lambda a: ad.unfold_patches(a, 2, 3), [(2, 3, 4, 6)]),
    ("fold", lambda a: ad.fold_patches(a, 2, 2, 4, 4), [(4, 4, 3)]),
    ("conv_dense", lambda x, w, b: ad.conv2d(x, w, b, stride=2, padding=1), [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
    ("conv_depthwise", lambda x, w: ad.conv2d(x, w, None, stride=1, padding=1, groups=3), [(2, 3, 5, 5), (3, 1, 3, 3)]),
    ("conv_grouped", lambda x, w: ad.conv2d(x, w, None, padding=1, groups=2), [(2, 4, 4, 4), (6, 2, 3, 3)]),
    ("tconv_k2", lambda x, w, b: ad.transpose_conv2d(x, w, b), [(2, 3, 3, 3), (3, 2, 2, 2), (2,)]),
    ("tconv_k3_pad", lambda x, w: ad.transpose_conv2d(x, w, None, stride=2, padding=1), [(1, 2, 3, 3), (2, 2, 3, 3)]),
])
def test_op_gradcheck(rng, name, fn, shapes):
    inputs = [t(rng, *s) for s in shapes]
    err = gradcheck(lambda x: fn(x, *inputs[1:]), inputs[0], wrt=inputs[1:])
    assert err < 1e-5, name


def test_batch_norm_gradcheck_train_and_eval(rng):
    x, g, b = t(rng, 3, 2, 3, 3), t(rng, 2), t(rng, 2)
    rm, rv = np.zeros(2), np.ones(2)
    assert gradcheck(lambda z: ad.batch_norm2d(z, g, b, rm, rv, True), x, wrt=[g, b]) < 1e-5
    assert gradcheck(lambda z: ad.batch_norm2d(z, g, b, rm, rv, False), x, wrt=[g, b]) < 1e-5


def test_batch_norm_running_stats_update(rng):
    x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
    rm, rv = np.zeros(2), np.ones(2)
    with precision(np.float64):
        ad.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))


def test_batch_norm_single_value_per_channel_is_rejected():
    with pytest.raises(DegenerateBatchError):
        ad.batch_norm2d(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                        np.zeros(2), np.ones(2), True)


def test_bce_value_and_gradcheck(rng):
    logits, targets = t(rng, 2, 1, 3, 3), Tensor((rng.random((2, 1, 3, 3)) < 0.5).astype(float))
    with precision(np.float64):
        z, y = logits.data, targets.data
        want = np.mean(-y * np.log(1 / (1 + np.exp(-z))) - (1 - y) * np.log(1 - 1 / (1 + np.exp(-z))))
        assert ad.bce_with_logits(logits, targets).item() == pytest.approx(want, rel=1e-6)
    assert gradcheck(lambda z: ad.bce_with_logits(z, targets), logits) < 1e-6


def test_unfold_index_map(rng):
    n, d, h, w, ph, pw = 2, 3, 4, 6, 2, 3
    x = rng.standard_normal((n, d, h, w)).astype(np.float32)
    seq = ad.unfold_patches(Tensor(x), ph, pw).data
    for ni in range(n):
        for hi in range(h):
            for wi in range(w):
                b = ni * ph * pw + (hi % ph) * pw + (wi % pw)
                s = (hi // ph) * (w // pw) + wi // pw
                np.testing.assert_array_equal(seq[b, s], x[ni, :, hi, wi])


@given(n=st.integers(1, 3), d=st.integers(1, 4), ph=st.integers(1, 4), pw=st.integers(1, 4),
       gh=st.integers(1, 4), gw=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_fold_unfold_roundtrip_is_bitwise(n, d, ph, pw, gh, gw, seed):
    x = np.random.default_rng(seed).standard_normal((n, d, ph * gh, pw * gw)).astype(np.float32)
    seq = ad.unfold_patches(Tensor(x), ph, pw)
    back = ad.fold_patches(seq, ph, pw, ph * gh, pw * gw).data
    assert back.tobytes() == x.tobytes()
    assert ad.unfold_patches(Tensor(back), ph, pw).data.tobytes() == seq.data.tobytes()


def test_unfold_rejects_indivisible():
    with pytest.raises(PatchSizeError):
        ad.unfold_patches(Tensor(np.zeros((1, 2, 5, 4))), 2, 2)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(values):
    out = ad.softmax(Tensor(np.array([values])), axis=-1).data
    assert abs(out.sum() - 1.0) < 1e-5
    assert (out >= 0).all()


def test_backward_accumulates_shared_input(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.add(ad.mul(x, x), x))
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1, rtol=1e-6)


def test_backward_requires_scalar(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ValueError):
        backward(y, tape)


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with Tape() as tape, no_grad():
        ad.mul(x, x)
    assert len(tape) == 0


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        ad.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_default_storage_is_float32_and_precision_switches():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_conv_shape_errors(rng):
    with pytest.raises(DimensionError):
        ad.conv2d(t(rng, 1, 3, 5, 5), t(rng, 4, 2, 3, 3))
    with pytest.raises(DimensionError):
        ad.conv2d(t(rng, 1, 3, 5, 5), t(rng, 4, 1, 3, 3), groups=2)


def test_injected_fault_is_detected(rng):
    x, w = t(rng, 1, 2, 4, 4), t(rng, 3, 2, 3, 3)
    assert gradcheck(lambda z: ad.conv2d(z, w, padding=1), x, wrt=[w]) < 1e-6
    with ad.inject_fault("conv2d_weight_sign"):
        assert gradcheck(lambda z: ad.conv2d(z, w, padding=1), x, wrt=[w]) > 0.5
