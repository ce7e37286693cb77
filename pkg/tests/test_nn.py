import numpy as np
import pytest
from scipy.special import logsumexp

from equitransporter.fields import FormatError, act_array, rotate_array
from equitransporter.groups import element, regular, trivial
from equitransporter.nn import (AdamState, GConv, GroupPool, MaxPool2, Merge, Network, QuotientPool, ReLU, Save,
                                SpatialMean, Upsample2, adam_step, angle_net, checkpoint_from_bytes,
                                checkpoint_to_bytes, load_checkpoint, save_checkpoint, softmax_ce, unet)
from equitransporter.verify import check_gradients, check_layer_equivariance, check_weight_tying


def test_regular_kernel_is_tied_along_its_orbit(rng):
    n = 4
    layer = GConv(n, "regular", 2, "regular", 3, rng=rng)
    full = layer.expand()
    assert full.shape == (3 * n, 2 * n, 3, 3)
    for o in range(3):
        for c in range(2):
            for i in range(n):
                for j in range(n):
                    want = rotate_array(layer.base[o, c, (j - i) % n][None], element(n, i))[0]
                    np.testing.assert_array_equal(full[o * n + i, c * n + j], want)


def test_lifting_kernel_holds_rotated_copies(rng):
    layer = GConv(4, "trivial", 1, "regular", 1, rng=rng)
    full = layer.expand()
    for i in range(4):
        np.testing.assert_array_equal(full[i, 0], rotate_array(layer.base[0, 0, 0][None], element(4, i))[0])


def test_trivial_kernel_is_rotation_symmetric(rng):
    k = GConv(4, "trivial", 1, "trivial", 1, rng=rng).expand()[0, 0]
    np.testing.assert_allclose(np.rot90(k), k, atol=1e-15)


def test_c8_kernels_are_disk_masked(rng):
    layer = GConv(8, "trivial", 1, "regular", 1, r=5, rng=rng)
    full = layer.expand()
    corners = full[0, 0][[0, 0, -1, -1], [0, -1, 0, -1]]
    assert np.all(corners == 0) and np.all(full[0, 0][1:-1, 1:-1] != 0)


def test_layer_equivariance_c4():
    res, _ = check_layer_equivariance(4, instances=3)
    assert res <= 1e-12


def test_untied_kernels_break_equivariance():
    res, _ = check_layer_equivariance(4, instances=1, untied=True)
    assert res > 1e-3


def test_weight_tying_survives_updates():
    res, _ = check_weight_tying(4)
    assert res <= 1e-12


def test_gradients_match_finite_differences():
    res, detail = check_gradients(probes=10)
    assert res < 1e-4
    assert detail.startswith("13 layer types")


def test_full_unet_gradient(rng):
    net = unet(4, 2, widths=(4, 8, 8), rng=rng)
    x = rng.normal(size=(2, 8, 8))
    w = rng.normal(size=(1, 8, 8))
    net.zero_grad()
    net(x)
    net.backward(w)
    grads = [g.copy() for g in net.gradients()]
    h = 1e-5
    for p, g in zip(net.parameters(), grads):
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = float((net(x) * w).sum())
        p[idx] = old - h
        lm = float((net(x) * w).sum())
        p[idx] = old
        num = (lp - lm) / (2 * h)
        assert abs(num - g[idx]) <= 1e-4 * max(abs(num), abs(g[idx]), 1e-6)


def test_maxpool_even_matches_block_max(rng):
    x = rng.normal(size=(3, 8, 6))
    want = x.reshape(3, 4, 2, 3, 2).max(axis=(2, 4))
    np.testing.assert_array_equal(MaxPool2().forward(x, {}), want)


def test_maxpool_odd_uses_centered_windows(rng):
    x = rng.normal(size=(1, 7, 7))
    y = MaxPool2().forward(x, {})
    assert y.shape == (1, 4, 4)
    for r in range(4):
        for c in range(4):
            win = x[0, max(2 * r - 1, 0) : 2 * r + 2, max(2 * c - 1, 0) : 2 * c + 2]
            assert y[0, r, c] == win.max()


def test_upsample_even_copies_blocks(rng):
    x = rng.normal(size=(2, 3, 3))
    want = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    np.testing.assert_array_equal(Upsample2(False).forward(x, {}), want)


def test_upsample_odd_is_linear_with_aligned_ends():
    x = np.arange(3.0)[None, None, :] * np.ones((1, 3, 1))
    y = Upsample2(True).forward(x, {})
    assert y.shape == (1, 5, 5)
    np.testing.assert_allclose(y[0, 0], [0, 0.5, 1, 1.5, 2])


@pytest.mark.parametrize("size", [8, 9])
def test_resampling_commutes_with_quarter_turns(rng, size):
    x = rng.normal(size=(2, size, size))
    for layer in (MaxPool2(), Upsample2(size % 2 == 1), ReLU()):
        for k in range(4):
            g = element(4, k)
            assert np.array_equal(layer.forward(rotate_array(x, g), {}), rotate_array(layer.forward(x, {}), g))


def test_pooling_layers(rng):
    x = rng.normal(size=(8, 2, 2))
    np.testing.assert_allclose(GroupPool(4).forward(x, {}), x.reshape(2, 4, 2, 2).mean(axis=1))
    q = QuotientPool(4, 2).forward(x[:4], {})
    np.testing.assert_allclose(q, (x[:2] + x[2:4]) / 2)
    np.testing.assert_allclose(SpatialMean().forward(x, {})[:, 0, 0], x.mean(axis=(1, 2)))
    with pytest.raises(ValueError):
        QuotientPool(4, 3)


def test_quotient_pool_is_pi_invariant(rng):
    x = rng.normal(size=(8, 1, 1))
    q = QuotientPool(8, 2)
    base = q.forward(x, {})
    shifted = q.forward(act_array(element(8, 4), x, regular(8)), {})
    assert np.array_equal(base, shifted)


def test_network_type_checking(rng):
    with pytest.raises(ValueError):
        Network([GConv(4, "regular", 1, "regular", 1, rng=rng)], ("trivial", 1))
    with pytest.raises(ValueError):
        Network([Save("a"), GConv(4, "trivial", 1, "regular", 1, rng=rng), Merge("a")], ("trivial", 1))
    with pytest.raises(ValueError):
        GConv(4, "regular", 1, "trivial", 1)
    with pytest.raises(ValueError):
        GConv(4, "trivial", 1, "regular", 1, r=4)
    net = unet(4, 2, rng=rng)
    with pytest.raises(ValueError):
        net(np.zeros((3, 8, 8)))
    with pytest.raises(RuntimeError):
        net.backward(np.zeros((1, 8, 8)))


def test_unet_shape_contract(rng):
    net = unet(4, 4, rng=rng)
    assert net(rng.normal(size=(4, 64, 64))).shape == (1, 64, 64)
    odd = unet(4, 4, odd=True, rng=rng)
    assert odd(rng.normal(size=(4, 25, 25))).shape == (1, 25, 25)
    assert net.out_type == ("trivial", 1)


def test_unet_is_rotation_invariant_map(rng):
    net = unet(4, 2, widths=(4, 8, 8), rng=rng)
    x = rng.normal(size=(2, 16, 16))
    y = net(x)
    for k in range(4):
        g = element(4, k)
        np.testing.assert_allclose(net(act_array(g, x, trivial(4))), rotate_array(y, g), atol=1e-12)


def test_angle_net_outputs_quotient_logits(rng):
    net = angle_net(8, 4, rng=rng)
    assert net(rng.normal(size=(4, 17, 17))).shape == (4, 1, 1)
    assert net.out_type[0] == "quotient"


def test_spec_round_trip(rng):
    net = unet(4, 2, widths=(4, 8, 8), rng=rng)
    clone = Network.from_spec(net.spec(), dtype=np.float64)
    clone.load_parameters(net.parameters())
    assert clone.spec() == net.spec()
    x = rng.normal(size=(2, 8, 8))
    np.testing.assert_array_equal(clone(x), net(x))
    with pytest.raises(ValueError):
        clone.load_parameters([np.zeros(1)] * len(net.parameters()))


def test_softmax_ce_matches_logsumexp(rng):
    z = rng.normal(size=(2, 3, 4))
    loss, grad = softmax_ce(z, (1, 2, 3))
    flat = np.ravel_multi_index((1, 2, 3), z.shape)
    assert loss == pytest.approx(logsumexp(z) - z.ravel()[flat], abs=1e-12)
    want = np.exp(z - logsumexp(z))
    want.ravel()[flat] -= 1
    np.testing.assert_allclose(grad, want, atol=1e-14)
    assert softmax_ce(z, flat)[0] == loss


def test_softmax_ce_is_stable_for_large_logits():
    loss, grad = softmax_ce(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(np.log1p(np.exp(-1000.0)))
    assert np.all(np.isfinite(grad))


def _adam_oracle(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_matches_reference(rng):
    p0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    p = p0.copy()
    st = AdamState(lr=1e-3)
    for g in grads:
        adam_step(st, [p], [g])
    assert st.step == 5
    np.testing.assert_allclose(p, _adam_oracle(p0, grads), rtol=0, atol=1e-15)


def test_adam_first_step_is_lr_times_sign():
    p = np.array([0.0, 0.0])
    adam_step(AdamState(lr=0.01), [p], [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p, [-0.01, 0.01], rtol=1e-6)


def test_adam_rejects_mismatched_inputs():
    with pytest.raises(ValueError):
        adam_step(AdamState(), [np.zeros(2)], [])
    with pytest.raises(ValueError):
        adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])


def _trained_pair(rng):
    net = unet(4, 2, widths=(4, 8, 8), rng=rng, dtype=np.float32)
    st = AdamState(lr=1e-3)
    net(rng.normal(size=(2, 8, 8)).astype(np.float32))
    net.backward(np.ones((1, 8, 8), np.float32))
    adam_step(st, net.parameters(), net.gradients())
    return net, st


def test_checkpoint_round_trip_is_bit_exact(rng, tmp_path):
    net, st = _trained_pair(rng)
    buf = checkpoint_to_bytes({"pick": net}, {"pick": st}, {"note": 1})
    nets, adam, extra = checkpoint_from_bytes(buf)
    assert extra == {"note": 1}
    for a, b in zip(net.parameters(), nets["pick"].parameters()):
        assert a.tobytes() == b.tobytes()
    assert adam["pick"].step == 1
    for a, b in zip(st.m + st.v, adam["pick"].m + adam["pick"].v):
        assert a.astype(np.float32).tobytes() == b.tobytes()
    assert checkpoint_to_bytes(nets, adam, extra) == buf
    save_checkpoint(tmp_path / "c.etpc", nets, adam, extra)
    assert (tmp_path / "c.etpc").read_bytes() == buf
    assert checkpoint_to_bytes(*load_checkpoint(tmp_path / "c.etpc")) == buf


@pytest.mark.parametrize("mangle", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:6],
    lambda b: b[:-3],
    lambda b: b + b"\0\0\0\0",
    lambda b: b[:8] + b"X" + b[9:],
])
def test_corrupt_checkpoint_raises(rng, mangle):
    net, st = _trained_pair(rng)
    buf = checkpoint_to_bytes({"pick": net}, {"pick": st})
    with pytest.raises(FormatError):
        checkpoint_from_bytes(mangle(buf))
