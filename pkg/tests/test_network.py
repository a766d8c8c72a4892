import numpy as np
import pytest

from intrinsics.losses import LossConfig, total_loss
from intrinsics.network import Network, NetworkConfig, build_network
from intrinsics.rng import Rng
from intrinsics.tensor import check_gradient

TINY = NetworkConfig(channel_scale=1 / 16, dropout_prob=0.5)


def tiny_net(seed=0, dtype=np.float64, **kw):
    cfg = NetworkConfig(channel_scale=1 / 16, **kw)
    return build_network(cfg, Rng(seed), dtype=dtype)


class TestBuild:
    def test_same_seed_bit_identical(self):
        a = tiny_net(seed=5)
        b = tiny_net(seed=5)
        for (na, va), (nb, vb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(va, vb)

    def test_different_seed_differs(self):
        a = tiny_net(seed=5)
        b = tiny_net(seed=6)
        assert not np.array_equal(a.params["s1.conv1.weight"].value,
                                  b.params["s1.conv1.weight"].value)

    def test_full_scale_registry_widths(self):
        net = build_network(NetworkConfig(channel_scale=1.0, use_deconv_head=True),
                            Rng(0))
        p = {name: v.shape for name, v in net.named_parameters()}
        assert p["s1.conv1.weight"] == (96, 3, 11, 11)
        assert p["s1.conv2.weight"] == (256, 96, 5, 5)
        assert p["s1.conv3.weight"] == (384, 256, 3, 3)
        assert p["s1.conv4.weight"] == (384, 384, 3, 3)
        assert p["s1.conv5.weight"] == (256, 384, 3, 3)
        assert p["s1.conv6.weight"] == (64, 256, 1, 1)
        assert p["s2.conv1.weight"] == (96, 3, 9, 9)
        for name in ("s2.conv2", "s2.conv3", "s2.conv4"):
            assert p[f"{name}.weight"][2:] == (5, 5)
        for head in ("albedo", "shading"):
            assert p[f"{head}.deconv.weight"] == (64, 3, 8, 8)
            spec = net.specs[f"{head}.deconv"]
            assert (spec.kernel_h, spec.kernel_w) == (8, 8)
            assert (spec.stride_h, spec.stride_w) == (4, 4)

    def test_scale2_identical_across_variants(self):
        plain = tiny_net(seed=1, use_hypercolumn=False)
        hc = tiny_net(seed=1, use_hypercolumn=True)
        names_p = [n for n, _ in plain.named_parameters()]
        names_h = [n for n, _ in hc.named_parameters()]
        assert names_p == names_h
        for name in names_p:
            a = plain.params[name].value
            b = hc.params[name].value
            if name.startswith("s1.conv6"):
                continue  # only conv6's input width may differ
            assert a.shape == b.shape, name
        assert (plain.params["s1.conv6.weight"].value.shape[1]
                != hc.params["s1.conv6.weight"].value.shape[1])

    def test_invalid_channel_scale(self):
        with pytest.raises(ValueError):
            NetworkConfig(channel_scale=0.0)


class TestForward:
    @pytest.mark.parametrize("hc", [False, True])
    @pytest.mark.parametrize("deconv", [False, True])
    def test_shape_contract(self, hc, deconv):
        net = tiny_net(seed=2, use_hypercolumn=hc, use_deconv_head=deconv,
                       dtype=np.float32)
        for h in (32, 64, 96):
            for w in (32, 64):
                x = Rng(3).uniform((1, 3, h, w))
                la, ls = net.forward(x)
                assert la.shape == (1, 3, h, w)
                assert ls.shape == (1, 3, h, w)

    def test_nonsquare_input(self):
        net = tiny_net(seed=2, dtype=np.float32)
        la, ls = net.forward(Rng(4).uniform((1, 3, 96, 160)))
        assert la.shape == (1, 3, 96, 160)

    def test_non_multiple_rejected_with_padding_amount(self):
        net = tiny_net(seed=2)
        with pytest.raises(ValueError, match=r"pad by \(26, 31\)"):
            net.forward(np.zeros((1, 3, 70, 65)))

    def test_eval_deterministic(self):
        net = tiny_net(seed=3, dtype=np.float32)
        x = Rng(5).uniform((1, 3, 64, 64))
        a1, s1 = net.forward(x)
        a2, s2 = net.forward(x)
        assert np.array_equal(a1, a2)
        assert np.array_equal(s1, s2)

    def test_train_mode_dropout_varies_with_seed(self):
        net = tiny_net(seed=3, dtype=np.float32)
        x = Rng(5).uniform((1, 3, 64, 64))
        a1, _ = net.forward(x, train_mode=True, rng=Rng(1))
        a2, _ = net.forward(x, train_mode=True, rng=Rng(2))
        a3, _ = net.forward(x, train_mode=True, rng=Rng(1))
        assert not np.array_equal(a1, a2)
        assert np.array_equal(a1, a3)

    def test_outputs_finite(self):
        net = tiny_net(seed=7, dtype=np.float32)
        la, ls = net.forward(Rng(8).uniform((2, 3, 32, 32)))
        assert np.all(np.isfinite(la)) and np.all(np.isfinite(ls))


class TestBackward:
    def test_requires_cached_forward(self):
        net = tiny_net(seed=9)
        with pytest.raises(ValueError, match="cached forward"):
            net.backward(np.zeros((1, 3, 32, 32)), np.zeros((1, 3, 32, 32)))

    def test_zero_upstream_zero_grads(self):
        net = tiny_net(seed=9)
        x = Rng(10).uniform((1, 3, 32, 32))
        net.forward(x, keep_cache=True)
        di = net.backward(np.zeros((1, 3, 32, 32)), np.zeros((1, 3, 32, 32)))
        assert np.all(di == 0.0)
        for p in net.params.values():
            assert np.all(p.grad == 0.0)

    def test_gradients_accumulate_linearly(self):
        net = tiny_net(seed=9)
        x = Rng(10).uniform((1, 3, 32, 32))
        da = Rng(11).normal((1, 3, 32, 32))
        ds = Rng(12).normal((1, 3, 32, 32))

        net.forward(x, keep_cache=True)
        net.backward(da, ds)
        net.forward(x, keep_cache=True)
        net.backward(da, ds)
        twice = {n: p.grad.copy() for n, p in net.params.items()}

        net.zero_grads()
        net.forward(x, keep_cache=True)
        net.backward(2 * da, 2 * ds)
        for n, p in net.params.items():
            assert np.allclose(twice[n], p.grad, rtol=1e-10, atol=1e-12), n


@pytest.mark.slow
class TestWholeNetworkGradient:
    def _loss_through(self, net, x, targets, mask, cfg):
        la, ls = net.forward(x, keep_cache=True)
        loss, d_la, d_ls = total_loss(targets[0], targets[1], la, ls, mask, cfg)
        net.zero_grads()
        d_image = net.backward(d_la, d_ls)
        return loss, d_image

    @pytest.mark.parametrize("hc,deconv", [(False, True), (True, False)])
    def test_finite_differences_over_total_loss(self, hc, deconv):
        net = tiny_net(seed=13, use_hypercolumn=hc, use_deconv_head=deconv,
                       dtype=np.float64)
        rng = Rng(14)
        x = rng.uniform((1, 3, 32, 32))
        targets = (rng.normal((1, 3, 32, 32)) * 0.1, rng.normal((1, 3, 32, 32)) * 0.1)
        mask = np.ones((1, 1, 32, 32))
        cfg = LossConfig(lam=0.5, use_gradient_loss=True)

        # h below the layer-level 1e-3: a whole-net perturbation shifts every
        # downstream activation, so a large step walks across pool-argmax and
        # PReLU kinks that per-layer checks dodge by construction
        h = 1e-5

        # input gradient
        def f_input(v):
            return self._loss_through(net, v, targets, mask, cfg)

        assert check_gradient(f_input, x, h=h, max_coords=8) < 1e-4

        # every parameter tensor, a few coordinates each
        for name, p in net.params.items():
            def f_param(v, _p=p):
                saved = _p.value
                _p.value = v.astype(np.float64)
                try:
                    la, ls = net.forward(x, keep_cache=True)
                    loss, d_la, d_ls = total_loss(targets[0], targets[1], la, ls,
                                                  mask, cfg)
                    net.zero_grads()
                    net.backward(d_la, d_ls)
                    return loss, _p.grad.copy()
                finally:
                    _p.value = saved

            err = check_gradient(f_param, p.value.copy(), h=h, max_coords=4)
            assert err < 1e-4, f"{name}: {err}"
