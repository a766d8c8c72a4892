"""Release-gate verification: every module's invariants at desk scale.

``run_all`` executes the suites and returns (name, passed, detail) rows;
the CLI turns those into a pass/fail listing and exit status.  Each suite
re-derives its expected values from an independent oracle (nested-loop
convolution, grid-search alpha, window enumeration, direct-sum SSIM)
rather than trusting the implementation under test.

``corrupt`` deliberately breaks one layer's backward pass for the duration
of the run; it exists so the meta-test "a broken backward is caught and
named" can exercise this gate.
"""

from __future__ import annotations

import tempfile
import time

import numpy as np

from . import layers
from .data import (AugmentConfig, augment, crop_to, fit_alpha,
                   generate_mit_shading, make_synthetic_sample,
                   pad_to_multiple, resynthesize)
from .layers import ConvSpec
from .losses import LossConfig, gradient_loss, sil2_loss, total_loss
from .metrics import LmseConfig, dssim, lmse, si_mse, ssim_map
from .network import NetworkConfig, Param, build_network
from .png_io import read_png, write_png
from .rng import Rng
from .tensor import check_gradient, elementwise_map, reduce_sum
from .trainer import (Checkpoint, TrainConfig, load_checkpoint,
                      save_checkpoint, sgd_momentum_step, train_loop)

GRAD_TOL = 1e-4
CORRUPTIBLE = ("conv", "deconv", "max_pool", "bilinear", "prelu", "dropout", "concat")


def _suite_tensor_core():
    rng = Rng(0)
    t = rng.normal((2, 3, 16, 16))
    acc = 0.0
    for v in t.ravel():
        acc += v
    got = float(reduce_sum(t, "NCHW").ravel()[0])
    assert abs(got - acc) <= 1e-12 * max(1.0, abs(acc)), "reduce_sum vs scalar loop"
    f = lambda v: v * 2.0 - 1.0
    a = elementwise_map(t, f).ravel()
    b = elementwise_map(t.reshape(1, 1, 1, -1), f).ravel()
    assert np.array_equal(a, b), "elementwise_map reshape commutation"
    assert np.array_equal(Rng(7).uniform((10000,)), Rng(7).uniform((10000,)))
    assert not np.array_equal(Rng(7).uniform((16,)), Rng(8).uniform((16,)))


def _layer_cases():
    rng = Rng(1)
    cases = {}

    spec = ConvSpec(2, 3, 3, 3, 2, 2, 1, 1)
    x = rng.normal((1, 2, 6, 6))
    w = rng.normal((3, 2, 3, 3))
    b = rng.normal((3,))
    dy = rng.normal(layers.conv_forward(x, w, b, spec).shape)

    def conv_case(v):
        y = layers.conv_forward(v, w, b, spec)
        dx, _, _ = layers.conv_backward(dy, v, w, spec)
        return float((y * dy).sum()), dx

    cases["conv"] = (conv_case, x)

    dspec = ConvSpec(2, 3, 4, 4, 2, 2, 1, 1)
    xd = rng.normal((1, 3, 5, 5))
    wd = rng.normal((3, 2, 4, 4))
    dyd = rng.normal(layers.deconv_forward(xd, wd, None, dspec).shape)

    def deconv_case(v):
        y = layers.deconv_forward(v, wd, None, dspec)
        dx, _, _ = layers.deconv_backward(dyd, v, wd, dspec)
        return float((y * dyd).sum()), dx

    cases["deconv"] = (deconv_case, xd)

    xp = rng.normal((1, 2, 7, 7))
    out0, _ = layers.max_pool_forward(xp, 3, 2)
    dyp = rng.normal(out0.shape)

    def pool_case(v):
        y, idx = layers.max_pool_forward(v, 3, 2)
        return float((y * dyp).sum()), layers.max_pool_backward(dyp, idx, v.shape)

    cases["max_pool"] = (pool_case, xp)

    xu = rng.normal((1, 2, 3, 4))
    dyu = rng.normal((1, 2, 6, 8))

    def up_case(v):
        y = layers.bilinear_upsample_forward(v, 2)
        return float((y * dyu).sum()), layers.bilinear_upsample_backward(dyu, 2, v.shape)

    cases["bilinear"] = (up_case, xu)

    xr = rng.normal((1, 3, 4, 4))
    xr[np.abs(xr) < 1e-2] = 0.3
    slopes = rng.uniform((3,)) * 0.5 + 0.1
    dyr = rng.normal(xr.shape)

    def prelu_case(v):
        y = layers.prelu_forward(v, slopes)
        dx, _ = layers.prelu_backward(dyr, v, slopes)
        return float((y * dyr).sum()), dx

    cases["prelu"] = (prelu_case, xr)

    xdp = rng.normal((1, 2, 5, 5))
    _, mask = layers.dropout_forward(xdp, 0.5, Rng(9), True)
    dydp = rng.normal(xdp.shape)

    def drop_case(v):
        y = v * mask
        return float((y * dydp).sum()), layers.dropout_backward(dydp, mask)

    cases["dropout"] = (drop_case, xdp)

    xa = rng.normal((1, 2, 3, 3))
    xb = rng.normal((1, 2, 3, 3))
    dyc = rng.normal((1, 4, 3, 3))

    def concat_case(v):
        y = layers.concat_channels(v, xb)
        da, _ = layers.concat_backward(dyc, v.shape[1])
        return float((y * dyc).sum()), da

    cases["concat"] = (concat_case, xa)
    return cases


def _suite_layer_gradients():
    for name, (f, x) in _layer_cases().items():
        err = check_gradient(f, x, h=1e-3)
        assert err < GRAD_TOL, f"{name} backward: rel error {err:.2e} >= {GRAD_TOL}"


def _suite_conv_oracle():
    rng = Rng(2)
    spec = ConvSpec(2, 2, 3, 3, 1, 1, 1, 1)
    x = rng.normal((1, 2, 8, 8))
    w = rng.normal((2, 2, 3, 3))
    b = rng.normal((2,))
    got = layers.conv_forward(x, w, b, spec)
    want = np.zeros_like(got)
    for o in range(2):
        for oy in range(8):
            for ox in range(8):
                acc = b[o]
                for ci in range(2):
                    for ky in range(3):
                        for kx in range(3):
                            iy, ix = oy + ky - 1, ox + kx - 1
                            if 0 <= iy < 8 and 0 <= ix < 8:
                                acc += w[o, ci, ky, kx] * x[0, ci, iy, ix]
                want[0, o, oy, ox] = acc
    gap = np.max(np.abs(got - want))
    assert gap < 1e-10, f"conv vs nested loop oracle: {gap:.2e}"


def _suite_deconv_adjoint():
    rng = Rng(3)
    spec = ConvSpec(3, 4, 8, 8, 4, 4, 2, 2)
    x = rng.normal((1, 3, 16, 16))
    w = rng.normal((4, 3, 8, 8))
    y = rng.normal(layers.conv_forward(x, w, None, spec).shape)
    lhs = float((layers.conv_forward(x, w, None, spec) * y).sum())
    rhs = float((x * layers.deconv_forward(y, w, None, spec)).sum())
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs)), "deconv adjoint identity"


def _suite_loss_algebra():
    rng = Rng(4)
    t = rng.normal((1, 3, 5, 5))
    p = rng.normal((1, 3, 5, 5))
    mask = np.ones((1, 1, 5, 5))
    base, _ = sil2_loss(t, p, mask, 1.0)
    shifted, _ = sil2_loss(t, p + 1.7, mask, 1.0)
    assert abs(base - shifted) < 1e-10, "lambda=1 offset invariance"
    mse, _ = sil2_loss(t, p, mask, 0.0)
    assert abs(mse - float(((t - p) ** 2).mean())) < 1e-12, "lambda=0 = plain MSE"
    cfg = LossConfig(lam=0.5, use_gradient_loss=True)
    tot, _, _ = total_loss(t, t + 0.3, p, p - 0.1, mask, cfg)
    parts = (sil2_loss(t, p, mask, 0.5)[0]
             + sil2_loss(t + 0.3, p - 0.1, mask, 0.5)[0]
             + gradient_loss(t, p, mask)[0])
    assert abs(tot - parts) < 1e-12, "total loss composition"
    m2 = mask.copy()
    m2[0, 0, 2, 2] = 0.0
    l0, g0 = sil2_loss(t, p, m2, 0.5)
    poked = p.copy()
    poked[0, :, 2, 2] = 50.0
    l1, g1 = sil2_loss(t, poked, m2, 0.5)
    assert abs(l0 - l1) < 1e-12 and np.max(np.abs(g0 - g1)) < 1e-12, "mask invariance"
    for lam in (0.0, 0.5, 1.0):
        err = check_gradient(lambda v, m=lam: sil2_loss(t, v, mask, m), p, 1e-3)
        assert err < GRAD_TOL, f"sil2 gradient (lambda={lam}): {err:.2e}"
    err = check_gradient(lambda v: gradient_loss(t, v, mask), p, 1e-3)
    assert err < GRAD_TOL, f"gradient-loss gradient: {err:.2e}"


def _suite_alpha_grid():
    rng = Rng(5)
    grid = np.arange(0.0, 10.0 + 1e-4, 1e-4)
    for _ in range(10):
        p = rng.uniform((1, 3, 5, 5)) + 0.05
        t = (0.3 + 3.0 * rng.uniform()) * p + 0.1 * rng.normal(p.shape)
        t2, tp, p2 = float((t * t).sum()), float((t * p).sum()), float((p * p).sum())
        losses = t2 - 2 * grid * tp + grid * grid * p2
        a = fit_alpha(t, p)
        assert abs(a - grid[np.argmin(losses)]) <= 1e-3, "fit_alpha vs grid"
        mask = np.ones((1, 1, 5, 5))
        got = si_mse(t, p, mask)
        assert abs(got - losses.min() / t.size) < 1e-6, "si_mse vs grid"


def _suite_lmse_oracle():
    rng = Rng(6)
    t = rng.uniform((1, 3, 40, 40))
    p = rng.uniform((1, 3, 40, 40))
    mask = (rng.uniform((1, 1, 40, 40)) > 0.1).astype(float)
    k, stride = 4, 2
    vals = []
    for i in list(range(0, 37, stride)):
        for j in list(range(0, 37, stride)):
            tw = t[:, :, i:i + k, j:j + k]
            pw = p[:, :, i:i + k, j:j + k]
            mw = mask[:, :, i:i + k, j:j + k]
            n = mw.sum() * 3
            if n == 0:
                continue
            denom = float((pw * pw * mw).sum())
            a = float((tw * pw * mw).sum()) / denom if denom > 0 else 0.0
            vals.append(float((((tw - a * pw) * mw) ** 2).sum()) / n)
    want = float(np.mean(vals))
    got = lmse(t, p, mask, LmseConfig())
    assert abs(got - want) < 1e-10, f"lmse vs window oracle: {abs(got - want):.2e}"


def _suite_dssim_oracle():
    rng = Rng(7)
    t = rng.uniform((1, 1, 14, 14))
    p = rng.uniform((1, 1, 14, 14))
    ax = np.arange(11) - 5.0
    g1 = np.exp(-(ax ** 2) / (2 * 1.5 ** 2))
    g1 /= g1.sum()
    g2 = np.outer(g1, g1)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    want = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            wx = t[0, 0, i:i + 11, j:j + 11]
            wy = p[0, 0, i:i + 11, j:j + 11]
            mx, my = float((g2 * wx).sum()), float((g2 * wy).sum())
            vx = float((g2 * wx * wx).sum()) - mx * mx
            vy = float((g2 * wy * wy).sum()) - my * my
            cov = float((g2 * wx * wy).sum()) - mx * my
            want[i, j] = (((2 * mx * my + c1) * (2 * cov + c2))
                          / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    got = ssim_map(t, p)[0, 0]
    gap = np.max(np.abs(got - want))
    assert gap < 1e-8, f"ssim vs direct-sum oracle: {gap:.2e}"
    assert abs(dssim(t, p, align=False) - (1 - want.mean()) / 2) < 1e-8
    assert dssim(t, t) == 0.0, "dssim of identical images"


def _suite_data_synthesis():
    rng = Rng(8)
    a = 0.2 + 0.7 * rng.uniform((1, 3, 12, 12))
    s_true = 0.2 + 0.7 * rng.uniform((1, 1, 12, 12))
    img = resynthesize(a, s_true)
    assert np.max(np.abs(img - a * s_true)) < 1e-6, "resynthesis identity"
    s, alpha, valid = generate_mit_shading(img, a)
    assert np.max(np.abs(s - s_true)) < 1e-8, "shading recovery"
    assert abs(alpha - 1.0) < 1e-8, "alpha recovery"
    assert np.all(valid == 1.0)
    with tempfile.TemporaryDirectory() as d:
        s3 = s_true * np.ones((1, 3, 1, 1))
        for name, arr in (("i", resynthesize(a, s3)), ("a", a), ("s", s3)):
            write_png(f"{d}/{name}.png", arr[0].transpose(1, 2, 0), bit_depth=16)
        i2 = read_png(f"{d}/i.png").transpose(2, 0, 1)[None]
        a2 = read_png(f"{d}/a.png").transpose(2, 0, 1)[None]
        s2 = read_png(f"{d}/s.png").transpose(2, 0, 1)[None]
        gap = np.max(np.abs(i2 - a2 * s2))
        assert gap < 2.0 / 65535.0, f"png round-trip identity: {gap:.2e}"


def _suite_augmentation():
    cfg = AugmentConfig(crop_h=32, crop_w=32, mirror_prob=0.5,
                        enable_rotate_zoom=True)
    for seed in range(3):
        s = make_synthetic_sample(seed, h=48, w=48)
        out = augment(s, cfg, Rng(seed))
        gap = (np.abs(out.image - out.albedo * out.shading) * out.mask).max()
        assert gap < 1e-3, f"augment intrinsic identity: {gap:.2e}"
    t = Rng(9).uniform((1, 3, 70, 65))
    padded, extents = pad_to_multiple(t, 32)
    assert padded.shape[2:] == (96, 96)
    assert np.array_equal(crop_to(padded, extents), t), "pad/crop round trip"


def _suite_network_shapes():
    for hc in (False, True):
        for deconv in (False, True):
            cfg = NetworkConfig(channel_scale=1 / 16, use_hypercolumn=hc,
                                use_deconv_head=deconv)
            net = build_network(cfg, Rng(10), dtype=np.float32)
            for h, w in ((32, 32), (64, 96)):
                la, ls = net.forward(Rng(11).uniform((1, 3, h, w)))
                assert la.shape == (1, 3, h, w) and ls.shape == (1, 3, h, w), \
                    f"shape contract (hc={hc}, deconv={deconv}, {h}x{w})"


def _suite_topology_audit():
    net = build_network(NetworkConfig(channel_scale=1.0), Rng(12))
    shapes = {n: v.shape for n, v in net.named_parameters()}
    stated = {"s1.conv1.weight": (96, 3, 11, 11), "s1.conv2.weight": (256, 96, 5, 5),
              "s1.conv3.weight": (384, 256, 3, 3), "s1.conv4.weight": (384, 384, 3, 3),
              "s1.conv5.weight": (256, 384, 3, 3), "s1.conv6.weight": (64, 256, 1, 1),
              "s2.conv1.weight": (96, 3, 9, 9)}
    for name, want in stated.items():
        assert shapes[name] == want, f"{name}: {shapes[name]} != {want}"
    for name in ("s2.conv2", "s2.conv3", "s2.conv4"):
        assert shapes[f"{name}.weight"][2:] == (5, 5), f"{name} kernel"
    for head in ("albedo", "shading"):
        spec = net.specs[f"{head}.deconv"]
        assert shapes[f"{head}.deconv.weight"] == (64, 3, 8, 8)
        assert (spec.kernel_h, spec.stride_h) == (8, 4), f"{head} deconv spec"


def _suite_whole_network_gradient():
    net = build_network(NetworkConfig(channel_scale=1 / 16), Rng(13),
                        dtype=np.float64)
    rng = Rng(14)
    x = rng.uniform((1, 3, 32, 32))
    ta = rng.normal((1, 3, 32, 32)) * 0.1
    ts = rng.normal((1, 3, 32, 32)) * 0.1
    mask = np.ones((1, 1, 32, 32))
    cfg = LossConfig(lam=0.5, use_gradient_loss=True)

    def f(v):
        la, ls = net.forward(v, keep_cache=True)
        loss, d_la, d_ls = total_loss(ta, ts, la, ls, mask, cfg)
        net.zero_grads()
        return loss, net.backward(d_la, d_ls)

    err = check_gradient(f, x, h=1e-5, max_coords=6)
    assert err < GRAD_TOL, f"whole-network input gradient: {err:.2e}"
    for name in ("s1.conv3.weight", "s2.conv2.weight", "albedo.deconv.weight",
                 "shading.conv.slope"):
        p = net.params[name]

        def fp(v, _p=p):
            saved = _p.value
            _p.value = v
            try:
                la, ls = net.forward(x, keep_cache=True)
                loss, d_la, d_ls = total_loss(ta, ts, la, ls, mask, cfg)
                net.zero_grads()
                net.backward(d_la, d_ls)
                return loss, _p.grad.copy()
            finally:
                _p.value = saved

        err = check_gradient(fp, p.value.copy(), h=1e-5, max_coords=4)
        assert err < GRAD_TOL, f"whole-network {name}: {err:.2e}"


def _suite_trainer():
    params = {"p": Param("p", np.zeros(1))}
    cfg = TrainConfig(base_lr=0.1, momentum=0.9, batch_size=1, max_iterations=1)
    params["p"].grad[:] = 1.0
    sgd_momentum_step(params, cfg)
    assert abs(params["p"].value[0] + 0.1) < 1e-12, "sgd step 1"
    params["p"].grad[:] = 1.0
    sgd_momentum_step(params, cfg)
    assert abs(params["p"].value[0] + 0.29) < 1e-12, "sgd step 2"

    samples = [make_synthetic_sample(i, h=32, w=32) for i in range(2)]
    tcfg = TrainConfig(base_lr=0.005, batch_size=2, max_iterations=2, seed=1,
                       augment=AugmentConfig(crop_h=32, crop_w=32, mirror_prob=0.0,
                                             enable_rotate_zoom=False))
    traces = []
    for _ in range(2):
        net = build_network(NetworkConfig(channel_scale=1 / 16, dropout_prob=0.5),
                            Rng(15))
        _, trace = train_loop(net, samples, tcfg)
        traces.append(trace)
    assert traces[0] == traces[1], "deterministic training trace"

    with tempfile.TemporaryDirectory() as d:
        net = build_network(NetworkConfig(channel_scale=1 / 16), Rng(16))
        ck = Checkpoint.from_network(net, 3, (1, 2, 0, 0), b"\x01" * 32)
        save_checkpoint(ck, f"{d}/a.ck")
        save_checkpoint(load_checkpoint(f"{d}/a.ck"), f"{d}/b.ck")
        with open(f"{d}/a.ck", "rb") as fa, open(f"{d}/b.ck", "rb") as fb:
            assert fa.read() == fb.read(), "checkpoint save/load/save identity"


SUITES = [
    ("tensor-core", _suite_tensor_core),
    ("layer-gradients", _suite_layer_gradients),
    ("conv-oracle", _suite_conv_oracle),
    ("deconv-adjoint", _suite_deconv_adjoint),
    ("loss-algebra", _suite_loss_algebra),
    ("alpha-grid-oracle", _suite_alpha_grid),
    ("lmse-window-oracle", _suite_lmse_oracle),
    ("dssim-oracle", _suite_dssim_oracle),
    ("data-synthesis", _suite_data_synthesis),
    ("augmentation", _suite_augmentation),
    ("network-shapes", _suite_network_shapes),
    ("topology-audit", _suite_topology_audit),
    ("whole-network-gradient", _suite_whole_network_gradient),
    ("trainer", _suite_trainer),
]


def _install_corruption(kind: str):
    """Break one layer's backward by scaling its input gradient."""
    if kind == "conv":
        orig = layers.conv_backward

        def bad(dy, x, w, spec):
            dx, dw, db = orig(dy, x, w, spec)
            return dx * 1.01, dw, db

        layers.conv_backward = bad
        return lambda: setattr(layers, "conv_backward", orig)
    if kind == "deconv":
        orig = layers.deconv_backward

        def bad(dy, x, w, spec):
            dx, dw, db = orig(dy, x, w, spec)
            return dx * 1.01, dw, db

        layers.deconv_backward = bad
        return lambda: setattr(layers, "deconv_backward", orig)
    if kind == "max_pool":
        orig = layers.max_pool_backward
        layers.max_pool_backward = lambda dy, idx, shape: orig(dy, idx, shape) * 1.01
        return lambda: setattr(layers, "max_pool_backward", orig)
    if kind == "bilinear":
        orig = layers.bilinear_upsample_backward
        layers.bilinear_upsample_backward = (
            lambda dy, f, s: orig(dy, f, s) * 1.01)
        return lambda: setattr(layers, "bilinear_upsample_backward", orig)
    if kind == "prelu":
        orig = layers.prelu_backward

        def bad(dy, x, slopes):
            dx, da = orig(dy, x, slopes)
            return dx * 1.01, da

        layers.prelu_backward = bad
        return lambda: setattr(layers, "prelu_backward", orig)
    if kind == "dropout":
        orig = layers.dropout_backward
        layers.dropout_backward = lambda dy, mask: orig(dy, mask) * 1.01
        return lambda: setattr(layers, "dropout_backward", orig)
    if kind == "concat":
        orig = layers.concat_backward

        def bad(dy, ca):
            da, db = orig(dy, ca)
            return da * 1.01, db

        layers.concat_backward = bad
        return lambda: setattr(layers, "concat_backward", orig)
    raise ValueError(f"verify: unknown corruption target {kind!r} "
                     f"(choose from {', '.join(CORRUPTIBLE)})")


def run_all(corrupt: str | None = None, log=None):
    """Run every suite; returns [(name, passed, detail)].

    ``log`` is an optional callable for per-suite progress lines.
    """
    restore = _install_corruption(corrupt) if corrupt else None
    results = []
    try:
        for name, suite in SUITES:
            t0 = time.perf_counter()
            try:
                suite()
                results.append((name, True, f"{time.perf_counter() - t0:.2f}s"))
            except Exception as e:  # report and continue
                results.append((name, False, str(e)))
            if log:
                passed, detail = results[-1][1], results[-1][2]
                log(f"[{'PASS' if passed else 'FAIL'}] {name} ({detail})")
    finally:
        if restore:
            restore()
    return results
