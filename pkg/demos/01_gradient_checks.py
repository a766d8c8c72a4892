"""Walk through the finite-difference gradient checker on every layer type.

Each layer's backward pass was derived by hand; this script confirms each
one against central differences and shows what the checker reports when a
backward pass is deliberately wrong.
"""

import numpy as np

from intrinsics import ConvSpec, Rng, check_gradient
from intrinsics.layers import (bilinear_upsample_backward,
                               bilinear_upsample_forward, conv_backward,
                               conv_forward, deconv_backward, deconv_forward,
                               max_pool_backward, max_pool_forward,
                               prelu_backward, prelu_forward)

rng = Rng(0)

print("== convolution ==")
spec = ConvSpec(2, 3, 3, 3, stride_h=2, stride_w=2, pad_h=1, pad_w=1)
x = rng.normal((1, 2, 8, 8))
w = rng.normal((3, 2, 3, 3))
b = rng.normal((3,))
dy = rng.normal(conv_forward(x, w, b, spec).shape)


def loss_wrt_input(v):
    y = conv_forward(v, w, b, spec)
    dx, _, _ = conv_backward(dy, v, w, spec)
    return float((y * dy).sum()), dx


err = check_gradient(loss_wrt_input, x, h=1e-3)
print(f"input gradient, max relative error: {err:.2e}")


def loss_wrt_weights(v):
    y = conv_forward(x, v, b, spec)
    _, dw, _ = conv_backward(dy, x, v, spec)
    return float((y * dy).sum()), dw


err = check_gradient(loss_wrt_weights, w, h=1e-3)
print(f"weight gradient, max relative error: {err:.2e}")

print("\n== transposed convolution (upsampling head geometry: 8x8, stride 4) ==")
dspec = ConvSpec(3, 8, 8, 8, stride_h=4, stride_w=4, pad_h=2, pad_w=2)
xd = rng.normal((1, 8, 8, 8))
wd = rng.normal((8, 3, 8, 8)) * 0.1
print(f"deconv maps {xd.shape} -> {deconv_forward(xd, wd, None, dspec).shape}")
dyd = rng.normal(deconv_forward(xd, wd, None, dspec).shape)


def deconv_loss(v):
    y = deconv_forward(v, wd, None, dspec)
    dx, _, _ = deconv_backward(dyd, v, wd, dspec)
    return float((y * dyd).sum()), dx


print(f"input gradient, max relative error: {check_gradient(deconv_loss, xd, 1e-3):.2e}")

print("\n== adjoint identity: <conv(x, w), y> == <x, deconv(y, w)> ==")
# extents chosen so the strided conv tiles exactly and the deconv maps back
xt = rng.normal((1, 2, 9, 9))
y_probe = rng.normal(conv_forward(xt, w, None, spec).shape)
lhs = float((conv_forward(xt, w, None, spec) * y_probe).sum())
rhs = float((xt * deconv_forward(y_probe, w, None, spec)).sum())
print(f"lhs = {lhs:.12f}\nrhs = {rhs:.12f}\ngap = {abs(lhs - rhs):.2e}")

print("\n== max pooling (gradient routed to the argmax) ==")
xp = rng.normal((1, 2, 7, 7))
out, _ = max_pool_forward(xp, 3, 2)
dyp = rng.normal(out.shape)


def pool_loss(v):
    yv, idx = max_pool_forward(v, 3, 2)
    return float((yv * dyp).sum()), max_pool_backward(dyp, idx, v.shape)


print(f"max relative error: {check_gradient(pool_loss, xp, 1e-3):.2e}")

print("\n== bilinear upsampling and PReLU ==")
xu = rng.normal((1, 2, 4, 4))
dyu = rng.normal((1, 2, 8, 8))


def up_loss(v):
    yv = bilinear_upsample_forward(v, 2)
    return float((yv * dyu).sum()), bilinear_upsample_backward(dyu, 2, v.shape)


print(f"bilinear, max relative error: {check_gradient(up_loss, xu, 1e-3):.2e}")

xr = rng.normal((1, 3, 5, 5))
xr[np.abs(xr) < 1e-2] = 0.3  # stay clear of the kink at zero
slopes = np.array([0.1, 0.25, 0.6])
dyr = rng.normal(xr.shape)


def prelu_loss(v):
    yv = prelu_forward(xr, v)
    _, da = prelu_backward(dyr, xr, v)
    return float((yv * dyr).sum()), da


print(f"prelu slopes, max relative error: {check_gradient(prelu_loss, slopes, 1e-3):.2e}")

print("\n== and what a WRONG backward looks like ==")


def broken(v):
    y = conv_forward(v, w, b, spec)
    dx, _, _ = conv_backward(dy, v, w, spec)
    return float((y * dy).sum()), dx * 1.05  # 5% off


print(f"broken conv backward reports: {check_gradient(broken, x, 1e-3):.2e} "
      "(orders of magnitude above the 1e-4 gate)")
