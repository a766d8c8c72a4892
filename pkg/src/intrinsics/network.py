"""The two-scale convolutional regression network.

Scale 1 is an AlexNet-style stack (conv1-conv5 with 3x3 stride-2 max pools
after conv1, conv2, and conv5) whose output is bilinearly upsampled to one
quarter of the input resolution and passed through a 1x1 conv6, keeping the
model fully convolutional.  Scale 2 extracts fine features with a stride-2
9x9 conv plus a 2x2 pool down to the same quarter resolution, concatenates
the scale-1 output, and runs three 5x5 convs into two prediction heads
(albedo and shading) that regress log-domain maps at full resolution,
either through a learned 8x8 stride-4 deconvolution or a 3-channel conv
followed by fixed bilinear x4 upsampling.

The optional hypercolumn variant concatenates the post-pool conv1/conv2/
conv5 maps, each bilinearly resized to quarter resolution, as conv6's
input; everything downstream of conv6 is identical across variants.

Widths scale with ``channel_scale`` (rounded up) so that shape contracts
and gradient checks can run on tiny instances; channel_scale 1 is the full
topology (96/256/384/384/256 + 64, scale-2 9x9/96).  PReLU follows every
conv except the two 3-channel predictors; dropout follows every conv
except scale-1 conv1-conv5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import (ConvSpec, bilinear_upsample_backward,
                     bilinear_upsample_forward, concat_backward,
                     concat_channels, conv_backward, conv_forward,
                     deconv_backward, deconv_forward, dropout_backward,
                     dropout_forward, max_pool_backward, max_pool_forward,
                     prelu_backward, prelu_forward)
from .rng import Rng

PRELU_INIT = 0.25


@dataclass
class NetworkConfig:
    channel_scale: float = 1.0
    use_hypercolumn: bool = False
    use_deconv_head: bool = True
    dropout_prob: float = 0.5
    input_multiple: int = 32

    def __post_init__(self):
        if self.channel_scale <= 0:
            raise ValueError(f"NetworkConfig: channel_scale must be > 0, "
                             f"got {self.channel_scale}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("NetworkConfig: dropout_prob outside [0, 1)")
        if self.input_multiple < 1:
            raise ValueError("NetworkConfig: input_multiple must be >= 1")

    def width(self, base: int) -> int:
        return max(1, math.ceil(base * self.channel_scale))


class Param:
    """One named parameter tensor with its gradient and momentum buffers."""

    __slots__ = ("name", "value", "grad", "momentum")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.momentum = np.zeros_like(value)

    def zero_grad(self):
        self.grad.fill(0.0)


class Network:
    """Built topology plus the named parameter registry.

    ``forward`` runs eval- or train-mode inference; with ``keep_cache=True``
    it records the activations ``backward`` needs.  Parameter gradients
    accumulate across backward calls until ``zero_grads``.
    """

    def __init__(self, cfg: NetworkConfig, rng: Rng, dtype=np.float32,
                 widths: dict[str, int] | None = None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Param] = {}
        self.specs: dict[str, ConvSpec] = {}
        self._prelu_layers: set[str] = set()
        self._cache = None
        w = cfg.width
        self.widths = dict(widths) if widths else {
            "c1": w(96), "c2": w(256), "c3": w(384), "c4": w(384),
            "c5": w(256), "c6": w(64), "s2c1": w(96), "mid": w(64),
            "head": w(64)}
        self._build(rng)

    # -- construction -----------------------------------------------------

    def _add_conv(self, name: str, spec: ConvSpec, rng: Rng, prelu: bool = True,
                  deconv: bool = False):
        self.specs[name] = spec
        w_shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        if deconv:
            # data flows out_channels -> in_channels through a deconv
            fan_in = spec.out_channels * spec.kernel_h * spec.kernel_w
            bias_ch = spec.in_channels
            act_ch = spec.in_channels
        else:
            fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
            bias_ch = spec.out_channels
            act_ch = spec.out_channels
        std = math.sqrt(2.0 / fan_in)
        w = (rng.normal(w_shape) * std).astype(self.dtype)
        self.params[f"{name}.weight"] = Param(f"{name}.weight", w)
        self.params[f"{name}.bias"] = Param(f"{name}.bias",
                                            np.zeros(bias_ch, dtype=self.dtype))
        if prelu:
            self._prelu_layers.add(name)
            slopes = np.full(act_ch, PRELU_INIT, dtype=self.dtype)
            self.params[f"{name}.slope"] = Param(f"{name}.slope", slopes)

    def _build(self, rng: Rng):
        cfg = self.cfg
        wd = self.widths
        self._add_conv("s1.conv1", ConvSpec(3, wd["c1"], 11, 11, 4, 4, 5, 5), rng)
        self._add_conv("s1.conv2", ConvSpec(wd["c1"], wd["c2"], 5, 5, 1, 1, 2, 2), rng)
        self._add_conv("s1.conv3", ConvSpec(wd["c2"], wd["c3"], 3, 3, 1, 1, 1, 1), rng)
        self._add_conv("s1.conv4", ConvSpec(wd["c3"], wd["c4"], 3, 3, 1, 1, 1, 1), rng)
        self._add_conv("s1.conv5", ConvSpec(wd["c4"], wd["c5"], 3, 3, 1, 1, 1, 1), rng)
        conv6_in = (wd["c1"] + wd["c2"] + wd["c5"] if cfg.use_hypercolumn
                    else wd["c5"])
        self._add_conv("s1.conv6", ConvSpec(conv6_in, wd["c6"], 1, 1), rng)

        self._add_conv("s2.conv1", ConvSpec(3, wd["s2c1"], 9, 9, 2, 2, 4, 4), rng)
        cat_ch = wd["s2c1"] + wd["c6"]
        self._add_conv("s2.conv2", ConvSpec(cat_ch, wd["mid"], 5, 5, 1, 1, 2, 2), rng)
        self._add_conv("s2.conv3", ConvSpec(wd["mid"], wd["mid"], 5, 5, 1, 1, 2, 2), rng)
        self._add_conv("s2.conv4", ConvSpec(wd["mid"], wd["mid"], 5, 5, 1, 1, 2, 2), rng)

        for head in ("albedo", "shading"):
            if cfg.use_deconv_head:
                self._add_conv(f"{head}.conv",
                               ConvSpec(wd["mid"], wd["head"], 5, 5, 1, 1, 2, 2), rng)
                self._add_conv(f"{head}.deconv",
                               ConvSpec(3, wd["head"], 8, 8, 4, 4, 2, 2),
                               rng, prelu=False, deconv=True)
            else:
                self._add_conv(f"{head}.conv", ConvSpec(wd["mid"], 3, 5, 5, 1, 1, 2, 2),
                               rng, prelu=False)

    # -- registry ---------------------------------------------------------

    def named_parameters(self):
        """Parameters as (name, array) in fixed registry order."""
        return [(p.name, p.value) for p in self.params.values()]

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    # -- primitive steps (forward caches what backward consumes) ----------

    def _conv(self, name, x, cache):
        y = conv_forward(x, self.params[f"{name}.weight"].value,
                         self.params[f"{name}.bias"].value, self.specs[name])
        if cache is not None:
            cache[f"{name}.x"] = x
        return y

    def _conv_bwd(self, name, dy, cache):
        x = cache[f"{name}.x"]
        dx, dw, db = conv_backward(dy, x, self.params[f"{name}.weight"].value,
                                   self.specs[name])
        self.params[f"{name}.weight"].grad += dw
        self.params[f"{name}.bias"].grad += db
        return dx

    def _deconv(self, name, x, cache):
        y = deconv_forward(x, self.params[f"{name}.weight"].value,
                           self.params[f"{name}.bias"].value, self.specs[name])
        if cache is not None:
            cache[f"{name}.x"] = x
        return y

    def _deconv_bwd(self, name, dy, cache):
        x = cache[f"{name}.x"]
        dx, dw, db = deconv_backward(dy, x, self.params[f"{name}.weight"].value,
                                     self.specs[name])
        self.params[f"{name}.weight"].grad += dw
        self.params[f"{name}.bias"].grad += db
        return dx

    def _prelu(self, name, x, cache):
        y = prelu_forward(x, self.params[f"{name}.slope"].value)
        if cache is not None:
            cache[f"{name}.pre"] = x
        return y

    def _prelu_bwd(self, name, dy, cache):
        x = cache[f"{name}.pre"]
        dx, da = prelu_backward(dy, x, self.params[f"{name}.slope"].value)
        self.params[f"{name}.slope"].grad += da
        return dx

    def _pool(self, name, x, kernel, stride, cache):
        y, idx = max_pool_forward(x, kernel, stride)
        if cache is not None:
            cache[f"{name}.idx"] = idx
            cache[f"{name}.shape"] = x.shape
        return y

    def _pool_bwd(self, name, dy, cache):
        return max_pool_backward(dy, cache[f"{name}.idx"], cache[f"{name}.shape"])

    def _dropout(self, name, x, train_mode, rng, cache):
        y, mask = dropout_forward(x, self.cfg.dropout_prob, rng, train_mode)
        if cache is not None:
            cache[f"{name}.mask"] = mask
        return y

    def _dropout_bwd(self, name, dy, cache):
        return dropout_backward(dy, cache[f"{name}.mask"])

    def _upsample(self, name, x, factor, cache):
        y = bilinear_upsample_forward(x, factor)
        if cache is not None:
            cache[f"{name}.shape"] = x.shape
            cache[f"{name}.factor"] = factor
        return y

    def _upsample_bwd(self, name, dy, cache):
        return bilinear_upsample_backward(dy, cache[f"{name}.factor"],
                                          cache[f"{name}.shape"])

    # -- inference ---------------------------------------------------------

    def forward(self, image: np.ndarray, train_mode: bool = False,
                rng: Rng | None = None, keep_cache: bool = False):
        """Run the network; returns (log_albedo, log_shading) at input resolution."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"forward: expected (N,3,H,W) input, got {image.shape}")
        m = self.cfg.input_multiple
        h, w = image.shape[2], image.shape[3]
        if h % m or w % m:
            pad_h = (-h) % m
            pad_w = (-w) % m
            raise ValueError(
                f"forward: input {h}x{w} must be a multiple of {m}; "
                f"pad by ({pad_h}, {pad_w}) first (see data.pad_to_multiple)")
        if train_mode and self.cfg.dropout_prob > 0 and rng is None:
            raise ValueError("forward: train_mode with dropout needs an rng")

        x = np.ascontiguousarray(image, dtype=self.dtype)
        cache = {} if keep_cache else None
        tm = train_mode

        # scale 1
        a1 = self._prelu("s1.conv1", self._conv("s1.conv1", x, cache), cache)
        p1 = self._pool("s1.pool1", a1, 3, 2, cache)
        a2 = self._prelu("s1.conv2", self._conv("s1.conv2", p1, cache), cache)
        p2 = self._pool("s1.pool2", a2, 3, 2, cache)
        a3 = self._prelu("s1.conv3", self._conv("s1.conv3", p2, cache), cache)
        a4 = self._prelu("s1.conv4", self._conv("s1.conv4", a3, cache), cache)
        a5 = self._prelu("s1.conv5", self._conv("s1.conv5", a4, cache), cache)
        p5 = self._pool("s1.pool5", a5, 3, 2, cache)
        up5 = self._upsample("s1.up5", p5, 8, cache)
        if self.cfg.use_hypercolumn:
            t1 = self._upsample("s1.hc1", p1, 2, cache)
            t2 = self._upsample("s1.hc2", p2, 4, cache)
            feat = concat_channels(concat_channels(t1, t2), up5)
        else:
            feat = up5
        assert feat.shape[2:] == (h // 4, w // 4), "scale-1 path missed quarter resolution"
        h6 = self._prelu("s1.conv6", self._conv("s1.conv6", feat, cache), cache)
        s1_out = self._dropout("s1.conv6.drop", h6, tm, rng, cache)

        # scale 2
        b1 = self._prelu("s2.conv1", self._conv("s2.conv1", x, cache), cache)
        q1 = self._pool("s2.pool1", b1, 2, 2, cache)
        q1 = self._dropout("s2.conv1.drop", q1, tm, rng, cache)
        assert q1.shape[2:] == (h // 4, w // 4), "scale-2 path missed quarter resolution"
        cat = concat_channels(q1, s1_out)
        b2 = self._dropout("s2.conv2.drop",
                           self._prelu("s2.conv2", self._conv("s2.conv2", cat, cache), cache),
                           tm, rng, cache)
        b3 = self._dropout("s2.conv3.drop",
                           self._prelu("s2.conv3", self._conv("s2.conv3", b2, cache), cache),
                           tm, rng, cache)
        b4 = self._dropout("s2.conv4.drop",
                           self._prelu("s2.conv4", self._conv("s2.conv4", b3, cache), cache),
                           tm, rng, cache)

        outs = {}
        for head in ("albedo", "shading"):
            if self.cfg.use_deconv_head:
                t = self._prelu(f"{head}.conv", self._conv(f"{head}.conv", b4, cache), cache)
                t = self._dropout(f"{head}.conv.drop", t, tm, rng, cache)
                outs[head] = self._deconv(f"{head}.deconv", t, cache)
            else:
                t = self._conv(f"{head}.conv", b4, cache)
                t = self._dropout(f"{head}.conv.drop", t, tm, rng, cache)
                outs[head] = self._upsample(f"{head}.up", t, 4, cache)
            assert outs[head].shape == (image.shape[0], 3, h, w)

        if cache is not None:
            cache["q1.channels"] = q1.shape[1]
            cache["hc.channels"] = (
                (p1.shape[1], p2.shape[1]) if self.cfg.use_hypercolumn else None)
            self._cache = cache
        return outs["albedo"], outs["shading"]

    def backward(self, d_log_albedo: np.ndarray, d_log_shading: np.ndarray):
        """Accumulate parameter gradients; returns the input-image gradient."""
        if self._cache is None:
            raise ValueError("backward: no cached forward (run forward with keep_cache)")
        cache = self._cache

        d_b4 = None
        for head, dy in (("albedo", d_log_albedo), ("shading", d_log_shading)):
            dy = dy.astype(self.dtype, copy=False)
            if self.cfg.use_deconv_head:
                dt = self._deconv_bwd(f"{head}.deconv", dy, cache)
                dt = self._dropout_bwd(f"{head}.conv.drop", dt, cache)
                dt = self._prelu_bwd(f"{head}.conv", dt, cache)
                dh = self._conv_bwd(f"{head}.conv", dt, cache)
            else:
                dt = self._upsample_bwd(f"{head}.up", dy, cache)
                dt = self._dropout_bwd(f"{head}.conv.drop", dt, cache)
                dh = self._conv_bwd(f"{head}.conv", dt, cache)
            d_b4 = dh if d_b4 is None else d_b4 + dh

        d = self._dropout_bwd("s2.conv4.drop", d_b4, cache)
        d = self._conv_bwd("s2.conv4", self._prelu_bwd("s2.conv4", d, cache), cache)
        d = self._dropout_bwd("s2.conv3.drop", d, cache)
        d = self._conv_bwd("s2.conv3", self._prelu_bwd("s2.conv3", d, cache), cache)
        d = self._dropout_bwd("s2.conv2.drop", d, cache)
        d_cat = self._conv_bwd("s2.conv2", self._prelu_bwd("s2.conv2", d, cache), cache)
        d_q1, d_s1out = concat_backward(d_cat, cache["q1.channels"])

        # scale-2 trunk back to the image
        d_q1 = self._dropout_bwd("s2.conv1.drop", d_q1, cache)
        d_b1 = self._pool_bwd("s2.pool1", d_q1, cache)
        d_image_s2 = self._conv_bwd("s2.conv1", self._prelu_bwd("s2.conv1", d_b1, cache), cache)

        # scale-1 trunk
        d_h6 = self._dropout_bwd("s1.conv6.drop", d_s1out, cache)
        d_feat = self._conv_bwd("s1.conv6", self._prelu_bwd("s1.conv6", d_h6, cache), cache)
        if self.cfg.use_hypercolumn:
            c1, c2 = cache["hc.channels"]
            d_t12, d_up5 = concat_backward(d_feat, c1 + c2)
            d_t1, d_t2 = concat_backward(d_t12, c1)
            d_p1_tap = self._upsample_bwd("s1.hc1", d_t1, cache)
            d_p2_tap = self._upsample_bwd("s1.hc2", d_t2, cache)
        else:
            d_up5 = d_feat
            d_p1_tap = d_p2_tap = None
        d_p5 = self._upsample_bwd("s1.up5", d_up5, cache)
        d_a5 = self._pool_bwd("s1.pool5", d_p5, cache)
        d = self._conv_bwd("s1.conv5", self._prelu_bwd("s1.conv5", d_a5, cache), cache)
        d = self._conv_bwd("s1.conv4", self._prelu_bwd("s1.conv4", d, cache), cache)
        d_p2 = self._conv_bwd("s1.conv3", self._prelu_bwd("s1.conv3", d, cache), cache)
        if d_p2_tap is not None:
            d_p2 = d_p2 + d_p2_tap
        d_a2 = self._pool_bwd("s1.pool2", d_p2, cache)
        d_p1 = self._conv_bwd("s1.conv2", self._prelu_bwd("s1.conv2", d_a2, cache), cache)
        if d_p1_tap is not None:
            d_p1 = d_p1 + d_p1_tap
        d_a1 = self._pool_bwd("s1.pool1", d_p1, cache)
        d_image_s1 = self._conv_bwd("s1.conv1", self._prelu_bwd("s1.conv1", d_a1, cache), cache)

        return d_image_s1 + d_image_s2


def build_network(cfg: NetworkConfig, rng: Rng, dtype=np.float32) -> Network:
    """Construct a network with freshly initialized parameters.

    Weights are zero-mean normal with std sqrt(2/fan_in), biases zero,
    PReLU slopes 0.25; identical seeds give bit-identical parameters.
    """
    return Network(cfg, rng, dtype=dtype)
