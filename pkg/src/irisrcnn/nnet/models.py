"""Backbone and the three detection heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm1d,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    Linear,
    Module,
    ReLU,
    Sequential,
)

ANCHORS_PER_CELL = 15


@dataclass
class RpnOutput:
    scores: np.ndarray  # (2 * A, H, W), channel 2a is non-iris, 2a + 1 iris
    deltas: np.ndarray  # (6 * A, H, W), channel 6a + k is component k of anchor a


class ToyBackbone(Sequential):
    """Small convolutional stack with output stride 4.

    Two stride-2 convolutions set the stride; dilated convolutions afterwards
    grow the receptive field to cover iris diameters of ~100 px without more
    downsampling. Each convolution is followed by per-image normalization and
    ReLU, which keeps the feature scale near one from the first step onwards
    and behaves identically in training and inference.
    """

    stride = 4
    # (kernel, stride, dilation) per stage; padding keeps "same" geometry
    _stages = ((3, 1, 1), (3, 2, 1), (3, 2, 1), (3, 1, 2), (3, 1, 4), (3, 1, 8))

    def __init__(self, rng, in_ch=1, channels=(8, 16, 32)):
        c0, c1, c2 = channels
        widths = (c0, c1, c2, c2, c2, c2)
        layers, prev = [], in_ch
        for i, ((k, s, d), c) in enumerate(zip(self._stages, widths), start=1):
            layers += [
                Conv2d(f"backbone.conv{i}", prev, c, k, rng, stride=s, padding=d * (k // 2), dilation=d),
                InstanceNorm2d(f"backbone.norm{i}", c),
                ReLU(),
            ]
            prev = c
        super().__init__(*layers)
        self.out_channels = c2


class RpnHead(Module):
    """Shared 3x3 conv + ReLU feeding sibling 1x1 classification and regression convs."""

    def __init__(self, rng, in_ch, mid_ch=64, num_anchors=ANCHORS_PER_CELL):
        self.num_anchors = num_anchors
        self.conv = Conv2d("rpn.conv", in_ch, mid_ch, 3, rng, padding=1)
        self.relu = ReLU()
        self.cls = Conv2d("rpn.cls", mid_ch, 2 * num_anchors, 1, rng)
        self.reg = Conv2d("rpn.reg", mid_ch, 6 * num_anchors, 1, rng)

    def children(self):
        return [self.conv, self.relu, self.cls, self.reg]

    def parameters(self):
        return self.conv.parameters() + self.cls.parameters() + self.reg.parameters()

    def forward(self, features) -> RpnOutput:
        squeeze = features.ndim == 3
        x = features[None] if squeeze else features
        if x.shape[0] != 1:
            raise ValueError("the proposal head runs on one feature map at a time")
        h = self.relu.forward(self.conv.forward(x))
        out = RpnOutput(scores=self.cls.forward(h)[0], deltas=self.reg.forward(h)[0])
        return out

    def backward(self, dscores, ddeltas):
        dh = self.cls.backward(dscores[None]) + self.reg.backward(ddeltas[None])
        return self.conv.backward(self.relu.backward(dh))


class CrnHead(Module):
    """Refinement head on 7x7 normalized RoIs: two hidden FC blocks
    (Linear -> BatchNorm -> ReLU), then sibling class and regression FCs."""

    roi_size = (7, 7)

    def __init__(self, rng, in_ch, hidden=128, normalize_with="running"):
        flat = in_ch * self.roi_size[0] * self.roi_size[1]
        self.in_ch = in_ch
        self.trunk = Sequential(
            Linear("crn.fc1", flat, hidden, rng),
            BatchNorm1d("crn.bn1", hidden, normalize_with=normalize_with),
            ReLU(),
            Linear("crn.fc2", hidden, hidden, rng),
            BatchNorm1d("crn.bn2", hidden, normalize_with=normalize_with),
            ReLU(),
        )
        self.cls = Linear("crn.cls", hidden, 2, rng)
        self.reg = Linear("crn.reg", hidden, 6, rng)

    def children(self):
        return [self.trunk, self.cls, self.reg]

    def parameters(self):
        return self.trunk.parameters() + self.cls.parameters() + self.reg.parameters()

    def buffers(self):
        return self.trunk.buffers()

    def forward(self, roi_feat):
        single = roi_feat.ndim == 3
        x = roi_feat[None] if single else roi_feat
        if x.ndim != 4 or x.shape[2:] != self.roi_size or x.shape[1] != self.in_ch:
            raise ValueError(
                f"refinement head expects (N, {self.in_ch}, 7, 7) RoI features, got {roi_feat.shape}"
            )
        self._shape = x.shape
        h = self.trunk.forward(x.reshape(len(x), -1))
        scores, deltas = self.cls.forward(h), self.reg.forward(h)
        if single:
            return scores[0], deltas[0]
        return scores, deltas

    def backward(self, dscores, ddeltas):
        dscores, ddeltas = np.atleast_2d(dscores), np.atleast_2d(ddeltas)
        dh = self.cls.backward(dscores) + self.reg.backward(ddeltas)
        return self.trunk.backward(dh).reshape(self._shape)


class MaskHead(Sequential):
    """Four 3x3 convs, a 2x2 stride-2 transposed conv, then a 1x1 conv to one logit map."""

    roi_size = (16, 32)

    def __init__(self, rng, in_ch, mid_ch=16):
        self.in_ch = in_ch
        super().__init__(
            Conv2d("mask.conv1", in_ch, mid_ch, 3, rng, padding=1),
            ReLU(),
            Conv2d("mask.conv2", mid_ch, mid_ch, 3, rng, padding=1),
            ReLU(),
            Conv2d("mask.conv3", mid_ch, mid_ch, 3, rng, padding=1),
            ReLU(),
            Conv2d("mask.conv4", mid_ch, mid_ch, 3, rng, padding=1),
            ReLU(),
            ConvTranspose2d("mask.deconv", mid_ch, mid_ch, 2, rng),
            ReLU(),
            Conv2d("mask.logits", mid_ch, 1, 1, rng),
        )

    def forward(self, roi_feat):
        single = roi_feat.ndim == 3
        x = roi_feat[None] if single else roi_feat
        if x.ndim != 4 or x.shape[2:] != self.roi_size or x.shape[1] != self.in_ch:
            raise ValueError(
                f"mask head expects (N, {self.in_ch}, 16, 32) RoI features, got {roi_feat.shape}"
            )
        out = super().forward(x)
        return out[0] if single else out

    def backward(self, dout):
        single = dout.ndim == 3
        dx = super().backward(dout[None] if single else dout)
        return dx[0] if single else dx
