"""Channel, spatial and combined (CBAM-style) attention gates."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .layers import Conv2d, Linear, Module
from .tensor import Tensor


class ChannelAttention(Module):
    """Per-channel weights in (0, 1) from pooled descriptors.

    Average- and max-pooled descriptors go through one shared two-layer MLP;
    the two results are summed before the sigmoid.
    """

    def __init__(self, channels: int, reduction: int = 4, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.reduction = reduction
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def _mlp(self, v: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(v)))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        avg = T.reshape(T.global_pool(x, "avg"), (n, c))
        mx = T.reshape(T.global_pool(x, "max"), (n, c))
        return T.reshape(T.sigmoid(self._mlp(avg) + self._mlp(mx)), (n, c, 1, 1))


class SpatialAttention(Module):
    """Per-pixel weights in (0, 1) from channel-pooled maps through one k×k conv."""

    def __init__(self, kernel_size: int = 7, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(2, 1, kernel_size, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        pooled = T.concat_channels([T.reduce_over_channels(x, "avg"), T.reduce_over_channels(x, "max")])
        return T.sigmoid(self.conv(pooled))


class CBAM(Module):
    """Channel gate followed by spatial gate; output has the input's shape."""

    def __init__(self, channels: int, reduction: int = 4, kernel_size: int = 7,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channel = ChannelAttention(channels, reduction, rng=rng)
        self.spatial = SpatialAttention(kernel_size, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        fc = T.mul_broadcast(x, self.channel(x))
        return T.mul_broadcast(fc, self.spatial(fc))


class ChannelGate(Module):
    """Channel attention applied as a gate: ``x * M_c(x)``."""

    def __init__(self, channels: int, reduction: int = 4, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return T.mul_broadcast(x, self.channel(x))

