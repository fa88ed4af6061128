"""Residual U-block and the context fusion block."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import ChannelAttention
from .errors import ConfigurationError
from .layers import Conv2d, ConvBnRelu, Module
from .tensor import Tensor


class RSU(Module):
    """Residual U-block of height ``n``: ``out = F(x) + U(F(x))``.

    ``F`` is a conv to ``out_ch``. ``U`` is an ``n``-level encoder-decoder at
    width ``mid_ch``: levels 1..n-1 are plain convs with a 2×2 max-pool between
    consecutive ones (n-2 pools), level n is a dilation-2 conv at the coarsest
    resolution, and the decoder mirrors levels n-1..1 with skip concatenation.

    With ``dilated=True`` nothing is pooled; level i uses dilation 2**(i-1)
    and the bottom uses 2**(n-1), so every level keeps full resolution.
    """

    def __init__(self, height: int, in_ch: int, mid_ch: int, out_ch: int, dilated: bool = False,
                 rng: Optional[np.random.Generator] = None, bn_momentum: float = 0.1):
        super().__init__()
        if height < 2:
            raise ConfigurationError(f"RSU height must be >= 2, got {height}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.height = height
        self.dilated = dilated
        self.out_ch = out_ch

        def dil(level: int) -> int:
            return 2 ** (level - 1) if dilated else 1

        kw = dict(rng=rng, bn_momentum=bn_momentum)
        self.conv_in = ConvBnRelu(in_ch, out_ch, **kw)
        self.enc = [ConvBnRelu(out_ch if lvl == 1 else mid_ch, mid_ch, dil(lvl), **kw)
                    for lvl in range(1, height)]
        self.bottom = ConvBnRelu(mid_ch, mid_ch, 2 ** (height - 1) if dilated else 2, **kw)
        self.dec = [ConvBnRelu(2 * mid_ch, out_ch if lvl == 1 else mid_ch, dil(lvl), **kw)
                    for lvl in range(1, height)]

    def min_size(self) -> int:
        return 1 if self.dilated else 2 ** (self.height - 2)

    def internal_modules(self) -> list:
        """Everything that makes up ``U`` (i.e. all but the input conv)."""
        return [*self.enc, self.bottom, *self.dec]

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        if min(h, w) < self.min_size():
            raise ConfigurationError(
                f"RSU of height n={self.height} needs spatial size >= {self.min_size()}, got {h}×{w}"
            )
        hx_in = self.conv_in(x)
        feats = []
        hx = hx_in
        for i, conv in enumerate(self.enc):
            hx = conv(hx)
            feats.append(hx)
            if not self.dilated and i < self.height - 2:
                hx = T.maxpool2d(hx)
        d = self.bottom(hx)
        for i in reversed(range(self.height - 1)):
            skip = feats[i]
            if d.shape[2:] != skip.shape[2:]:
                d = T.upsample_bilinear(d, *skip.shape[2:])
            d = self.dec[i](T.concat_channels([d, skip]))
        return hx_in + d


class CFBlock(Module):
    """Context fusion: SE-style reweighting of resized side maps, then a 3×3 conv.

    Returns pre-sigmoid logits of shape N×1×outH×outW.
    """

    def __init__(self, n_inputs: int = 6, hidden: int = 6, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_inputs = n_inputs
        self.squeeze = ChannelAttention(n_inputs, reduction=max(1, n_inputs // hidden), rng=rng)
        self.out_conv = Conv2d(n_inputs, 1, 3, rng=rng)

    def forward(self, sides: Sequence[Tensor], out_h: int, out_w: int) -> Tensor:
        if len(sides) != self.n_inputs:
            raise ConfigurationError(f"CF block expects {self.n_inputs} side maps, got {len(sides)}")
        x = T.concat_channels([T.upsample_bilinear(s, out_h, out_w) for s in sides])
        return self.out_conv(T.mul_broadcast(x, self.squeeze(x)))


class ConcatFusion(Module):
    """Ablation only: unweighted 1×1 fusion of the concatenated side maps."""

    def __init__(self, n_inputs: int = 6, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.n_inputs = n_inputs
        self.out_conv = Conv2d(n_inputs, 1, 1, rng=rng)

    def forward(self, sides: Sequence[Tensor], out_h: int, out_w: int) -> Tensor:
        if len(sides) != self.n_inputs:
            raise ConfigurationError(f"fusion expects {self.n_inputs} side maps, got {len(sides)}")
        return self.out_conv(T.concat_channels([T.upsample_bilinear(s, out_h, out_w) for s in sides]))
