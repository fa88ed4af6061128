"""Dual-branch attention U-network: shared RSU encoder, mask and edge decoders."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import tensor as T
from .attention import CBAM, ChannelGate
from .blocks import RSU, CFBlock, ConcatFusion
from .errors import ConfigurationError, DataError, DimensionError
from .layers import Conv2d, Module
from .tensor import Tensor

N_STAGES = 6


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 3
    widths: tuple = (16, 32, 64, 128, 128, 128)
    # None -> widths // 2
    mids: Optional[tuple] = None
    heights: tuple = (7, 6, 5, 4, 4, 4)
    dilated: tuple = (False, False, False, False, True, True)
    reduction: int = 4
    spatial_kernel: int = 7
    cf_hidden: int = 6
    fusion: str = "cf"
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("widths", "heights", "dilated"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.mids is not None:
            object.__setattr__(self, "mids", tuple(self.mids))
        self.validate()

    @property
    def mid_widths(self) -> tuple:
        return self.mids if self.mids is not None else tuple(max(1, w // 2) for w in self.widths)

    @property
    def size_multiple(self) -> int:
        return 2 ** (N_STAGES - 1)

    def validate(self) -> None:
        for name in ("widths", "heights", "dilated"):
            if len(getattr(self, name)) != N_STAGES:
                raise ConfigurationError(f"{name} must list {N_STAGES} stages, got {getattr(self, name)}")
        if self.mids is not None and len(self.mids) != N_STAGES:
            raise ConfigurationError(f"mids must list {N_STAGES} stages, got {self.mids}")
        if self.in_channels < 1 or min(self.widths) < 1 or min(self.mid_widths) < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.fusion not in ("cf", "concat"):
            raise ConfigurationError(f"fusion must be 'cf' or 'concat', got {self.fusion!r}")
        if self.reduction < 1 or self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ConfigurationError("reduction must be >= 1 and spatial_kernel odd")
        for stage, (n, dil) in enumerate(zip(self.heights, self.dilated)):
            if n < 2:
                raise ConfigurationError(f"stage {stage + 1}: RSU height must be >= 2, got {n}")
            # the smallest admissible input (32) reaches stage s at 32 / 2**s
            if not dil and 2 ** (n - 2) > self.size_multiple // 2 ** stage:
                raise ConfigurationError(
                    f"stage {stage + 1}: height {n} needs {2 ** (n - 2)} px but the stage may see "
                    f"only {self.size_multiple // 2 ** stage}; lower the height or mark it dilated"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_json().encode()).digest()


@dataclass
class NetworkOutput:
    s_mask: Tensor
    s_edge: Tensor
    mask_sides: List[Tensor] = field(default_factory=list)
    edge_sides: List[Tensor] = field(default_factory=list)


class Branch(Module):
    """One decoder branch with its skip gates, side heads and fusion block."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        w, mids = cfg.widths, cfg.mid_widths
        # the deepest path (stage 6 -> decoder 5) is gated by channel attention alone
        self.deep_gate = ChannelGate(w[5], cfg.reduction, rng=rng)
        self.skip_gates = [CBAM(w[s], cfg.reduction, cfg.spatial_kernel, rng=rng) for s in range(5)]
        self.decoders = [
            RSU(cfg.heights[s], w[s] + w[s + 1], mids[s], w[s], cfg.dilated[s], rng=rng,
                bn_momentum=cfg.bn_momentum)
            for s in range(5)
        ]
        self.side_convs = [Conv2d(w[s], 1, 3, rng=rng) for s in range(6)]
        if cfg.fusion == "cf":
            self.fusion = CFBlock(6, cfg.cf_hidden, rng=rng)
        else:
            self.fusion = ConcatFusion(6, rng=rng)

    def forward(self, feats: List[Tensor]):
        out_h, out_w = feats[0].shape[2:]
        d = self.deep_gate(feats[5])
        decoded = [None] * 5
        for s in reversed(range(5)):
            skip = self.skip_gates[s](feats[s])
            d = T.upsample_bilinear(d, *skip.shape[2:])
            d = self.decoders[s](T.concat_channels([d, skip]))
            decoded[s] = d
        stage_out = decoded + [feats[5]]
        sides = [T.upsample_bilinear(T.sigmoid(conv(h)), out_h, out_w)
                 for conv, h in zip(self.side_convs, stage_out)]
        return T.sigmoid(self.fusion(sides, out_h, out_w)), sides


class Network(Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        w, mids = cfg.widths, cfg.mid_widths
        ins = (cfg.in_channels,) + w[:-1]
        self.encoder = [
            RSU(cfg.heights[s], ins[s], mids[s], w[s], cfg.dilated[s], rng=rng, bn_momentum=cfg.bn_momentum)
            for s in range(N_STAGES)
        ]
        self.mask_branch = Branch(cfg, rng)
        self.edge_branch = Branch(cfg, rng)

    def encode(self, x: Tensor) -> List[Tensor]:
        feats = []
        h = x
        for s, stage in enumerate(self.encoder):
            if s:
                h = T.maxpool2d(h)
            h = stage(h)
            feats.append(h)
        return feats

    def forward(self, x) -> NetworkOutput:
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"expected input N×{self.config.in_channels}×H×W, got {x.shape}"
            )
        m = self.config.size_multiple
        h, w = x.shape[2:]
        if h < m or w < m or h % m or w % m:
            raise DimensionError(f"input H and W must be positive multiples of {m}, got {h}×{w}")
        if x.data.min() < 0.0 or x.data.max() > 1.0:
            raise DataError("input values must lie in [0, 1]")
        feats = self.encode(x)
        s_mask, mask_sides = self.mask_branch(feats)
        s_edge, edge_sides = self.edge_branch(feats)
        return NetworkOutput(s_mask, s_edge, mask_sides, edge_sides)


def build(config: Optional[NetworkConfig] = None) -> Network:
    return Network(config if config is not None else NetworkConfig())


def forward(net: Network, x) -> NetworkOutput:
    return net(x)
