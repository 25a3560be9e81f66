"""U-shaped generator conditioned on an HR source image and an LR target."""

import math
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .norm_layers import (DEFAULT_EPS, DynamicMomentShortcut, MomentPair, SPAdaIN,
                          _instance_norm, _pono)
from .validation import ConfigurationError, ValidationError, check_image_batch, check_power_of_two


@dataclass
class GeneratorConfig:
    hr_size: int = 128
    lr_size: int = 8
    base_channels: int = 64
    channel_cap: int = 512
    num_scales: Optional[int] = None
    convs_per_block: int = 2
    spadain_hidden: int = 32
    image_channels: int = 3
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        check_power_of_two(self.hr_size, "hr_size")
        check_power_of_two(self.lr_size, "lr_size")
        if self.hr_size <= self.lr_size:
            raise ConfigurationError(
                f"hr_size ({self.hr_size}) must exceed lr_size ({self.lr_size})")
        if self.num_scales is None:
            self.num_scales = int(math.log2(self.hr_size // self.lr_size))
        if not 1 <= self.num_scales <= int(math.log2(self.hr_size)):
            raise ConfigurationError(f"num_scales out of range: {self.num_scales}")
        if self.base_channels < 1 or self.channel_cap < self.base_channels:
            raise ConfigurationError("need 1 <= base_channels <= channel_cap")
        if self.convs_per_block < 1:
            raise ConfigurationError("convs_per_block must be >= 1")

    def widths(self):
        """Channel widths at each encoder resolution, full resolution first."""
        w = [self.base_channels]
        for _ in range(self.num_scales):
            w.append(min(w[-1] * 2, self.channel_cap))
        return w

    def resolutions(self):
        """Spatial size of the skip produced by each encoder block."""
        return [self.hr_size >> (i + 1) for i in range(self.num_scales)]

    def to_dict(self):
        return asdict(self)


class EncoderTrace(NamedTuple):
    bottleneck: torch.Tensor
    skips: List[MomentPair]


def _conv_stack(dim_in, dim_out, n):
    convs = [nn.Conv2d(dim_in, dim_out if n == 1 else dim_in, 3, 1, 1)]
    for i in range(1, n):
        convs.append(nn.Conv2d(dim_in, dim_out if i == n - 1 else dim_in, 3, 1, 1))
    return nn.ModuleList(convs)


class PonoResBlk(nn.Module):
    """Downsampling encoder block: IN, convolutions, then Pono (moments returned)."""

    def __init__(self, dim_in, dim_out, convs=2, eps=DEFAULT_EPS):
        super().__init__()
        self.eps = eps
        self.convs = _conv_stack(dim_in, dim_out, convs)
        self.learned_sc = dim_in != dim_out
        if self.learned_sc:
            self.conv1x1 = nn.Conv2d(dim_in, dim_out, 1, 1, 0, bias=False)

    def _shortcut(self, x):
        if self.learned_sc:
            x = self.conv1x1(x)
        return F.avg_pool2d(x, 2)

    def _residual(self, x):
        x = _instance_norm(x, self.eps)
        for i, conv in enumerate(self.convs):
            x = conv(F.leaky_relu(x, 0.2))
            if i == 0:
                x = F.avg_pool2d(x, 2)
        return x

    def forward(self, x):
        out = (self._shortcut(x) + self._residual(x)) / math.sqrt(2)
        return _pono(out, self.eps)


class PonoSPAdaINResBlk(nn.Module):
    """Decoder block: SPAdaIN on the LR condition, convolutions, dynamic moment
    shortcut at the block's own resolution, then 2x upsampling."""

    def __init__(self, dim_in, dim_out, convs=2, hidden=32, cond_channels=3, eps=DEFAULT_EPS):
        super().__init__()
        self.convs = _conv_stack(dim_in, dim_out, convs)
        self.norms = nn.ModuleList(
            SPAdaIN(conv.in_channels, cond_channels, hidden, eps) for conv in self.convs)
        self.learned_sc = dim_in != dim_out
        if self.learned_sc:
            self.conv1x1 = nn.Conv2d(dim_in, dim_out, 1, 1, 0, bias=False)
        self.shortcut_mod = DynamicMomentShortcut(dim_out)

    def forward(self, x, cond, moments):
        h = x
        for norm, conv in zip(self.norms, self.convs):
            h = conv(F.leaky_relu(norm(h, cond), 0.2))
        sc = self.conv1x1(x) if self.learned_sc else x
        out = (sc + h) / math.sqrt(2)
        out = self.shortcut_mod(out, moments)
        return F.interpolate(out, scale_factor=2, mode="nearest")


class Generator(nn.Module):
    """G(X, y): translate HR source ``X`` so that it downscales onto LR target ``y``."""

    def __init__(self, config=None, **kwargs):
        super().__init__()
        if config is None:
            config = GeneratorConfig(**kwargs)
        elif kwargs:
            raise TypeError("pass either a GeneratorConfig or keyword arguments, not both")
        self.config = config
        widths = config.widths()
        c = config.image_channels
        self.from_rgb = nn.Conv2d(c, widths[0], 3, 1, 1)
        self.encoder = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for i in range(config.num_scales):
            self.encoder.append(
                PonoResBlk(widths[i], widths[i + 1], config.convs_per_block, config.eps))
            self.decoder.insert(0, PonoSPAdaINResBlk(
                widths[i + 1], widths[i], config.convs_per_block,
                config.spadain_hidden, c, config.eps))
        self.to_rgb = nn.Conv2d(widths[0], c, 3, 1, 1)

    def encode(self, X):
        cfg = self.config
        check_image_batch(X, "X", size=cfg.hr_size, channels=cfg.image_channels)
        h = self.from_rgb(X)
        skips = []
        for block in self.encoder:
            h, moments = block(h)
            skips.append(moments)
        return EncoderTrace(h, skips)

    def decode(self, trace, y_lr, zero_skips=False):
        cfg = self.config
        check_image_batch(y_lr, "y_lr", size=cfg.lr_size, channels=cfg.image_channels)
        if len(trace.skips) != cfg.num_scales:
            raise ValidationError(
                f"expected {cfg.num_scales} skips, got {len(trace.skips)}")
        if y_lr.shape[0] != trace.bottleneck.shape[0]:
            raise ValidationError("batch size of y_lr does not match the encoded source")
        h = trace.bottleneck
        for block, moments in zip(self.decoder, reversed(trace.skips)):
            size = h.shape[-1]
            if zero_skips:
                moments = MomentPair(torch.zeros_like(moments.mu), torch.zeros_like(moments.sigma))
            cond = y_lr if size == cfg.lr_size else F.interpolate(
                y_lr, size=(size, size), mode="bilinear", align_corners=False)
            h = block(h, cond, moments)
        return torch.tanh(self.to_rgb(F.leaky_relu(h, 0.2)))

    def forward(self, X, y_lr, zero_skips=False):
        return self.decode(self.encode(X), y_lr, zero_skips=zero_skips)


def generate(X, y_lr, generator):
    return generator(X, y_lr)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
