"""Real/fake critic that also consumes the LR difference map."""

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .validation import ConfigurationError, ValidationError, check_image_batch, check_power_of_two


@dataclass
class DiscriminatorConfig:
    hr_size: int = 128
    lr_size: int = 8
    base_channels: int = 64
    channel_cap: int = 512
    image_channels: int = 3

    def __post_init__(self):
        check_power_of_two(self.hr_size, "hr_size")
        check_power_of_two(self.lr_size, "lr_size")
        # the trunk downsamples to 4x4; the difference map is injected at lr_size
        if not 4 <= self.lr_size < self.hr_size:
            raise ConfigurationError(
                f"no discriminator layer has spatial size {self.lr_size} "
                f"(trunk covers 4..{self.hr_size // 2})")

    def to_dict(self):
        return asdict(self)


class ResBlk(nn.Module):
    def __init__(self, dim_in, dim_out, downsample=True):
        super().__init__()
        self.downsample = downsample
        self.conv1 = nn.Conv2d(dim_in, dim_in, 3, 1, 1)
        self.conv2 = nn.Conv2d(dim_in, dim_out, 3, 1, 1)
        self.learned_sc = dim_in != dim_out
        if self.learned_sc:
            self.conv1x1 = nn.Conv2d(dim_in, dim_out, 1, 1, 0, bias=False)

    def _shortcut(self, x):
        if self.learned_sc:
            x = self.conv1x1(x)
        if self.downsample:
            x = F.avg_pool2d(x, 2)
        return x

    def _residual(self, x):
        x = self.conv1(F.leaky_relu(x, 0.2))
        if self.downsample:
            x = F.avg_pool2d(x, 2)
        return self.conv2(F.leaky_relu(x, 0.2))

    def forward(self, x):
        return (self._shortcut(x) + self._residual(x)) / math.sqrt(2)


class Discriminator(nn.Module):
    """Single-head residual discriminator.

    ``forward(img, d)`` returns one raw logit per sample. The difference map ``d``
    (B, C, lr, lr) is concatenated onto the trunk activation of the same spatial
    size and merged back with a 1x1 convolution.
    """

    def __init__(self, config=None, **kwargs):
        super().__init__()
        if config is None:
            config = DiscriminatorConfig(**kwargs)
        elif kwargs:
            raise TypeError("pass either a DiscriminatorConfig or keyword arguments, not both")
        self.config = config
        c = config.image_channels
        dim = config.base_channels
        self.from_rgb = nn.Conv2d(c, dim, 3, 1, 1)
        self.blocks = nn.ModuleList()
        size = config.hr_size
        self.inject_after = None
        while size > 4:
            dim_out = min(dim * 2, config.channel_cap)
            self.blocks.append(ResBlk(dim, dim_out))
            dim = dim_out
            size //= 2
            if size == config.lr_size:
                self.inject_after = len(self.blocks) - 1
                self.merge = nn.Conv2d(dim + c, dim, 1, 1, 0)
        if self.inject_after is None:
            raise ConfigurationError(f"no layer of spatial size {config.lr_size}")
        self.head_conv = nn.Conv2d(dim, dim, 4, 1, 0)
        self.out = nn.Conv2d(dim, 1, 1, 1, 0)

    def forward(self, img, d):
        cfg = self.config
        check_image_batch(img, "img", size=cfg.hr_size, channels=cfg.image_channels)
        if tuple(d.shape) != (img.shape[0], cfg.image_channels, cfg.lr_size, cfg.lr_size):
            raise ValidationError(
                f"difference map must be {(img.shape[0], cfg.image_channels, cfg.lr_size, cfg.lr_size)}, "
                f"got {tuple(d.shape)}")
        h = self.from_rgb(img)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i == self.inject_after:
                h = self.merge(torch.cat([h, d], dim=1))
        h = self.head_conv(F.leaky_relu(h, 0.2))
        h = self.out(F.leaky_relu(h, 0.2))
        return h.view(h.shape[0])


def discriminate(img, d, discriminator):
    return discriminator(img, d)
