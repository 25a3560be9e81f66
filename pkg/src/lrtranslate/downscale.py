"""Downscaling operator, color-resolution quantization and the difference map."""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .validation import ValidationError, check_image_batch, check_power_of_two

COLOR_RESOLUTION = 2.0 / 255.0


@dataclass(frozen=True)
class DownscaleSpec:
    """Area-average downscaling by an integer power-of-two ``factor``."""
    factor: int
    method: str = "area"

    def __post_init__(self):
        check_power_of_two(self.factor, "factor")
        if self.method != "area":
            raise ValidationError(f"only area-average downscaling is supported, got {self.method!r}")

    @classmethod
    def between(cls, hr_size, lr_size):
        if hr_size % lr_size:
            raise ValidationError(f"hr_size {hr_size} is not a multiple of lr_size {lr_size}")
        return cls(hr_size // lr_size)


def downscale(img, spec):
    """Mean over non-overlapping ``factor x factor`` blocks."""
    if isinstance(spec, int):
        spec = DownscaleSpec(spec)
    h, w = img.shape[-2:]
    if h % spec.factor or w % spec.factor:
        raise ValidationError(
            f"image size {h}x{w} is not divisible by downscale factor {spec.factor}")
    if spec.factor == 1:
        return img
    return F.avg_pool2d(img, spec.factor)


def round_half_away(v):
    return torch.sign(v) * torch.floor(v.abs() + 0.5)


def _grid_levels(img, r):
    # grid points are the multiples of r inside [-1, 1]
    top = math.floor(1.0 / r + 1e-9)
    return round_half_away(img / r).clamp(-top, top)


def quantize(img, r=COLOR_RESOLUTION):
    """Snap values to the nearest multiple of ``r`` inside [-1, 1]. No gradient.

    Ties round away from zero, except that the result never leaves [-1, 1]
    (with ``r = 2/255`` an exact 1.0 maps to 127 levels, not 128).
    """
    if not r > 0:
        raise ValidationError(f"color resolution r must be > 0, got {r}")
    return _grid_levels(img, r) * r


class _StraightThroughQuantize(torch.autograd.Function):
    @staticmethod
    def forward(ctx, img, r):
        return _grid_levels(img, r) * r

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def quantize_st(img, r=COLOR_RESOLUTION):
    """Quantize to the ``r``-spaced grid with an identity (straight-through) gradient.

    The forward value is bit-identical to :func:`quantize`.
    """
    if not r > 0:
        raise ValidationError(f"color resolution r must be > 0, got {r}")
    return _StraightThroughQuantize.apply(img, r)


def difference_map(y_lr, g_hr, spec, r=COLOR_RESOLUTION):
    """Absolute distance, in quantization levels, between ``y_lr`` and quantized DS(g_hr).

    Gradients reach ``g_hr`` through the straight-through quantizer.
    """
    if isinstance(spec, int):
        spec = DownscaleSpec(spec)
    lr = quantize_st(downscale(g_hr, spec), r)
    if lr.shape != y_lr.shape:
        raise ValidationError(
            f"downscaled image shape {tuple(lr.shape)} does not match target {tuple(y_lr.shape)}")
    return (y_lr - lr).abs() / r


def zero_difference(images, lr_size):
    """All-zeros difference map paired with real samples."""
    b, c = images.shape[:2]
    return images.new_zeros((b, c, lr_size, lr_size))


def make_lr_target(img, spec, r=COLOR_RESOLUTION):
    """On-grid LR target for an HR batch: ``quantize(downscale(img))``."""
    check_image_batch(img)
    with torch.no_grad():
        return quantize(downscale(img, spec), r)
