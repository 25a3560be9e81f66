"""Input validation helpers shared by the layers, estimators and metrics."""

import math

import numpy as np
import torch


class ValidationError(ValueError):
    """Raised when an input violates a shape, range or finiteness contract."""


class ConfigurationError(ValueError):
    """Raised when a model or run configuration is inconsistent."""


def is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def check_power_of_two(n, name):
    if not is_power_of_two(n):
        raise ConfigurationError(f"{name} must be a positive power of two, got {n!r}")
    return int(n)


def check_positive(value, name, strict=True, error=None):
    error = error or ValidationError
    if not isinstance(value, (int, float, np.integer, np.floating)) or math.isnan(value):
        raise error(f"{name} must be a real number, got {value!r}")
    if strict and value <= 0:
        raise error(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise error(f"{name} must be >= 0, got {value!r}")
    return value


def check_feature_map(x, name="x"):
    """Check a (B, C, H, W) tensor with finite entries and return it."""
    if not isinstance(x, torch.Tensor):
        raise ValidationError(f"{name} must be a torch.Tensor, got {type(x).__name__}")
    if x.dim() != 4:
        raise ValidationError(f"{name} must have 4 axes (B, C, H, W), got shape {tuple(x.shape)}")
    if min(x.shape[1:]) < 1:
        raise ValidationError(f"{name} has an empty axis: {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_image_batch(x, name="images", size=None, channels=None, value_range=None):
    """Validate an image batch.

    ``size`` pins the (square) spatial size, ``channels`` the channel count.
    ``value_range`` is an optional ``(lo, hi)`` pair checked with a small slack.
    """
    check_feature_map(x, name)
    if channels is not None and x.shape[1] != channels:
        raise ValidationError(f"{name} must have {channels} channels, got {x.shape[1]}")
    if size is not None and tuple(x.shape[-2:]) != (size, size):
        raise ValidationError(
            f"{name} must be {size}x{size} spatially, got {tuple(x.shape[-2:])}")
    if value_range is not None:
        lo, hi = value_range
        slack = 1e-6
        if x.min().item() < lo - slack or x.max().item() > hi + slack:
            raise ValidationError(f"{name} values must lie in [{lo}, {hi}]")
    return x


def check_same_spatial(a, b, name_a="x", name_b="cond"):
    if tuple(a.shape[-2:]) != tuple(b.shape[-2:]):
        raise ValidationError(
            f"spatial size of {name_a} {tuple(a.shape[-2:])} does not match "
            f"{name_b} {tuple(b.shape[-2:])}")


def check_features(features, name="features", min_samples=1):
    """Return ``features`` as a 2-D float64 array with at least ``min_samples`` rows."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D (num_samples, dim), got shape {arr.shape}")
    if arr.shape[0] < min_samples:
        raise ValidationError(
            f"{name} needs at least {min_samples} samples, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr
