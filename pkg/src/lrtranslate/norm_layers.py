"""Normalization and modulation primitives used by the generator.

Functional forms (:func:`pono`, :func:`instance_norm`) validate their inputs;
the modules call the unchecked ``_``-prefixed versions on the hot path.
"""

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .validation import ValidationError, check_feature_map, check_same_spatial

DEFAULT_EPS = 1e-5


class MomentPair(NamedTuple):
    """Per-position channel statistics removed by :func:`pono`.

    Both tensors have shape (B, 1, H, W); ``sigma`` is a standard deviation,
    ``sqrt(var + eps)``.
    """
    mu: torch.Tensor
    sigma: torch.Tensor


def _pono(x, eps=DEFAULT_EPS):
    mu = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, keepdim=True, unbiased=False)
    sigma = (var + eps).sqrt()
    return (x - mu) / sigma, MomentPair(mu, sigma)


def _instance_norm(x, eps=DEFAULT_EPS):
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mu) / (var + eps).sqrt()


def pono(x, eps=DEFAULT_EPS):
    """Positional normalization across channels at every spatial position.

    Returns the normalized map and the :class:`MomentPair` that was removed, so
    that ``out * sigma + mu`` reconstructs ``x``.
    """
    check_feature_map(x)
    if eps <= 0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    return _pono(x, eps)


def instance_norm(x, eps=DEFAULT_EPS):
    """Normalize every (batch, channel) slice to zero spatial mean and unit std."""
    check_feature_map(x)
    if eps <= 0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    return _instance_norm(x, eps)


def reinject_moments(x, moments):
    """Static moment shortcut: undo :func:`pono` with the given statistics."""
    return x * moments.sigma + moments.mu


class SPAdaIN(nn.Module):
    """Spatially adaptive instance normalization.

    ``out = instance_norm(x) * gamma(cond) + beta(cond)`` where gamma and beta are
    per-pixel, per-channel maps predicted from the conditioning image, which the
    caller must already have resized to the spatial size of ``x``.
    """

    def __init__(self, num_features, cond_channels=3, hidden=32, eps=DEFAULT_EPS):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.shared = nn.Conv2d(cond_channels, hidden, 3, 1, 1)
        self.to_gamma = nn.Conv2d(hidden, num_features, 3, 1, 1)
        self.to_beta = nn.Conv2d(hidden, num_features, 3, 1, 1)
        self.reset_modulation()

    def reset_modulation(self):
        # gamma ~ 1 and beta ~ 0 at initialization
        nn.init.normal_(self.to_gamma.weight, std=1e-3)
        nn.init.ones_(self.to_gamma.bias)
        nn.init.normal_(self.to_beta.weight, std=1e-3)
        nn.init.zeros_(self.to_beta.bias)

    def modulation(self, cond):
        h = F.relu(self.shared(cond))
        return self.to_gamma(h), self.to_beta(h)

    def forward(self, x, cond):
        check_same_spatial(x, cond)
        gamma, beta = self.modulation(cond)
        return _instance_norm(x, self.eps) * gamma + beta


def spadain(x, cond, layer):
    """Functional entry point: validate inputs then apply a :class:`SPAdaIN` layer."""
    check_feature_map(x)
    check_feature_map(cond, "cond")
    if x.shape[1] != layer.num_features:
        raise ValidationError(
            f"x has {x.shape[1]} channels, layer expects {layer.num_features}")
    return layer(x, cond)


class DynamicMomentShortcut(nn.Module):
    """Learned moment shortcut.

    A convolution over the concatenated encoder moments ``(mu, sigma)`` predicts
    ``gamma`` and ``beta`` and the features are modulated as ``x * gamma + beta``.
    """

    def __init__(self, num_features, kernel_size=3):
        super().__init__()
        self.num_features = num_features
        pad = kernel_size // 2
        self.to_gamma = nn.Conv2d(2, num_features, kernel_size, 1, pad)
        self.to_beta = nn.Conv2d(2, num_features, kernel_size, 1, pad)
        nn.init.normal_(self.to_gamma.weight, std=1e-3)
        nn.init.ones_(self.to_gamma.bias)
        nn.init.normal_(self.to_beta.weight, std=1e-3)
        nn.init.zeros_(self.to_beta.bias)

    def modulation(self, moments):
        stats = torch.cat([moments.mu, moments.sigma], dim=1)
        return self.to_gamma(stats), self.to_beta(stats)

    def forward(self, x, moments):
        check_same_spatial(x, moments.mu, "x", "moments")
        gamma, beta = self.modulation(moments)
        return x * gamma + beta


def dynamic_moment_shortcut(x, moments, layer):
    check_feature_map(x)
    check_feature_map(moments.mu, "moments.mu")
    check_feature_map(moments.sigma, "moments.sigma")
    return layer(x, moments)
