"""Training objectives: adversarial, cycle consistency, R1 and their combination.

Discriminator scores are raw logits. ``softplus(-s) = -log sigmoid(s)`` is used
for every cross-entropy term.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F

from .downscale import COLOR_RESOLUTION, DownscaleSpec, difference_map, quantize, downscale, zero_difference
from .validation import ValidationError, check_positive


@dataclass
class LossWeights:
    lambda_cyc: float = 1.0
    gamma_r1: float = 0.5
    r: float = COLOR_RESOLUTION

    def __post_init__(self):
        check_positive(self.lambda_cyc, "lambda_cyc", strict=False)
        check_positive(self.gamma_r1, "gamma_r1", strict=False)
        check_positive(self.r, "r")

    @classmethod
    def for_resolution(cls, hr_size, **overrides):
        """Cycle weight 1 up to 128x128 and 0.1 above."""
        return cls(lambda_cyc=default_lambda_cyc(hr_size), **overrides)


def default_lambda_cyc(hr_size):
    return 1.0 if hr_size <= 128 else 0.1


class Translations(NamedTuple):
    """The four generator passes of one iteration."""
    fake_xy: torch.Tensor   # G(X, y)
    fake_yx: torch.Tensor   # G(Y, x)
    cycle_x: torch.Tensor   # G(G(X, y), x)
    cycle_y: torch.Tensor   # G(G(Y, x), y)


def translate_all(G, X, x, Y, y):
    fake_xy = G(X, y)
    fake_yx = G(Y, x)
    return Translations(fake_xy, fake_yx, G(fake_xy, x), G(fake_yx, y))


def _check_pair(X, x, spec, r):
    if not torch.equal(quantize(downscale(X.detach(), spec), r), x):
        raise ValidationError("LR image is not the quantized downscale of its HR image")


class AdversarialTerms(NamedTuple):
    loss_d: torch.Tensor
    loss_g: torch.Tensor
    d_xy: torch.Tensor
    d_yx: torch.Tensor


def adversarial_terms(D, G, X, x, Y, y, r=COLOR_RESOLUTION, fakes=None, strict=False):
    """Symmetric adversarial losses over both translation directions.

    ``loss_d`` sums the real terms on ``(X, 0)`` and ``(Y, 0)`` and the fake terms on
    ``(G(X, y), d_xy)`` and ``(G(Y, x), d_yx)``; the fakes are detached for it.
    ``loss_g`` is the non-saturating ``-log sigmoid(D(fake, d))`` on the same fakes.
    Each term is a batch mean. ``fakes`` may carry precomputed ``(G(X, y), G(Y, x))``.
    """
    spec = DownscaleSpec.between(X.shape[-1], x.shape[-1])
    if strict:
        _check_pair(X, x, spec, r)
        _check_pair(Y, y, spec, r)
    if fakes is None:
        fakes = (G(X, y), G(Y, x))
    fake_xy, fake_yx = fakes
    zeros = zero_difference(X, x.shape[-1])

    d_xy = difference_map(y, fake_xy, spec, r)
    d_yx = difference_map(x, fake_yx, spec, r)

    real = F.softplus(-D(X, zeros)).mean() + F.softplus(-D(Y, zeros)).mean()
    fake = (F.softplus(D(fake_xy.detach(), d_xy.detach())).mean()
            + F.softplus(D(fake_yx.detach(), d_yx.detach())).mean())
    loss_d = real + fake
    loss_g = F.softplus(-D(fake_xy, d_xy)).mean() + F.softplus(-D(fake_yx, d_yx)).mean()
    return AdversarialTerms(loss_d, loss_g, d_xy, d_yx)


def discriminator_adv_loss(D, X, Y, fake_xy, d_xy, fake_yx, d_yx):
    zeros = zero_difference(X, d_xy.shape[-1])
    return (F.softplus(-D(X, zeros)).mean() + F.softplus(-D(Y, zeros)).mean()
            + F.softplus(D(fake_xy, d_xy)).mean() + F.softplus(D(fake_yx, d_yx)).mean())


def generator_adv_loss(D, fake_xy, d_xy, fake_yx, d_yx):
    return F.softplus(-D(fake_xy, d_xy)).mean() + F.softplus(-D(fake_yx, d_yx)).mean()


def cycle_loss(G, X, x, Y, y, translations: Optional[Translations] = None):
    """``mean|X - G(G(X, y), x)| + mean|Y - G(G(Y, x), y)|``."""
    if translations is None:
        cycle_x = G(G(X, y), x)
        cycle_y = G(G(Y, x), y)
    else:
        cycle_x, cycle_y = translations.cycle_x, translations.cycle_y
    if cycle_x.shape != X.shape or cycle_y.shape != Y.shape:
        raise ValidationError("reconstructions do not match the source shapes")
    return (X - cycle_x).abs().mean() + (Y - cycle_y).abs().mean()


def r1_penalty(D, reals, gamma_r1=0.5, lr_size=None):
    """``gamma/2 * E[||grad_img D(img, 0)||^2]`` over real samples.

    ``D`` is called as ``D(img, zeros)``; ``lr_size`` defaults to
    ``D.config.lr_size``.
    """
    if gamma_r1 == 0:
        return reals.new_zeros(())
    if lr_size is None:
        lr_size = D.config.lr_size
    reals = reals.detach().requires_grad_(True)
    scores = D(reals, zero_difference(reals, lr_size))
    grad, = torch.autograd.grad(scores.sum(), reals, create_graph=True, allow_unused=True)
    if grad is None:
        return reals.new_zeros(())
    return 0.5 * gamma_r1 * grad.pow(2).flatten(1).sum(1).mean()


def full_objective(adv_d, adv_g, cyc, r1, lambda_cyc):
    """Return ``(adv_d + r1, adv_g + lambda_cyc * cyc)``."""
    return adv_d + r1, adv_g + lambda_cyc * cyc
