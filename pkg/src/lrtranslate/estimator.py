"""scikit-learn compatible wrappers.

``LRDownscaler`` is a stateless transformer (HR images -> on-grid LR targets)
and ``LowResTranslator`` trains the generator/discriminator pair in ``fit`` and
translates source images towards LR targets in ``predict``.
"""

import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .downscale import COLOR_RESOLUTION, DownscaleSpec, difference_map, downscale, quantize
from .trainer import TrainConfig, Trainer
from .validation import ValidationError, check_image_batch

logger = logging.getLogger(__name__)


def check_images(X, name="X", size=None, value_range=(-1.0, 1.0)):
    """Convert an array-like of shape (N, C, H, W) to a float32 tensor and validate it."""
    if isinstance(X, torch.Tensor):
        t = X.detach().to(torch.float32)
    else:
        arr = np.asarray(X)
        if arr.dtype == object:
            raise ValidationError(f"{name} must be a numeric array")
        t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    if t.dim() == 3:
        t = t.unsqueeze(0)
    return check_image_batch(t, name, size=size, value_range=value_range)


def _to_output(t, like):
    return t if isinstance(like, torch.Tensor) else t.cpu().numpy()


class LRDownscaler(TransformerMixin, BaseEstimator):
    """Area-average downscale to ``lr_size`` and (optionally) snap to the ``r`` grid."""

    def __init__(self, lr_size=8, r=COLOR_RESOLUTION, quantize=True):
        self.lr_size = lr_size
        self.r = r
        self.quantize = quantize

    def fit(self, X, y=None):
        X = check_images(X)
        self.spec_ = DownscaleSpec.between(X.shape[-1], self.lr_size)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        Xt = check_images(X)
        spec = DownscaleSpec.between(Xt.shape[-1], self.lr_size)
        with torch.no_grad():
            lr = downscale(Xt, spec)
            if self.quantize:
                lr = quantize(lr, self.r)
        return _to_output(lr, X)


class LowResTranslator(BaseEstimator):
    """Low-resolution conditioned image-to-image translator.

    ``fit(X)`` trains on HR images ``X`` in [-1, 1] with shape (N, 3, hr, hr);
    ``predict(X, targets)`` translates each source towards its target, which may be
    an LR image (lr x lr) or an HR image that is downscaled first.
    """

    def __init__(self, hr_size=32, lr_size=4, base_channels=16, channel_cap=64, steps=1000,
                 batch=8, lr_g=1e-3, lr_d=4e-3, lambda_cyc=None, gamma_r1=0.5,
                 r=COLOR_RESOLUTION, spectral_norm=True, ema=False, seed=0, verbose=0):
        self.hr_size = hr_size
        self.lr_size = lr_size
        self.base_channels = base_channels
        self.channel_cap = channel_cap
        self.steps = steps
        self.batch = batch
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.lambda_cyc = lambda_cyc
        self.gamma_r1 = gamma_r1
        self.r = r
        self.spectral_norm = spectral_norm
        self.ema = ema
        self.seed = seed
        self.verbose = verbose

    def _train_config(self):
        return TrainConfig(hr_size=self.hr_size, lr_size=self.lr_size,
                           base_channels=self.base_channels, channel_cap=self.channel_cap,
                           steps=self.steps, batch=self.batch, lr_g=self.lr_g, lr_d=self.lr_d,
                           lambda_cyc=self.lambda_cyc, gamma_r1=self.gamma_r1, r=self.r,
                           spectral_norm=self.spectral_norm, ema=self.ema, seed=self.seed)

    def fit(self, X, y=None):
        X = check_images(X, size=self.hr_size)
        dataset = Dataset.from_images(X, self.lr_size, self.r)
        self.trainer_ = Trainer(self._train_config())

        def log(trainer, report):
            if self.verbose and report.step % max(1, self.steps // 10) == 0:
                logger.info("step %d  adv_d %.3f  adv_g %.3f  cyc %.3f  lr_l1 %.4f",
                            report.step, report.adv_d, report.adv_g, report.cyc, report.lr_l1)

        self.history_ = self.trainer_.fit(dataset, self.steps, callback=log)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    @property
    def generator_(self):
        check_is_fitted(self, "trainer_")
        return self.trainer_.inference_generator()

    def _targets(self, targets):
        t = check_images(targets, "targets")
        if t.shape[-1] == self.lr_size:
            return quantize(t, self.r)
        return quantize(downscale(t, DownscaleSpec.between(t.shape[-1], self.lr_size)), self.r)

    def predict(self, X, targets):
        check_is_fitted(self, "trainer_")
        Xt = check_images(X, size=self.hr_size)
        yt = self._targets(targets)
        if yt.shape[0] != Xt.shape[0]:
            raise ValidationError("X and targets must have the same number of images")
        G = self.generator_.eval()
        with torch.no_grad():
            out = G(Xt, yt)
        return _to_output(out, X)

    translate = predict

    def score(self, X, targets):
        """Negative mean difference map (in quantization levels) of the translations."""
        out = torch.as_tensor(self.predict(X, targets))
        yt = self._targets(targets)
        spec = DownscaleSpec.between(self.hr_size, self.lr_size)
        return -float(difference_map(yt, out, spec, self.r).mean())
