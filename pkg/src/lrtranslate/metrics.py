"""Evaluation metrics: FID, density/coverage and a pluggable perceptual distance.

All feature-space metrics take 2-D ``(num_samples, dim)`` arrays or
:class:`FeatureSet` objects and are computed in float64.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial.distance import cdist

from .validation import ConfigurationError, ValidationError, check_features, check_image_batch


@dataclass
class FeatureSet:
    features: np.ndarray
    embedder: str = "unknown"

    def __post_init__(self):
        self.features = check_features(self.features)

    def __len__(self):
        return self.features.shape[0]


def _as_features(obj, name, min_samples):
    if isinstance(obj, FeatureSet):
        obj = obj.features
    return check_features(obj, name, min_samples)


def _psd_sqrt(mat, name, tol=1e-8):
    vals, vecs = np.linalg.eigh(mat)
    floor = -tol * max(1.0, np.abs(vals).max())
    if vals.min() < floor:
        raise ValidationError(
            f"{name} is not positive semidefinite (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T, vals


def frechet_distance(mu1, cov1, mu2, cov2):
    """Frechet distance between two Gaussians.

    The cross term ``tr((cov1 cov2)^(1/2))`` is evaluated as the trace of the
    square root of the symmetric matrix ``cov1^(1/2) cov2 cov1^(1/2)``, which has
    the same eigenvalues; round-off negatives are clipped to zero.
    """
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ValidationError("feature dimensions differ")
    sqrt1, _ = _psd_sqrt(0.5 * (cov1 + cov1.T), "first covariance")
    _psd_sqrt(0.5 * (cov2 + cov2.T), "second covariance")
    middle = sqrt1 @ cov2 @ sqrt1
    _, vals = _psd_sqrt(0.5 * (middle + middle.T), "covariance product")
    diff = mu1 - mu2
    value = diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.sqrt(vals).sum()
    return float(max(value, 0.0))


def gaussian_stats(features):
    feats = check_features(features, min_samples=2)
    return feats.mean(axis=0), np.atleast_2d(np.cov(feats, rowvar=False))


def fid(real, fake):
    """Frechet distance between Gaussian fits (unbiased covariance) of two feature sets."""
    real = _as_features(real, "real", 2)
    fake = _as_features(fake, "fake", 2)
    if real.shape[1] != fake.shape[1]:
        raise ValidationError(f"feature dims differ: {real.shape[1]} vs {fake.shape[1]}")
    return frechet_distance(*gaussian_stats(real), *gaussian_stats(fake))


def knn_radii(real, k, chunk=1024):
    """Distance from each real point to its k-th nearest *other* real point."""
    n = real.shape[0]
    radii = np.empty(n)
    for start in range(0, n, chunk):
        d = cdist(real[start:start + chunk], real)
        rows = np.arange(d.shape[0])
        d[rows, start + rows] = np.inf
        radii[start:start + chunk] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return radii


def density_coverage(real, fake, k=5, chunk=1024):
    """Density and coverage of ``fake`` with respect to k-NN balls around ``real``.

    A fake point is inside the ball of real point i when its distance is ``<=``
    the ball radius, so zero-radius balls (duplicated reals) only catch exact
    copies. Distances are exact; memory is bounded by processing ``chunk`` rows of
    the pairwise matrix at a time, the cost is O(n^2).
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    real = _as_features(real, "real", k + 1)
    fake = _as_features(fake, "fake", 1)
    if real.shape[1] != fake.shape[1]:
        raise ValidationError(f"feature dims differ: {real.shape[1]} vs {fake.shape[1]}")
    radii = knn_radii(real, k, chunk)
    hits = 0
    covered = np.zeros(real.shape[0], dtype=bool)
    for start in range(0, real.shape[0], chunk):
        inside = cdist(real[start:start + chunk], fake) <= radii[start:start + chunk, None]
        hits += int(inside.sum())
        covered[start:start + chunk] = inside.any(axis=1)
    density = hits / (k * fake.shape[0])
    coverage = float(covered.mean())
    return float(density), coverage


# embedders


class PixelEmbedder:
    """Raw pixels: flattened vectors for set metrics, the image itself as one layer."""
    name = "pixels"

    def features(self, images):
        return images.detach().flatten(1).double().cpu().numpy()

    def feature_maps(self, images):
        return [images]

    def layer_weights(self, maps):
        return [torch.ones(m.shape[1], dtype=m.dtype) for m in maps]


class RandomConvEmbedder:
    """Frozen, seeded random convolution stack.

    Feature vectors are the global-average-pooled activations of every stage.
    """

    def __init__(self, channels=(16, 32, 64), seed=0, in_channels=3):
        self.name = f"random-conv-{'-'.join(map(str, channels))}-s{seed}"
        gen = torch.Generator().manual_seed(seed)
        self.weights = []
        c_in = in_channels
        for c_out in channels:
            w = torch.randn(c_out, c_in, 3, 3, generator=gen) * math.sqrt(2.0 / (9 * c_in))
            self.weights.append(w)
            c_in = c_out

    @torch.no_grad()
    def feature_maps(self, images):
        maps = []
        h = images.float()
        for i, w in enumerate(self.weights):
            h = F.relu(F.conv2d(h, w, padding=1))
            maps.append(h)
            if i < len(self.weights) - 1 and min(h.shape[-2:]) >= 2:
                h = F.avg_pool2d(h, 2)
        return maps

    def features(self, images):
        maps = self.feature_maps(images)
        return torch.cat([m.mean(dim=(2, 3)) for m in maps], dim=1).double().cpu().numpy()

    def layer_weights(self, maps):
        return [torch.ones(m.shape[1], dtype=m.dtype) for m in maps]


EMBEDDER_FORMAT = "lrtranslate-embedder"


def _read_array(base, spec):
    path = base / spec["file"]
    shape = tuple(spec["shape"])
    arr = np.fromfile(path, dtype="<f4")
    if arr.size != math.prod(shape):
        raise ConfigurationError(f"{path}: {arr.size} values, shape {shape} needs {math.prod(shape)}")
    return torch.from_numpy(arr.reshape(shape).copy())


class ImportedEmbedder:
    """Feed-forward network rebuilt from a JSON manifest plus raw float32 arrays.

    See the README for the manifest layout. Ops marked ``"tap": true`` feed the
    perceptual distance; the output of the op named by ``"features_from"`` (the
    last op by default) is flattened into the feature vector.
    """

    OPS = {"conv2d", "linear", "relu", "maxpool", "avgpool", "adaptive_avgpool", "flatten"}

    def __init__(self, ops, name="imported", input_spec=None, features_from=None):
        self.ops = ops
        self.name = name
        self.input_spec = input_spec or {}
        self.features_from = features_from or ops[-1]["name"]
        names = [op["name"] for op in ops]
        if self.features_from not in names:
            raise ConfigurationError(f"features_from {self.features_from!r} is not an op name")

    @classmethod
    def from_manifest(cls, path):
        path = Path(path)
        manifest = json.loads(path.read_text())
        if manifest.get("format") != EMBEDDER_FORMAT or manifest.get("version") != 1:
            raise ConfigurationError(f"{path}: not a version-1 {EMBEDDER_FORMAT} manifest")
        ops = []
        for i, raw in enumerate(manifest["ops"]):
            op = dict(raw)
            op.setdefault("name", f"op{i}")
            if op["op"] not in cls.OPS:
                raise ConfigurationError(f"unsupported op {op['op']!r}")
            for key in ("weight", "bias", "lpips_weight"):
                if key in op:
                    op[key] = _read_array(path.parent, op[key])
            ops.append(op)
        return cls(ops, manifest.get("name", path.stem), manifest.get("input"),
                   manifest.get("features_from"))

    def _prepare(self, images):
        x = images.float()
        size = self.input_spec.get("size")
        if size is not None and tuple(x.shape[-2:]) != (size, size):
            x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
        if "mean" in self.input_spec:
            mean = torch.tensor(self.input_spec["mean"]).view(1, -1, 1, 1)
            std = torch.tensor(self.input_spec["std"]).view(1, -1, 1, 1)
            x = ((x + 1) / 2 - mean) / std
        return x

    @torch.no_grad()
    def _run(self, images):
        h = self._prepare(images)
        taps, feats = [], None
        for op in self.ops:
            kind = op["op"]
            if kind == "conv2d":
                h = F.conv2d(h, op["weight"], op.get("bias"), op.get("stride", 1), op.get("padding", 0))
            elif kind == "linear":
                h = F.linear(h, op["weight"], op.get("bias"))
            elif kind == "relu":
                h = F.relu(h)
            elif kind == "maxpool":
                h = F.max_pool2d(h, op.get("kernel", 2))
            elif kind == "avgpool":
                h = F.avg_pool2d(h, op.get("kernel", 2))
            elif kind == "adaptive_avgpool":
                h = F.adaptive_avg_pool2d(h, tuple(op["size"]))
            elif kind == "flatten":
                h = h.flatten(1)
            if op.get("tap"):
                if h.dim() != 4:
                    raise ConfigurationError(f"tapped op {op['name']!r} must produce a 4-D map")
                taps.append((h, op.get("lpips_weight")))
            if op["name"] == self.features_from:
                feats = h.flatten(1)
        return taps, feats

    def feature_maps(self, images):
        return [m for m, _ in self._run(images)[0]]

    def layer_weights(self, maps):
        tapped = [op for op in self.ops if op.get("tap")]
        return [op["lpips_weight"].flatten() if "lpips_weight" in op
                else torch.ones(m.shape[1], dtype=m.dtype) for op, m in zip(tapped, maps)]

    def features(self, images):
        return self._run(images)[1].double().cpu().numpy()


def _normalize_channels(f, eps=1e-10):
    return f / (f.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)


def perceptual_distance(a, b, embedder, reduction="mean"):
    """LPIPS-style distance between two image batches.

    Each layer's features are scaled to unit length across channels; the squared
    difference is weighted per channel, summed over channels, averaged over
    positions, and summed over layers. Returns the batch mean (or per-sample
    values with ``reduction="none"``).
    """
    check_image_batch(a, "a")
    check_image_batch(b, "b")
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    maps_a = embedder.feature_maps(a)
    maps_b = embedder.feature_maps(b)
    weights = embedder.layer_weights(maps_a)
    if not (len(maps_a) == len(maps_b) == len(weights)):
        raise ConfigurationError("embedder returned inconsistent layer counts")
    total = torch.zeros(a.shape[0], dtype=torch.float64)
    for fa, fb, w in zip(maps_a, maps_b, weights):
        if w.numel() != fa.shape[1]:
            raise ConfigurationError(
                f"layer has {fa.shape[1]} channels but {w.numel()} weights")
        diff = (_normalize_channels(fa.double()) - _normalize_channels(fb.double())).pow(2)
        total += (diff * w.double().view(1, -1, 1, 1)).sum(dim=1).mean(dim=(1, 2))
    if reduction == "none":
        return total.numpy()
    return float(total.mean())
