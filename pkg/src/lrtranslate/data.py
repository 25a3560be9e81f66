"""Image ingestion, HR/LR pair construction and batch sampling."""

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .downscale import COLOR_RESOLUTION, DownscaleSpec, downscale, quantize
from .validation import ConfigurationError, ValidationError, check_image_batch, check_power_of_two

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SUPPORTED_LR_SIZES = (4, 8, 16, 32)


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetSpec:
    root: str
    hr_size: int = 128
    lr_size: int = 8
    pattern: str = "**/*"
    quantize: bool = True
    r: float = COLOR_RESOLUTION
    split: Tuple[float, float] = (1.0, 0.0)
    seed: int = 0
    hflip: bool = False

    def __post_init__(self):
        check_power_of_two(self.hr_size, "hr_size")
        check_power_of_two(self.lr_size, "lr_size")
        if self.lr_size >= self.hr_size:
            raise ConfigurationError("lr_size must be smaller than hr_size")
        self.split = tuple(float(s) for s in self.split)
        if len(self.split) != 2 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigurationError(f"split must be two nonnegative fractions summing to 1, got {self.split}")

    @property
    def downscale_spec(self):
        return DownscaleSpec.between(self.hr_size, self.lr_size)


@dataclass
class ManifestEntry:
    id: str
    path: str
    status: str = "ok"
    original_size: Optional[Tuple[int, int]] = None
    note: str = ""


@dataclass
class Dataset:
    """In-memory HR images in [-1, 1] with their on-grid LR targets."""
    hr: torch.Tensor
    lr: torch.Tensor
    ids: List[str]
    spec: DownscaleSpec
    r: float = COLOR_RESOLUTION
    manifest: List[ManifestEntry] = field(default_factory=list)
    hflip: bool = False

    def __len__(self):
        return self.hr.shape[0]

    @property
    def hr_size(self):
        return self.hr.shape[-1]

    @property
    def lr_size(self):
        return self.lr.shape[-1]

    @classmethod
    def from_images(cls, images, lr_size, r=COLOR_RESOLUTION, ids=None, quantized=True, hflip=False):
        """Build a dataset from an (N, C, H, W) tensor or array in [-1, 1]."""
        hr = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images)
        hr = hr.to(torch.float32).contiguous()
        check_image_batch(hr, "images", value_range=(-1.0, 1.0))
        if hr.shape[-1] != hr.shape[-2]:
            raise ValidationError("images must be square")
        spec = DownscaleSpec.between(hr.shape[-1], lr_size)
        x = downscale(hr, spec)
        lr = quantize(x, r) if quantized else x
        if ids is None:
            ids = [str(i) for i in range(hr.shape[0])]
        return cls(hr, lr, list(ids), spec, r, hflip=hflip)

    def subset(self, indices):
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        return Dataset(self.hr[idx], self.lr[idx], [self.ids[i] for i in idx.tolist()],
                       self.spec, self.r, self.manifest, self.hflip)

    def split(self, fractions, seed=0):
        """Deterministic ``(train, test)`` split by a seeded permutation."""
        n = len(self)
        perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed)).tolist()
        n_test = int(round(fractions[1] * n))
        return self.subset(sorted(perm[n_test:])), self.subset(sorted(perm[:n_test]))


def list_images(root, pattern="**/*"):
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"data directory {root} does not exist")
    return sorted(p for p in root.glob(pattern)
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def center_crop_resize(img, size):
    """Square center crop, then box (area) filter when shrinking or bilinear when enlarging."""
    w, h = img.size
    s = min(w, h)
    left, top = (w - s) // 2, (h - s) // 2
    img = img.crop((left, top, left + s, top + s))
    if s == size:
        return img
    resample = Image.Resampling.BOX if s > size else Image.Resampling.BILINEAR
    return img.resize((size, size), resample=resample)


def image_to_tensor(img):
    """PIL image to a (3, H, W) float32 tensor in [-1, 1]."""
    arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1) / 127.5 - 1.0


def tensor_to_image(t):
    """(3, H, W) tensor in [-1, 1] to an 8-bit PIL image."""
    arr = ((t.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return Image.fromarray(arr.permute(1, 2, 0).cpu().numpy())


def read_image(path, size=None):
    with Image.open(path) as img:
        img.load()
        if size is not None:
            img = center_crop_resize(img, size)
        return image_to_tensor(img)


def load_dataset(spec):
    """Decode, crop and resize every image under ``spec.root``.

    Undecodable files are skipped with a warning and recorded in the manifest.
    """
    paths = list_images(spec.root, spec.pattern)
    root = Path(spec.root)
    tensors, ids, manifest = [], [], []
    for path in paths:
        item_id = path.relative_to(root).as_posix()
        try:
            with Image.open(path) as img:
                img.load()
                original = img.size
                tensors.append(image_to_tensor(center_crop_resize(img, spec.hr_size)))
        except (UnidentifiedImageError, OSError) as exc:
            warnings.warn(f"skipping undecodable image {path}: {exc}")
            manifest.append(ManifestEntry(item_id, str(path), "skipped", None, str(exc)))
            continue
        ids.append(item_id)
        manifest.append(ManifestEntry(item_id, str(path), "ok", original,
                                      f"center-crop, resize to {spec.hr_size}"))
    if not tensors:
        raise DatasetError(f"no decodable images found under {spec.root}")
    if len(tensors) == 1:
        warnings.warn("dataset has a single image; every pair will have X == Y")
    ds = Dataset.from_images(torch.stack(tensors), spec.lr_size, spec.r, ids,
                             quantized=spec.quantize, hflip=spec.hflip)
    ds.manifest = manifest
    return ds


def write_manifest(dataset, path, spec=None):
    record = {
        "items": [asdict(e) for e in dataset.manifest],
        "hr_size": dataset.hr_size,
        "lr_size": dataset.lr_size,
        "r": dataset.r,
        "preprocessing": "square center crop; box filter down / bilinear up; scale to [-1, 1]; "
                         "LR = quantize(average_pool(HR))",
    }
    if spec is not None:
        record["spec"] = asdict(spec)
    Path(path).write_text(json.dumps(record, indent=2))


def make_pair(img, spec, r=COLOR_RESOLUTION):
    """Return ``(X, x)`` with ``x`` the quantized area-average downscale of ``X``."""
    X = check_image_batch(img)
    return X, quantize(downscale(X, spec), r)


def sample_batch(dataset, batch, rng):
    """Draw ``(X, x, Y, y)`` with X and Y indexed independently and uniformly."""
    n = len(dataset)
    ix = torch.randint(n, (batch,), generator=rng)
    iy = torch.randint(n, (batch,), generator=rng)
    X, x = dataset.hr[ix], dataset.lr[ix]
    Y, y = dataset.hr[iy], dataset.lr[iy]
    if dataset.hflip:
        fx = torch.rand(batch, generator=rng) < 0.5
        fy = torch.rand(batch, generator=rng) < 0.5
        X, x = _flip_pairs(X, x, fx, dataset)
        Y, y = _flip_pairs(Y, y, fy, dataset)
    return X, x, Y, y


def _flip_pairs(X, x, mask, dataset):
    if not mask.any():
        return X, x
    X = X.clone()
    X[mask] = X[mask].flip(-1)
    x = x.clone()
    x[mask] = quantize(downscale(X[mask], dataset.spec), dataset.r)
    return X, x
