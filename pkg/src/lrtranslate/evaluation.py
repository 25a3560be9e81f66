"""Evaluation protocol: many sources per LR target, pooled set metrics, diversity."""

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .metrics import PixelEmbedder, density_coverage, fid, perceptual_distance
from .validation import ConfigurationError


@dataclass
class EvalProtocol:
    """``real_set`` is ``"all"`` (every image of the evaluation set) or ``"targets"``."""
    num_targets: Optional[int] = None
    samples_per_target: int = 10
    k: int = 5
    seed: int = 0
    real_set: str = "all"
    batch: int = 16

    def __post_init__(self):
        if self.real_set not in ("all", "targets"):
            raise ConfigurationError(f"real_set must be 'all' or 'targets', got {self.real_set!r}")
        if self.samples_per_target < 1:
            raise ConfigurationError("samples_per_target must be >= 1")


ALL_METRICS = ("fid", "lpips", "density", "coverage")


@dataclass
class MetricReport:
    """Metrics that were not requested are ``None``."""
    fid: Optional[float]
    lpips_mean: Optional[float]
    density: Optional[float]
    coverage: Optional[float]
    k: int
    num_real: int
    num_fake: int
    num_targets: int
    samples_per_target: int
    embedder: str
    hr_size: int
    lr_size: int
    config_hash: str = ""
    config: Optional[dict] = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def save(self, path):
        Path(path).write_text(self.to_json())


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


@torch.no_grad()
def _generate(G, sources, targets, batch):
    out = []
    for i in range(0, sources.shape[0], batch):
        out.append(G(sources[i:i + batch], targets[i:i + batch]))
    return torch.cat(out)


@torch.no_grad()
def evaluate_model(generator, dataset, protocol=None, embedder=None, sources=None, config=None,
                   metrics=ALL_METRICS):
    """Score ``generator`` on ``dataset``.

    For every LR target, ``samples_per_target`` distinct HR sources (never the
    target's own image) are translated. All fakes are pooled for FID and
    density/coverage against the real images; the perceptual distance is averaged
    over all output pairs that share a target (a diversity measure).

    ``generator`` may be a module or a checkpoint path; ``sources`` defaults to
    ``dataset``.
    """
    metrics = tuple(metrics)
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise ConfigurationError(f"unknown metrics: {sorted(unknown)}")
    protocol = protocol or EvalProtocol()
    embedder = embedder or PixelEmbedder()
    if isinstance(generator, (str, Path)):
        from .trainer import load_generator
        generator, train_config = load_generator(generator)
        config = config or train_config.to_dict()
    generator.eval()
    sources = sources if sources is not None else dataset
    same = sources is dataset
    n_src = len(sources)
    needed = protocol.samples_per_target + (1 if same else 0)
    if n_src < needed:
        raise ConfigurationError(
            f"need at least {needed} source images for {protocol.samples_per_target} samples per target")

    rng = np.random.default_rng(protocol.seed)
    n_targets = len(dataset) if protocol.num_targets is None else min(protocol.num_targets, len(dataset))
    target_idx = np.sort(rng.permutation(len(dataset))[:n_targets])

    fakes, diversity = [], []
    spt = protocol.samples_per_target
    for t in target_idx:
        pool = np.array([i for i in range(n_src) if not (same and i == t)])
        chosen = rng.choice(pool, size=spt, replace=False)
        src = sources.hr[torch.as_tensor(chosen)]
        tgt = dataset.lr[int(t)].unsqueeze(0).expand(spt, -1, -1, -1)
        out = _generate(generator, src, tgt, protocol.batch)
        fakes.append(out)
        if spt > 1 and "lpips" in metrics:
            pairs = list(itertools.combinations(range(spt), 2))
            a = out[[p[0] for p in pairs]]
            b = out[[p[1] for p in pairs]]
            diversity.append(perceptual_distance(a, b, embedder))
    fakes = torch.cat(fakes)
    reals = dataset.hr if protocol.real_set == "all" else dataset.hr[torch.as_tensor(target_idx)]

    real_f = embedder.features(reals)
    fake_f = embedder.features(fakes)
    density = coverage = None
    if "density" in metrics or "coverage" in metrics:
        density, coverage = density_coverage(real_f, fake_f, k=protocol.k)
    return MetricReport(
        fid=fid(real_f, fake_f) if "fid" in metrics else None,
        lpips_mean=(float(np.mean(diversity)) if diversity else 0.0) if "lpips" in metrics else None,
        density=density if "density" in metrics else None,
        coverage=coverage if "coverage" in metrics else None,
        k=protocol.k,
        num_real=int(real_f.shape[0]),
        num_fake=int(fake_f.shape[0]),
        num_targets=int(n_targets),
        samples_per_target=spt,
        embedder=embedder.name,
        hr_size=dataset.hr_size,
        lr_size=dataset.lr_size,
        config_hash=config_hash(config) if config is not None else "",
        config=config,
    )
