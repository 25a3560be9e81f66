"""Training loop: two-rate Adam, spectral normalization, R1, checkpointing."""

import copy
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
from torch.nn.utils import parametrize
from torch.nn.utils.parametrizations import spectral_norm

from .data import sample_batch
from .discriminator import Discriminator, DiscriminatorConfig
from .downscale import COLOR_RESOLUTION, DownscaleSpec, difference_map, downscale
from .generator import Generator, GeneratorConfig
from .losses import (cycle_loss, default_lambda_cyc, discriminator_adv_loss, full_objective,
                     generator_adv_loss, r1_penalty, translate_all)
from .validation import ConfigurationError, check_positive, check_power_of_two

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LRTCKPT\n"
CHECKPOINT_VERSION = 1
# keys that must agree between a checkpoint and the config it is loaded into
ARCHITECTURE_KEYS = ("hr_size", "lr_size", "base_channels", "channel_cap", "d_base_channels",
                     "d_channel_cap", "convs_per_block", "spadain_hidden", "spectral_norm", "ema")


class CheckpointError(RuntimeError):
    pass


class ChecksumError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


class NonFiniteLossError(FloatingPointError):
    """A loss term became NaN/inf. ``term`` names the first offending term."""

    def __init__(self, term, step, values):
        self.term = term
        self.step = step
        self.values = values
        super().__init__(f"non-finite {term} at step {step}: {values}")


@dataclass
class TrainConfig:
    hr_size: int = 128
    lr_size: int = 8
    lr_g: float = 1e-3
    lr_d: float = 4e-3
    betas: Tuple[float, float] = (0.0, 0.99)
    batch: int = 8
    steps: int = 100_000
    seed: int = 0
    lambda_cyc: Optional[float] = None
    gamma_r1: float = 0.5
    r1_every: int = 1
    r: float = COLOR_RESOLUTION
    base_channels: int = 64
    channel_cap: int = 512
    d_base_channels: Optional[int] = None
    d_channel_cap: Optional[int] = None
    convs_per_block: int = 2
    spadain_hidden: int = 32
    spectral_norm: bool = True
    ema: bool = False
    ema_beta: float = 0.999
    checkpoint_every: int = 1000
    eval_every: int = 0
    track_updates: bool = False

    def __post_init__(self):
        check_power_of_two(self.hr_size, "hr_size")
        check_power_of_two(self.lr_size, "lr_size")
        if self.lambda_cyc is None:
            self.lambda_cyc = default_lambda_cyc(self.hr_size)
        self.betas = tuple(self.betas)
        for name in ("lr_g", "lr_d", "r"):
            check_positive(getattr(self, name), name, error=ConfigurationError)
        check_positive(self.lambda_cyc, "lambda_cyc", strict=False, error=ConfigurationError)
        check_positive(self.gamma_r1, "gamma_r1", strict=False, error=ConfigurationError)
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if self.r1_every < 1:
            raise ConfigurationError("r1_every must be >= 1")
        if self.d_base_channels is None:
            self.d_base_channels = self.base_channels
        if self.d_channel_cap is None:
            self.d_channel_cap = self.channel_cap

    def generator_config(self):
        return GeneratorConfig(hr_size=self.hr_size, lr_size=self.lr_size,
                               base_channels=self.base_channels, channel_cap=self.channel_cap,
                               convs_per_block=self.convs_per_block,
                               spadain_hidden=self.spadain_hidden)

    def discriminator_config(self):
        return DiscriminatorConfig(hr_size=self.hr_size, lr_size=self.lr_size,
                                   base_channels=self.d_base_channels,
                                   channel_cap=self.d_channel_cap)

    @property
    def downscale_spec(self):
        return DownscaleSpec.between(self.hr_size, self.lr_size)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def apply_spectral_norm(model):
    """Wrap every conv/linear weight with power-iteration spectral normalization.

    One power iteration runs per training-mode forward. Layers that are already
    wrapped are left alone, so applying this twice equals applying it once.
    """
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            if not parametrize.is_parametrized(module, "weight"):
                with torch.no_grad():
                    # the wrapped forward ignores this scale; unit sigma keeps Adam's
                    # relative step similar across layers so one iteration can track it
                    sigma = torch.linalg.matrix_norm(module.weight.flatten(1), ord=2)
                    if sigma > 0:
                        module.weight.div_(sigma)
                spectral_norm(module, n_power_iterations=1)
    return model


@torch.no_grad()
def warm_up_spectral_norm(model, iterations=200):
    """Run extra power iterations on every wrapped layer without touching raw weights.

    Each training-mode read of a wrapped weight performs one iteration.
    """
    was_training = model.training
    model.train()
    layers = [m for m in model.modules()
              if isinstance(m, (nn.Conv2d, nn.Linear)) and parametrize.is_parametrized(m, "weight")]
    for _ in range(iterations):
        for m in layers:
            _ = m.weight
    model.train(was_training)
    return model


def spectral_norm_estimates(model):
    """Top singular value of every normalized weight, from an exact SVD of its matrix form."""
    out = {}
    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)) and parametrize.is_parametrized(module, "weight"):
            w = module.weight.detach().flatten(1)
            out[name] = torch.linalg.matrix_norm(w, ord=2).item()
    return out


def build_optimizers(g_params, d_params, config):
    """Adam for G and D with separate learning rates (TTUR)."""
    return (torch.optim.Adam(g_params, lr=config.lr_g, betas=config.betas),
            torch.optim.Adam(d_params, lr=config.lr_d, betas=config.betas))


class StepReport(NamedTuple):
    step: int
    adv_d: float
    adv_g: float
    cyc: float
    r1: float
    loss_d: float
    loss_g: float
    diff_mean: float      # mean difference map, quantization levels
    lr_l1: float          # mean |DS(G(X, y)) - y| in pixel units
    update_norm_g: Optional[float] = None
    update_norm_d: Optional[float] = None
    seconds: float = 0.0

    def to_dict(self):
        return self._asdict()


def _param_vector(module):
    return torch.cat([p.detach().flatten() for p in module.parameters()]).clone()


def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


class Trainer:
    """Owns G, D, their optimizers and the sampling RNG."""

    def __init__(self, config=None, **overrides):
        if config is None:
            config = TrainConfig(**overrides)
        elif overrides:
            config = TrainConfig.from_dict({**config.to_dict(), **overrides})
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.G = Generator(config.generator_config())
            self.D = Discriminator(config.discriminator_config())
            if config.spectral_norm:
                apply_spectral_norm(self.G)
                apply_spectral_norm(self.D)
        self.G_ema = copy.deepcopy(self.G).eval() if config.ema else None
        self.opt_g, self.opt_d = build_optimizers(self.G.parameters(), self.D.parameters(), config)
        self.rng = torch.Generator().manual_seed(config.seed)
        self.step = 0
        self.running = {}

    @property
    def spec(self):
        return self.config.downscale_spec

    def inference_generator(self):
        return self.G_ema if self.G_ema is not None else self.G

    def sample(self, dataset):
        return sample_batch(dataset, self.config.batch, self.rng)

    def _check_finite(self, terms):
        for name, value in terms.items():
            if not torch.isfinite(value).all():
                raise NonFiniteLossError(
                    name, self.step, {k: float(v.detach()) for k, v in terms.items()})

    def train_step(self, batch):
        """One discriminator update followed by one generator update."""
        cfg = self.config
        X, x, Y, y = batch
        t0 = time.perf_counter()
        self.G.train()
        self.D.train()
        before_g = _param_vector(self.G) if cfg.track_updates else None
        before_d = _param_vector(self.D) if cfg.track_updates else None

        # discriminator
        _set_requires_grad(self.D, True)
        with torch.no_grad():
            fake_xy = self.G(X, y)
            fake_yx = self.G(Y, x)
            d_xy = difference_map(y, fake_xy, self.spec, cfg.r)
            d_yx = difference_map(x, fake_yx, self.spec, cfg.r)
        adv_d = discriminator_adv_loss(self.D, X, Y, fake_xy, d_xy, fake_yx, d_yx)
        if cfg.gamma_r1 > 0 and self.step % cfg.r1_every == 0:
            r1 = r1_penalty(self.D, torch.cat([X, Y]), cfg.gamma_r1 * cfg.r1_every, cfg.lr_size)
        else:
            r1 = adv_d.new_zeros(())
        self._check_finite({"adv_d": adv_d, "r1": r1})
        loss_d, _ = full_objective(adv_d, adv_d.new_zeros(()), adv_d.new_zeros(()), r1, 0.0)
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_d.step()

        # generator
        _set_requires_grad(self.D, False)
        tr = translate_all(self.G, X, x, Y, y)
        d_xy = difference_map(y, tr.fake_xy, self.spec, cfg.r)
        d_yx = difference_map(x, tr.fake_yx, self.spec, cfg.r)
        adv_g = generator_adv_loss(self.D, tr.fake_xy, d_xy, tr.fake_yx, d_yx)
        cyc = cycle_loss(self.G, X, x, Y, y, translations=tr)
        self._check_finite({"adv_g": adv_g, "cyc": cyc})
        _, loss_g = full_objective(adv_d.detach(), adv_g, cyc, r1.detach(), cfg.lambda_cyc)
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        _set_requires_grad(self.D, True)
        if self.G_ema is not None:
            self._update_ema()

        with torch.no_grad():
            lr_l1 = (downscale(tr.fake_xy, self.spec) - y).abs().mean().item()
            diff_mean = 0.5 * (d_xy.mean() + d_yx.mean()).item()
        report = StepReport(
            step=self.step,
            adv_d=adv_d.item(), adv_g=adv_g.item(), cyc=cyc.item(), r1=r1.item(),
            loss_d=loss_d.item(), loss_g=loss_g.item(),
            diff_mean=diff_mean, lr_l1=lr_l1,
            update_norm_g=(_param_vector(self.G) - before_g).norm().item() if before_g is not None else None,
            update_norm_d=(_param_vector(self.D) - before_d).norm().item() if before_d is not None else None,
            seconds=time.perf_counter() - t0,
        )
        for k in ("adv_d", "adv_g", "cyc", "r1", "diff_mean"):
            prev = self.running.get(k, getattr(report, k))
            self.running[k] = 0.99 * prev + 0.01 * getattr(report, k)
        self.step += 1
        return report

    @torch.no_grad()
    def _update_ema(self):
        beta = self.config.ema_beta
        for p_ema, p in zip(self.G_ema.parameters(), self.G.parameters()):
            p_ema.lerp_(p, 1.0 - beta)
        for b_ema, b in zip(self.G_ema.buffers(), self.G.buffers()):
            b_ema.copy_(b)

    def fit(self, dataset, steps=None, callback=None):
        """Run ``steps`` iterations (default: up to ``config.steps``); return the reports."""
        if steps is None:
            steps = max(self.config.steps - self.step, 0)
        reports = []
        for _ in range(steps):
            report = self.train_step(self.sample(dataset))
            reports.append(report)
            if callback is not None:
                callback(self, report)
        return reports

    # checkpointing

    def state_dict(self):
        return {
            "step": self.step,
            "generator": self.G.state_dict(),
            "discriminator": self.D.state_dict(),
            "generator_ema": self.G_ema.state_dict() if self.G_ema is not None else None,
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "rng_state": self.rng.get_state(),
            "running": dict(self.running),
        }

    def load_state_dict(self, state):
        self.G.load_state_dict(state["generator"])
        self.D.load_state_dict(state["discriminator"])
        if self.G_ema is not None:
            self.G_ema.load_state_dict(state["generator_ema"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self.rng.set_state(state["rng_state"])
        self.step = int(state["step"])
        self.running = dict(state["running"])

    def save(self, path, metadata=None):
        save_checkpoint(self, path, metadata)

    def load(self, path):
        """Restore in place. The file is fully verified before any state is touched."""
        ckpt = load_checkpoint(path)
        check_compatible(ckpt.config, self.config)
        self.load_state_dict(ckpt.state)
        return self

    @classmethod
    def from_checkpoint(cls, path, config=None):
        """Rebuild a trainer from ``path``; if ``config`` is given it must be compatible."""
        ckpt = load_checkpoint(path)
        saved = TrainConfig.from_dict(ckpt.config)
        if config is not None:
            check_compatible(saved, config)
        else:
            config = saved
        trainer = cls(config)
        trainer.load_state_dict(ckpt.state)
        return trainer


class Checkpoint(NamedTuple):
    version: int
    config: dict
    state: dict


def check_compatible(saved, config):
    saved_d = saved.to_dict() if isinstance(saved, TrainConfig) else saved
    new_d = config.to_dict()
    bad = [k for k in ARCHITECTURE_KEYS if saved_d.get(k) != new_d.get(k)]
    if bad:
        detail = ", ".join(f"{k}: checkpoint={saved_d.get(k)!r} config={new_d.get(k)!r}" for k in bad)
        raise IncompatibleCheckpointError(f"checkpoint does not match config ({detail})")


def save_checkpoint(trainer, path, metadata=None):
    """Write ``trainer`` to ``path``.

    Layout: magic line, one JSON header line (format version, payload sha256 and
    size, full TrainConfig, optional ``metadata``), then the ``torch.save`` payload.
    """
    buf = io.BytesIO()
    torch.save(trainer.state_dict(), buf)
    payload = buf.getvalue()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
        "step": trainer.step,
        "config": trainer.config.to_dict(),
        "metadata": metadata or {},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(payload)
    os.replace(tmp, path)


def read_checkpoint_header(path):
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        try:
            header = json.loads(f.readline())
        except ValueError as exc:
            raise ChecksumError(f"{path}: unreadable checkpoint header") from exc
        return header, f.tell()


def load_checkpoint(path):
    header, offset = read_checkpoint_header(path)
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})")
    with open(path, "rb") as f:
        f.seek(offset)
        payload = f.read()
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupted")
    state = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    return Checkpoint(version, header["config"], state)


def load_generator(path, use_ema=True):
    """Load only the (EMA if available) generator from a checkpoint, in eval mode."""
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    G = Generator(config.generator_config())
    if config.spectral_norm:
        apply_spectral_norm(G)
    key = "generator_ema" if use_ema and ckpt.state.get("generator_ema") is not None else "generator"
    G.load_state_dict(ckpt.state[key])
    return G.eval(), config
