"""Command-line interface: ``lrtranslate {train,translate,grid,evaluate}``.

Errors are reported on stderr as one JSON object ``{"error": <category>,
"message": ...}`` and mapped to exit codes (see ``EXIT_CODES``).
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import torch
from PIL import Image

from . import __version__
from .data import (SUPPORTED_LR_SIZES, DatasetError, DatasetSpec, center_crop_resize, image_to_tensor,
                   load_dataset, tensor_to_image, write_manifest)
from .downscale import DownscaleSpec, difference_map, downscale, quantize
from .evaluation import ALL_METRICS, EvalProtocol, evaluate_model
from .metrics import ImportedEmbedder, PixelEmbedder, RandomConvEmbedder
from .trainer import (CheckpointError, NonFiniteLossError, Trainer, TrainConfig, load_checkpoint,
                      load_generator)
from .validation import ConfigurationError, ValidationError

logger = logging.getLogger("lrtranslate")

EXIT_CODES = {"usage": 2, "config": 2, "data": 3, "checkpoint": 4, "numerical": 5, "internal": 1}

# RunConfig = TrainConfig keys plus these data/run keys
RUN_KEYS = {"data_dir", "pattern", "quantize", "split", "hflip", "out", "log_every", "sample_every"}


class CLIError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _fail(category, message):
    raise CLIError(category, message)


def load_run_config(path):
    """Read a flat JSON object whose keys are TrainConfig or run keys."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        _fail("config", f"cannot read config file {path}: {exc}")
    if not isinstance(data, dict):
        _fail("config", "config file must hold a flat JSON object")
    allowed = {f.name for f in fields(TrainConfig)} | RUN_KEYS
    unknown = sorted(set(data) - allowed)
    if unknown:
        _fail("config", f"unknown config keys: {unknown}")
    return data


def _split_run_config(run):
    train_keys = {f.name for f in fields(TrainConfig)}
    return ({k: v for k, v in run.items() if k in train_keys},
            {k: v for k, v in run.items() if k not in train_keys})


FLAG_TO_KEY = {"seed": "seed", "hr_size": "hr_size", "lr_size": "lr_size", "steps": "steps",
               "batch": "batch", "lambda_cyc": "lambda_cyc", "data_dir": "data_dir", "out": "out"}


def build_run_config(args):
    run = load_run_config(args.config) if args.config else {}
    for flag, key in FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            run[key] = value
    return run


def _latest_checkpoint(out_dir):
    ckpts = sorted((Path(out_dir) / "checkpoints").glob("step_*.ckpt"))
    return ckpts[-1] if ckpts else None


def _read_target(path, hr_size, lr_size, r):
    """Load a target image; LR-sized files are used as is, anything else is
    cropped/resized to ``hr_size`` and downscaled. Both end up on the r-grid."""
    with Image.open(path) as img:
        img.load()
        if img.size == (lr_size, lr_size):
            lr = image_to_tensor(img).unsqueeze(0)
        else:
            hr = image_to_tensor(center_crop_resize(img, hr_size)).unsqueeze(0)
            lr = downscale(hr, DownscaleSpec.between(hr_size, lr_size))
    return quantize(lr, r)


def _read_source(path, hr_size):
    with Image.open(path) as img:
        img.load()
        return image_to_tensor(center_crop_resize(img, hr_size)).unsqueeze(0)


def _require_file(path, what):
    if not Path(path).is_file():
        _fail("checkpoint" if what == "checkpoint" else "data", f"{what} file {path} does not exist")


def make_grid(G, sources, targets, hr_size):
    """(M+1) x (N+1) cells: sources on top, nearest-upsampled targets on the left."""
    n, m = sources.shape[0], targets.shape[0]
    c = sources.shape[1]
    canvas = torch.ones(c, (m + 1) * hr_size, (n + 1) * hr_size)
    for j in range(n):
        canvas[:, :hr_size, (j + 1) * hr_size:(j + 2) * hr_size] = sources[j]
    with torch.no_grad():
        for i in range(m):
            row = slice((i + 1) * hr_size, (i + 2) * hr_size)
            canvas[:, row, :hr_size] = torch.nn.functional.interpolate(
                targets[i:i + 1], size=(hr_size, hr_size), mode="nearest")[0]
            out = G(sources, targets[i:i + 1].expand(n, -1, -1, -1))
            for j in range(n):
                canvas[:, row, (j + 1) * hr_size:(j + 2) * hr_size] = out[j]
    return canvas


# commands


def cmd_train(args):
    run = build_run_config(args)
    data_dir = run.get("data_dir")
    out = run.get("out")
    if not data_dir:
        _fail("usage", "--data-dir is required")
    if not out:
        _fail("usage", "--out is required")
    if not Path(data_dir).is_dir():
        _fail("data", f"data directory {data_dir} does not exist")
    out = Path(out)
    train_kwargs, extra = _split_run_config(run)
    try:
        config = TrainConfig.from_dict(train_kwargs)
    except (ConfigurationError, ValidationError, TypeError) as exc:
        _fail("config", str(exc))

    spec = DatasetSpec(root=str(data_dir), hr_size=config.hr_size, lr_size=config.lr_size,
                       pattern=extra.get("pattern", "**/*"), quantize=extra.get("quantize", True),
                       r=config.r, split=tuple(extra.get("split", (1.0, 0.0))), seed=config.seed,
                       hflip=extra.get("hflip", False))
    dataset = load_dataset(spec)
    if spec.split[1] > 0:
        dataset, _ = dataset.split(spec.split, seed=spec.seed)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "samples").mkdir(exist_ok=True)
    write_manifest(dataset, out / "manifest.json", spec)

    if args.resume:
        ckpt = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(out)
        if ckpt is None:
            _fail("checkpoint", f"--resume given but no checkpoint found in {out / 'checkpoints'}")
        _require_file(ckpt, "checkpoint")
        trainer = Trainer.from_checkpoint(ckpt, config)
        logger.info("resumed from %s at step %d", ckpt, trainer.step)
    else:
        trainer = Trainer(config)

    run_record = {**config.to_dict(), **extra, "data_dir": str(data_dir), "out": str(out)}
    log_every = int(extra.get("log_every", 1))
    sample_every = int(extra.get("sample_every", config.checkpoint_every))
    preview = min(len(dataset), 4)

    def save(step):
        path = out / "checkpoints" / f"step_{step:07d}.ckpt"
        trainer.save(path, metadata={"run_config": run_record})
        return path

    with open(out / "train_log.jsonl", "a") as log:
        while trainer.step < config.steps:
            t0 = time.perf_counter()
            batch = trainer.sample(dataset)
            report = trainer.train_step(batch)
            if trainer.step % log_every == 0:
                record = report.to_dict()
                record["wall_seconds"] = time.perf_counter() - t0
                log.write(json.dumps(record) + "\n")
                log.flush()
            if trainer.step % config.checkpoint_every == 0:
                save(trainer.step)
            if sample_every and trainer.step % sample_every == 0:
                G = trainer.inference_generator().eval()
                grid = make_grid(G, dataset.hr[:preview], dataset.lr[:preview], config.hr_size)
                tensor_to_image(grid).save(out / "samples" / f"step_{trainer.step:07d}.png")
    last = out / "checkpoints" / f"step_{trainer.step:07d}.ckpt"
    if not last.exists():
        save(trainer.step)
    print(json.dumps({"checkpoint": str(last), "step": trainer.step}))
    return 0


def cmd_translate(args):
    for path, what in ((args.checkpoint, "checkpoint"), (args.source, "source"), (args.target, "target")):
        _require_file(path, what)
    G, config = load_generator(args.checkpoint)
    source = _read_source(args.source, config.hr_size)
    target = _read_target(args.target, config.hr_size, config.lr_size, config.r)
    with torch.no_grad():
        out = G(source, target)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tensor_to_image(out[0]).save(out_path)
    # statistic from the written 8-bit file so that it can be recomputed from disk
    written = _read_source(out_path, config.hr_size)
    d = difference_map(target, written, DownscaleSpec.between(config.hr_size, config.lr_size), config.r)
    sidecar = {
        "output": str(out_path),
        "source": str(args.source),
        "target": str(args.target),
        "checkpoint": str(args.checkpoint),
        "hr_size": config.hr_size,
        "lr_size": config.lr_size,
        "r": config.r,
        "mean_level_difference": float(d.mean()),
        "max_level_difference": float(d.max()),
    }
    Path(str(out_path) + ".json").write_text(json.dumps(sidecar, indent=2))
    print(json.dumps(sidecar))
    return 0


def cmd_grid(args):
    if not args.sources:
        _fail("usage", "at least one source image is required")
    if not args.targets:
        _fail("usage", "at least one target image is required")
    _require_file(args.checkpoint, "checkpoint")
    for p in list(args.sources) + list(args.targets):
        _require_file(p, "input")
    G, config = load_generator(args.checkpoint)
    sources = torch.cat([_read_source(p, config.hr_size) for p in args.sources])
    targets = torch.cat([_read_target(p, config.hr_size, config.lr_size, config.r) for p in args.targets])
    grid = make_grid(G, sources, targets, config.hr_size)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    tensor_to_image(grid).save(args.out)
    print(json.dumps({"grid": str(args.out), "rows": len(args.targets) + 1,
                      "cols": len(args.sources) + 1}))
    return 0


def _embedder(name, seed):
    if name == "pixels":
        return PixelEmbedder()
    if name == "random-conv":
        return RandomConvEmbedder(seed=seed)
    if Path(name).is_file():
        return ImportedEmbedder.from_manifest(name)
    _fail("config", f"unknown embedder {name!r} (use pixels, random-conv or a manifest path)")


def cmd_evaluate(args):
    if not args.data_dir or not Path(args.data_dir).is_dir():
        _fail("data", f"data directory {args.data_dir} does not exist")
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    bad = set(metrics) - set(ALL_METRICS)
    if bad:
        _fail("usage", f"unknown metrics {sorted(bad)}; choose from {list(ALL_METRICS)}")
    by_lr = {}
    for path in args.checkpoint:
        _require_file(path, "checkpoint")
        cfg = TrainConfig.from_dict(load_checkpoint(path).config)
        by_lr.setdefault(cfg.lr_size, path)
    lr_sizes = args.lr_size or sorted(by_lr)
    for n in lr_sizes:
        if n not in SUPPORTED_LR_SIZES:
            _fail("usage", f"--lr-size must be one of {SUPPORTED_LR_SIZES}, got {n}")
        if n not in by_lr:
            _fail("checkpoint", f"no checkpoint trained with lr_size {n} was given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    protocol = EvalProtocol(num_targets=args.num_targets, samples_per_target=args.samples_per_target,
                            k=args.k, seed=args.seed if args.seed is not None else 0,
                            real_set=args.real_set)
    embedder = _embedder(args.embedder, protocol.seed)
    written = []
    for n in lr_sizes:
        G, config = load_generator(by_lr[n])
        spec = DatasetSpec(root=args.data_dir, hr_size=config.hr_size, lr_size=n, r=config.r)
        dataset = load_dataset(spec)
        provenance = {"train_config": config.to_dict(), "protocol": protocol.__dict__,
                      "checkpoint": str(by_lr[n]), "data_dir": str(args.data_dir),
                      "embedder": embedder.name}
        report = evaluate_model(G, dataset, protocol, embedder, config=provenance, metrics=metrics)
        path = out / f"report_lr{n}.json"
        report.save(path)
        written.append(str(path))
    print(json.dumps({"reports": written}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lrtranslate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of images")
    p.add_argument("--config")
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--hr-size", type=int)
    p.add_argument("--lr-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lambda-cyc", type=float)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--checkpoint", help="checkpoint to resume from (default: latest in --out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate one source image towards one target")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True, help="LR target, or an HR image to downscale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("grid", help="sources x targets translation grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sources", nargs="*", default=[])
    p.add_argument("--targets", nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("evaluate", help="compute FID, diversity and density/coverage")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="repeat to sweep several LR sizes")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr-size", type=int, nargs="+")
    p.add_argument("--metrics", default=",".join(ALL_METRICS))
    p.add_argument("--embedder", default="pixels")
    p.add_argument("--samples-per-target", type=int, default=10)
    p.add_argument("--num-targets", type=int)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--real-set", choices=("all", "targets"), default="all")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    category = None
    try:
        return args.func(args)
    except CLIError as exc:
        category, message = exc.category, str(exc)
    except DatasetError as exc:
        category, message = "data", str(exc)
    except CheckpointError as exc:
        category, message = "checkpoint", str(exc)
    except NonFiniteLossError as exc:
        category, message = "numerical", str(exc)
    except (ConfigurationError, ValidationError) as exc:
        category, message = "config", str(exc)
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
