import time
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from lrtranslate.data import Dataset
from lrtranslate.downscale import downscale
from lrtranslate.synthetic import synthetic_images
from lrtranslate.trainer import TrainConfig, Trainer

TINY = dict(hr_size=32, lr_size=4, base_channels=8, channel_cap=16, spadain_hidden=8)

# overfit smoke: 16 images, hr 32, lr 4, batch 8, default rates, lambda_cyc 1
OVERFIT = dict(hr_size=32, lr_size=4, batch=8, base_channels=16, channel_cap=64, spadain_hidden=16,
               lambda_cyc=1.0, gamma_r1=0.5, lr_g=1e-3, lr_d=4e-3, seed=0)
OVERFIT_STEPS = 1200

ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_config():
    return TrainConfig(**TINY, batch=4, steps=10, seed=3, track_updates=True)


@pytest.fixture
def tiny_dataset():
    return Dataset.from_images(synthetic_images(12, 32, seed=1), 4)


@torch.no_grad()
def all_pairs_lr_error(G, dataset):
    """Mean |DS(G(X_i, y_j)) - y_j| over every (source, target) pair, eval mode."""
    G.eval()
    n = len(dataset)
    errors = []
    for j in range(n):
        y = dataset.lr[j:j + 1].expand(n, -1, -1, -1)
        out = G(dataset.hr, y)
        errors.append((downscale(out, dataset.spec) - y).abs().mean())
    G.train()
    return float(torch.stack(errors).mean())


@pytest.fixture(scope="session")
def overfit_run():
    dataset = Dataset.from_images(synthetic_images(16, 32, seed=0), 4)
    trainer = Trainer(TrainConfig(**OVERFIT, steps=OVERFIT_STEPS))
    untrained = all_pairs_lr_error(trainer.G, dataset)
    t0 = time.perf_counter()
    reports = trainer.fit(dataset, OVERFIT_STEPS)
    return SimpleNamespace(trainer=trainer, dataset=dataset, reports=reports,
                           untrained_lr_error=untrained, final_lr_error=all_pairs_lr_error(trainer.G, dataset),
                           seconds=time.perf_counter() - t0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}")
