"""Procedural images for smoke tests and demos.

Each image is a smooth two-color background with one ellipse ("subject") whose
position, size and color vary per image, overlaid with a fine stripe texture so
that HR sources carry detail that the LR targets do not.
"""

import numpy as np
import torch


def synthetic_images(n, size, seed=0):
    """Return an (n, 3, size, size) float32 tensor in [-1, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    out = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        c0, c1 = rng.uniform(-0.9, 0.9, (2, 3))
        angle = rng.uniform(0, 2 * np.pi)
        t = 0.5 * (1 + np.cos(angle) * xx + np.sin(angle) * yy) / 2 + 0.25
        img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

        cx, cy = rng.uniform(-0.4, 0.4, 2)
        ax, ay = rng.uniform(0.25, 0.55, 2)
        mask = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
        color = rng.uniform(-0.9, 0.9, 3)
        img = np.where(mask[None], color[:, None, None], img)

        freq = rng.uniform(0.3, 0.5) * size
        phase = rng.uniform(0, 2 * np.pi)
        theta = rng.uniform(0, np.pi)
        stripes = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img = img + 0.08 * stripes[None]
        out[i] = np.clip(img, -1, 1)
    return torch.from_numpy(out)
