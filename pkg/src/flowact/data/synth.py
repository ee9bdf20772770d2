"""Synthetic two-class motion videos.

Each video shows a textured square sliding horizontally over a static
textured background, leftwards (class ``left``) or rightwards (class
``right``) at a per-video integer speed. Square and background textures are
drawn from one distribution and start positions are mirrored between the
classes, so single frames carry no class information; only the direction of
motion does.
"""

from __future__ import annotations

import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..imaging import gaussian_blur
from ..tensor_core import SeededRng, derive_seed
from .dataset import MANIFEST_NAME, DatasetManifest
from .ppm import to_uint8, write_ppm

CLASS_NAMES = ("left", "right")


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 250
    frames_per_video: int = 10
    size: int = 128
    square: int = 0
    min_speed: int = 1
    max_speed: int = 3
    noise: float = 0.02
    texture_sigma: float = 1.0

    @property
    def square_side(self):
        return self.square or max(4, self.size // 4)

    def __post_init__(self):
        if self.n_videos < 2:
            raise ValueError("need at least two videos (one per class)")
        if not 1 <= self.min_speed <= self.max_speed:
            raise ValueError("speeds must satisfy 1 <= min_speed <= max_speed")
        travel = (self.frames_per_video - 1) * self.max_speed
        if self.square_side + travel > self.size:
            raise ValueError(f"a {self.square_side}px square moving {travel}px does not fit a {self.size}px frame")


def texture(rng: SeededRng, h: int, w: int, sigma: float = 1.0) -> np.ndarray:
    """Smoothed uniform noise rescaled to [0.1, 0.9], shape (h, w, 3)."""
    t = gaussian_blur(rng.uniform(size=(h, w, 3)), sigma)
    lo, hi = t.min(), t.max()
    return 0.1 + 0.8 * (t - lo) / (hi - lo)


def render_video(cfg: SynthConfig, label: int, rng: SeededRng) -> list[np.ndarray]:
    """Frames (uint8, (size, size, 3)) of one video of class ``label``."""
    side = cfg.square_side
    speed = int(rng.integers(cfg.min_speed, cfg.max_speed + 1))
    travel = (cfg.frames_per_video - 1) * speed
    x0 = int(rng.integers(0, cfg.size - side - travel + 1))
    y0 = int(rng.integers(0, cfg.size - side + 1))
    background = texture(rng, cfg.size, cfg.size, cfg.texture_sigma)
    patch = texture(rng, side, side, cfg.texture_sigma)
    frames = []
    for k in range(cfg.frames_per_video):
        x = x0 + speed * k if label == 1 else x0 + travel - speed * k
        img = background.copy()
        img[y0:y0 + side, x:x + side] = patch
        if cfg.noise > 0:
            img = img + rng.normal(0.0, cfg.noise, size=img.shape)
        frames.append(to_uint8(np.clip(img, 0.0, 1.0)))
    return frames


def synth_generate(out_root, config: SynthConfig, seed: int) -> DatasetManifest:
    """Write a balanced synthetic dataset (PPM frame directories + manifest)."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    for name in CLASS_NAMES:
        if (root / name).exists():
            shutil.rmtree(root / name)
    label_rng = SeededRng(derive_seed(seed, "synth:labels"))
    labels = np.arange(config.n_videos) % 2
    labels = labels[label_rng.permutation(config.n_videos)]
    entries = []
    for i, label in enumerate(labels):
        vid = f"vid_{i:04d}"
        rel = f"{CLASS_NAMES[label]}/{vid}"
        d = root / rel
        d.mkdir(parents=True)
        rng = SeededRng(derive_seed(seed, f"synth:video:{i}"))
        for k, frame in enumerate(render_video(config, int(label), rng)):
            write_ppm(d / f"frame_{k + 1:04d}.ppm", frame)
        entries.append({"id": vid, "dir": rel, "label": int(label)})
    manifest = DatasetManifest(root=str(root), classes={n: i for i, n in enumerate(CLASS_NAMES)},
                               entries=entries, generator={"seed": int(seed), **asdict(config)})
    manifest.write(root / MANIFEST_NAME)
    return manifest
