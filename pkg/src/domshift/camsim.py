"""Seeded synthetic low-quality camera.

Stands in for recording a screen with a cheap camera. The pipeline order is
fixed: Gaussian blur -> 3x3 colour mixing -> tone/range map -> additive
Gaussian noise -> clamp to [0, 1] -> integer translation (edge replicated).
The identity configuration reproduces its input bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import LabeledImageSet, PairedImageSet, load_image, write_image, writing_dir
from .errors import ConfigError, DataError, ShapeError

IDENTITY_MATRIX = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

# Warm cast: boosts red, pulls a little green into red, suppresses blue.
WARM_CAST = ((1.25, 0.10, 0.00), (0.05, 1.00, 0.00), (0.00, 0.10, 0.65))


def blend_matrix(a, b, t):
    return tuple(tuple((1 - t) * x + t * y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


@dataclass(frozen=True)
class DegradationConfig:
    gamma: float = 1.0
    black_lift: float = 0.0
    white_clip: float = 1.0
    color_matrix: tuple = IDENTITY_MATRIX
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    jitter_px: int = 0

    def __post_init__(self):
        m = np.asarray(self.color_matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ConfigError(f"color_matrix must be a finite 3x3 matrix, got {self.color_matrix!r}")
        object.__setattr__(self, "color_matrix", tuple(tuple(float(v) for v in row) for row in m))
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not 0 <= self.black_lift <= 0.3:
            raise ConfigError(f"black_lift must be in [0, 0.3], got {self.black_lift}")
        if not 0.7 < self.white_clip <= 1:
            raise ConfigError(f"white_clip must be in (0.7, 1], got {self.white_clip}")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ConfigError("noise_sigma and blur_sigma must be >= 0")
        if int(self.jitter_px) != self.jitter_px or self.jitter_px < 0:
            raise ConfigError(f"jitter_px must be a non-negative integer, got {self.jitter_px}")

    @classmethod
    def identity(cls) -> "DegradationConfig":
        return cls()

    @classmethod
    def virtual_cozmo(cls) -> "DegradationConfig":
        """Default low-quality profile: darker mid-tones, compressed range, warm cast, soft, noisy."""
        return cls(
            gamma=1.6,
            black_lift=0.06,
            white_clip=0.92,
            color_matrix=blend_matrix(IDENTITY_MATRIX, WARM_CAST, 0.15),
            noise_sigma=0.03,
            blur_sigma=0.8,
            jitter_px=1,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def degrade(image, config: DegradationConfig, seed: int) -> np.ndarray:
    """Apply the camera model to one (1, 3, H, W) image in [0, 1]."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 4 or img.shape[:2] != (1, 3):
        raise ShapeError(f"degrade expects a (1, 3, H, W) image, got {img.shape}", dim="shape")
    out = img.copy()
    noise_rng = np.random.default_rng([seed, 0])
    jitter_rng = np.random.default_rng([seed, 1])

    if config.blur_sigma > 0:
        out = gaussian_filter(out, sigma=(0, 0, config.blur_sigma, config.blur_sigma), mode="nearest")
    if config.color_matrix != IDENTITY_MATRIX:
        m = np.asarray(config.color_matrix, dtype=np.float32)
        out = np.einsum("ij,njhw->nihw", m, out)
        # the power law below needs non-negative input
        out = np.clip(out, 0, 1)
    if config.gamma != 1.0 or config.black_lift != 0.0 or config.white_clip != 1.0:
        lift, clip = np.float32(config.black_lift), np.float32(config.white_clip)
        out = lift + (clip - lift) * np.power(out, np.float32(config.gamma))
    if config.noise_sigma > 0:
        out = out + noise_rng.normal(0.0, config.noise_sigma, out.shape).astype(np.float32)
    out = np.clip(out, 0, 1)
    if config.jitter_px > 0:
        j = int(config.jitter_px)
        dy, dx = jitter_rng.integers(-j, j + 1, size=2)
        out = shift_edge(out, int(dy), int(dx))
    return out.astype(np.float32, copy=False)


def shift_edge(img, dy: int, dx: int) -> np.ndarray:
    """Translate content by (dy, dx) pixels, replicating the border."""
    _, _, h, w = img.shape
    pad = max(abs(dy), abs(dx))
    if pad == 0:
        return img
    padded = np.pad(img, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    return np.ascontiguousarray(padded[:, :, pad - dy:pad - dy + h, pad - dx:pad - dx + w])


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def make_paired_set(clean: LabeledImageSet, config: DegradationConfig, seed: int, out_path) -> PairedImageSet:
    """Write ``out/clean/NNNNN.png`` and ``out/low/NNNNN.png`` for every image; labels are dropped."""
    if not clean.entries:
        raise DataError("clean set is empty", clean.root)
    out = Path(out_path)
    entries = []
    with writing_dir(out):
        for i, path in enumerate(clean.paths):
            img = load_image(path)
            name = f"{i:05d}.png"
            write_image(img, out / "clean" / name)
            write_image(degrade(img, config, image_seed(seed, i)), out / "low" / name)
            entries.append((f"clean/{name}", f"low/{name}"))
        resolution = tuple(load_image(clean.paths[0]).shape[2:])
    return PairedImageSet(out, tuple(entries), resolution)


def degrade_set(labeled: LabeledImageSet, config: DegradationConfig, seed: int, out_path) -> LabeledImageSet:
    """Degraded copy of a labeled set, mirroring its folder layout."""
    if not labeled.entries:
        raise DataError("labeled set is empty", labeled.root)
    out = Path(out_path)
    entries = []
    with writing_dir(out):
        for name in labeled.class_names:
            (out / name).mkdir(parents=True, exist_ok=True)
        for i, (rel, label) in enumerate(labeled.entries):
            img = load_image(labeled.root / rel)
            rel_png = str(Path(rel).with_suffix(".png").as_posix())
            write_image(degrade(img, config, image_seed(seed, i)), out / rel_png)
            entries.append((rel_png, label))
    return LabeledImageSet(out, tuple(entries), labeled.class_names, excluded=labeled.excluded)
