"""Image IO, labeled/paired datasets, splits, and the procedural shapes dataset.

Images on disk are 8-bit RGB PNG or binary PPM (P6; P5 greyscale is read
too). In memory an image is a float32 (1, 3, H, W) array in [0, 1].
Datasets only hold paths; pixels are decoded on demand by ``load()``.
"""

from __future__ import annotations

import contextlib
import logging
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigError, DataError, ShapeError
from .seeding import derive_seed

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")
INCOMPLETE_MARKER = ".incomplete"


# ---------------------------------------------------------------------------
# image IO

_PNM_HEADER = re.compile(rb"(P[56])\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    m = _PNM_HEADER.match(raw)
    if not m:
        raise DataError("not a binary PPM/PGM file", path)
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise DataError(f"only 8-bit PNM is supported (maxval {maxval})", path)
    channels = 3 if magic == b"P6" else 1
    body = raw[m.end():]
    need = w * h * channels
    if len(body) < need:
        raise DataError(f"truncated pixel data ({len(body)} of {need} bytes)", path)
    return np.frombuffer(body[:need], np.uint8).reshape(h, w, channels)


def load_image(path) -> np.ndarray:
    """Decode an image file to a (1, 3, H, W) float32 array in [0, 1].

    Greyscale files are replicated to three channels; alpha is dropped.
    """
    path = Path(path)
    try:
        if path.suffix.lower() in (".ppm", ".pgm"):
            pixels = _read_pnm(path)
        else:
            with Image.open(path) as im:
                pixels = np.asarray(im.convert("RGB"))
    except DataError:
        raise
    except Exception as exc:  # PIL raises a zoo of types
        raise DataError(f"cannot decode image: {exc}", path) from exc
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    arr = pixels.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255)
    return np.ascontiguousarray(arr)


def to_uint8(image) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) floats -> (H, W, 3) uint8 with round-half-even."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch of {arr.shape[0]}", dim="batch")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"expected 3 channels, got shape {arr.shape}", dim="channels")
    return np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_image(image, path) -> None:
    path = Path(path)
    pixels = to_uint8(image)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if path.suffix.lower() == ".ppm":
            h, w, _ = pixels.shape
            path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())
        else:
            Image.fromarray(pixels, "RGB").save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write image: {exc}", path) from exc


def _is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES and not path.name.startswith(".")


def _check_complete(root: Path) -> None:
    if (root / INCOMPLETE_MARKER).exists():
        raise DataError("directory is marked incomplete (an earlier write failed or is in progress)", root)


@contextlib.contextmanager
def writing_dir(out: Path):
    """Create ``out`` and keep an ``.incomplete`` marker in it until the block succeeds."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("write in progress or failed; do not use\n")
    yield out
    marker.unlink()


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class LabeledImageSet:
    root: Path
    entries: tuple  # ((relative path, label index), ...)
    class_names: tuple
    excluded: frozenset = frozenset()
    warnings: tuple = ()
    skipped: int = 0

    def __post_init__(self):
        k = len(self.class_names)
        for rel, label in self.entries:
            if not 0 <= label < k:
                raise DataError(f"label {label} outside vocabulary of {k} classes", rel)

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.entries], dtype=np.int64)

    @property
    def paths(self) -> list:
        return [self.root / rel for rel, _ in self.entries]

    @property
    def active_classes(self) -> tuple:
        return tuple(c for c in self.class_names if c not in self.excluded)

    def class_counts(self) -> dict:
        counts = dict.fromkeys(self.class_names, 0)
        for _, lab in self.entries:
            counts[self.class_names[lab]] += 1
        return counts

    def load(self):
        """Decode every entry: returns (images float32 [N,3,H,W], labels int64 [N])."""
        _check_complete(self.root)
        if not self.entries:
            raise DataError("dataset is empty", self.root)
        images = [load_image(p) for p in self.paths]
        shapes = {im.shape for im in images}
        if len(shapes) != 1:
            raise DataError(f"images have mixed shapes {sorted(shapes)}", self.root)
        return np.concatenate(images), self.labels

    def resolution(self) -> tuple:
        return load_image(self.paths[0]).shape[2:]


@dataclass(frozen=True)
class PairedImageSet:
    root: Path
    entries: tuple  # ((clean path, low path), ...) relative to root
    resolution: tuple = ()

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_dir(cls, root) -> "PairedImageSet":
        """Pair ``root/clean/<f>`` with ``root/low/<f>`` by identical filename."""
        root = Path(root)
        _check_complete(root)
        clean_dir, low_dir = root / "clean", root / "low"
        if not clean_dir.is_dir() or not low_dir.is_dir():
            raise DataError("paired set needs 'clean/' and 'low/' subdirectories", root)
        clean = sorted(p.name for p in clean_dir.iterdir() if _is_image(p))
        low = sorted(p.name for p in low_dir.iterdir() if _is_image(p))
        if clean != low:
            missing = sorted(set(clean) ^ set(low))
            raise DataError(f"clean/ and low/ filenames differ, e.g. {missing[:3]}", root)
        if not clean:
            raise DataError("paired set is empty", root)
        entries = tuple((f"clean/{n}", f"low/{n}") for n in clean)
        return cls(root, entries, tuple(load_image(clean_dir / clean[0]).shape[2:]))

    def load(self):
        """Returns (clean, low) float32 arrays of shape [N,3,H,W]."""
        clean, low = [], []
        for c, lo in self.entries:
            a, b = load_image(self.root / c), load_image(self.root / lo)
            if a.shape != b.shape:
                raise ShapeError(f"pair {c}: clean {a.shape[2:]} vs low {b.shape[2:]}", dim="resolution")
            clean.append(a)
            low.append(b)
        shapes = {a.shape for a in clean}
        if len(shapes) != 1:
            raise ShapeError(f"pairs have mixed resolutions {sorted(shapes)}", dim="resolution")
        return np.concatenate(clean), np.concatenate(low)


def scan_folder(root) -> LabeledImageSet:
    """Index ``root/<class>/<file>``; classes are the sorted subdirectory names."""
    root = Path(root)
    if not root.is_dir():
        raise DataError("not a directory", root)
    _check_complete(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise DataError("no class subdirectories found", root)
    entries, warnings, skipped = [], [], 0
    for label, d in enumerate(class_dirs):
        files = []
        for dirpath, dirnames, filenames in os.walk(d):
            dirnames.sort()
            for name in sorted(filenames):
                p = Path(dirpath) / name
                if _is_image(p):
                    files.append(p.relative_to(root).as_posix())
                else:
                    skipped += 1
        if not files:
            warnings.append(f"class '{d.name}' has no images")
        entries.extend((f, label) for f in sorted(files))
    for w in warnings:
        log.warning("%s: %s", root, w)
    return LabeledImageSet(root, tuple(entries), tuple(d.name for d in class_dirs),
                           warnings=tuple(warnings), skipped=skipped)


# ---------------------------------------------------------------------------
# splitting and filtering

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if len(self.fractions) != 3 or any(not 0 <= f <= 1 for f in self.fractions):
            raise ConfigError(f"split fractions must be three values in [0, 1], got {self.fractions}")
        if abs(sum(self.fractions) - 1) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(self.fractions)}")


def _partition_sizes(n, fractions):
    sizes = [int(math.floor(f * n + 0.5)) for f in fractions[:2]]
    if sizes[0] + sizes[1] > n:
        sizes[1] = n - sizes[0]
    return sizes[0], sizes[1], n - sizes[0] - sizes[1]


def split(dataset: LabeledImageSet, spec: SplitSpec):
    """Deterministic (train, val, test) partition of ``dataset``."""
    if not dataset.entries:
        raise DataError("cannot split an empty dataset", dataset.root)
    rng = np.random.default_rng(derive_seed(spec.seed, "split"))
    if spec.stratified:
        groups = {}
        for i, (_, lab) in enumerate(dataset.entries):
            groups.setdefault(lab, []).append(i)
        needed = sum(1 for f in spec.fractions if f > 0)
        for lab, idx in groups.items():
            if len(idx) < needed:
                raise DataError(f"class '{dataset.class_names[lab]}' has {len(idx)} entries, "
                                f"fewer than the {needed} non-empty splits", dataset.root)
        parts = ([], [], [])
        for lab in sorted(groups):
            idx = np.array(groups[lab])[rng.permutation(len(groups[lab]))]
            a, b, _ = _partition_sizes(len(idx), spec.fractions)
            for part, chunk in zip(parts, (idx[:a], idx[a:a + b], idx[a + b:])):
                part.extend(chunk.tolist())
    else:
        idx = rng.permutation(len(dataset))
        a, b, _ = _partition_sizes(len(idx), spec.fractions)
        parts = (idx[:a].tolist(), idx[a:a + b].tolist(), idx[a + b:].tolist())
    return tuple(replace(dataset, entries=tuple(dataset.entries[i] for i in sorted(p))) for p in parts)


def exclude_classes(dataset: LabeledImageSet, excluded: Sequence[str]) -> LabeledImageSet:
    """Drop every entry whose class is in ``excluded``; label indices are unchanged."""
    excluded = frozenset(excluded)
    unknown = excluded - set(dataset.class_names)
    if unknown:
        raise ConfigError(f"unknown classes {sorted(unknown)}; vocabulary is {list(dataset.class_names)}")
    keep = tuple(e for e in dataset.entries if dataset.class_names[e[1]] not in excluded)
    if not keep:
        raise DataError("excluding these classes leaves no entries", dataset.root)
    return replace(dataset, entries=keep, excluded=dataset.excluded | excluded)


def write_manifest(dataset: LabeledImageSet, path) -> None:
    Path(path).write_text("".join(rel + "\n" for rel, _ in dataset.entries))


def read_manifest(root, path, class_names: Sequence[str]) -> LabeledImageSet:
    """Rebuild a split from a manifest; the class is the first path component."""
    index = {c: i for i, c in enumerate(class_names)}
    entries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        cls = line.split("/", 1)[0]
        if cls not in index:
            raise DataError(f"manifest entry {line!r} names unknown class {cls!r}", path)
        entries.append((line, index[cls]))
    return LabeledImageSet(Path(root), tuple(entries), tuple(class_names))


# ---------------------------------------------------------------------------
# batching

def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, "batches", epoch)).permutation(n)


def batch_iter(arrays, batch_size: int, seed: int, epoch: int) -> Iterator[tuple]:
    """Yield shuffled minibatches of equally long arrays; the last batch may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    arrays = tuple(arrays)
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ShapeError("arrays passed to batch_iter differ in length", dim="batch")
    order = epoch_permutation(n, seed, epoch)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield tuple(a[idx] for a in arrays)


# ---------------------------------------------------------------------------
# procedural shapes dataset

SHAPE_FAMILIES = (
    "stripes", "checker", "dots", "ring", "cross",
    "triangle", "square", "hexagon", "disk", "star",
)

_SS = 4  # supersampling factor for anti-aliased masks


def _polygon(cx, cy, r, n, rot, inner=None):
    pts = []
    steps = 2 * n if inner else n
    for i in range(steps):
        rad = r if (inner is None or i % 2 == 0) else r * inner
        a = rot + 2 * math.pi * i / steps
        pts.append((cx + rad * math.cos(a), cy + rad * math.sin(a)))
    return pts


def _shape_mask(family, size, rng):
    """Anti-aliased coverage mask in [0, 1] of shape (size, size)."""
    s = size * _SS
    cx, cy = rng.uniform(0.35, 0.65, 2) * s
    r = rng.uniform(0.2, 0.34) * s
    rot = rng.uniform(0, 2 * math.pi)
    canvas = Image.new("L", (s, s), 0)
    draw = ImageDraw.Draw(canvas)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5

    if family in ("triangle", "square", "hexagon"):
        n = {"triangle": 3, "square": 4, "hexagon": 6}[family]
        draw.polygon(_polygon(cx, cy, r, n, rot), fill=255)
        mask = np.asarray(canvas, np.float64) / 255
    elif family == "star":
        draw.polygon(_polygon(cx, cy, r, 5, rot, inner=0.42), fill=255)
        mask = np.asarray(canvas, np.float64) / 255
    elif family == "disk":
        mask = (np.hypot(xx - cx, yy - cy) <= r).astype(np.float64)
    elif family == "ring":
        d = np.hypot(xx - cx, yy - cy)
        mask = ((d <= r) & (d >= r * rng.uniform(0.5, 0.65))).astype(np.float64)
    elif family == "cross":
        u = (xx - cx) * math.cos(rot) + (yy - cy) * math.sin(rot)
        v = -(xx - cx) * math.sin(rot) + (yy - cy) * math.cos(rot)
        arm = r * 0.32
        mask = (((np.abs(u) <= r) & (np.abs(v) <= arm)) | ((np.abs(v) <= r) & (np.abs(u) <= arm))).astype(np.float64)
    elif family == "stripes":
        period = rng.uniform(0.5, 0.7) * r
        u = (xx - cx) * math.cos(rot) + (yy - cy) * math.sin(rot)
        mask = ((np.hypot(xx - cx, yy - cy) <= r) & (np.mod(u, period) < period / 2)).astype(np.float64)
    elif family == "checker":
        cell = rng.uniform(0.6, 0.75) * r
        u = (xx - cx) * math.cos(rot) + (yy - cy) * math.sin(rot)
        v = -(xx - cx) * math.sin(rot) + (yy - cy) * math.cos(rot)
        inside = (np.abs(u) <= r * 0.9) & (np.abs(v) <= r * 0.9)
        parity = (np.floor(u / cell) + np.floor(v / cell)) % 2 == 0
        mask = (inside & parity).astype(np.float64)
    elif family == "dots":
        mask = np.zeros((s, s))
        for _ in range(int(rng.integers(3, 6))):
            dx, dy = rng.uniform(-r, r, 2)
            mask = np.maximum(mask, np.hypot(xx - cx - dx, yy - cy - dy) <= r * rng.uniform(0.25, 0.35))
    else:
        raise ConfigError(f"unknown shape family {family!r}")
    return mask.reshape(size, _SS, size, _SS).mean(axis=(1, 3))


def _luma(c):
    return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]


def render_shape(family: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Render one image of ``family``: textured background, randomly coloured shape."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    # darker background, brighter foreground; hues are random
    c1, c2 = rng.uniform(0, 0.5, (2, 3))
    theta = rng.uniform(0, 2 * math.pi)
    ramp = (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) + 0.5
    bg = c1[:, None, None] * (1 - ramp) + c2[:, None, None] * ramp
    # low-amplitude, mid-frequency background texture
    tex = np.zeros((size, size))
    for _ in range(3):
        f = rng.uniform(2, 8, 2)
        ph = rng.uniform(0, 2 * math.pi)
        tex += np.sin(2 * math.pi * (f[0] * xx + f[1] * yy) + ph)
    bg = bg + 0.06 * tex / 3
    bg_luma = _luma(bg.mean(axis=(1, 2)))
    fg = rng.uniform(0.5, 1, 3)
    for _ in range(100):
        if _luma(fg) - bg_luma >= 0.25:
            break
        fg = rng.uniform(0.5, 1, 3)
    mask = _shape_mask(family, size, rng)
    img = bg * (1 - mask) + fg[:, None, None] * mask
    return np.clip(img, 0, 1).astype(np.float32)[None]


def gen_shapes_dataset(out_path, classes: int = 5, per_class: int = 400, resolution: int = 64,
                       seed: int = 0) -> LabeledImageSet:
    """Write ``classes`` x ``per_class`` PNGs under ``out_path/<family>/``."""
    if not 2 <= classes <= len(SHAPE_FAMILIES):
        raise ConfigError(f"classes must be in [2, {len(SHAPE_FAMILIES)}], got {classes}")
    if per_class < 1 or resolution < 4:
        raise ConfigError("per_class must be >= 1 and resolution >= 4")
    out = Path(out_path)
    names = SHAPE_FAMILIES[:classes]
    entries = []
    with writing_dir(out):
        for label, family in enumerate(names):
            for i in range(per_class):
                rng = np.random.default_rng(derive_seed(seed, "shapes", family, i))
                rel = f"{family}/{family}_{i:05d}.png"
                write_image(render_shape(family, resolution, rng), out / rel)
                entries.append((rel, label))
    return LabeledImageSet(out, tuple(entries), names)
