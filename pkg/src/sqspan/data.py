"""Procedurally generated labeled shapes dataset.

A self-contained stand-in for a real image corpus: K classes, each owning a
hue arc and one of four outline shapes, rendered at a configurable
resolution with position/scale jitter on a dark background. Everything is a
pure function of (spec, n, seed), so splits are reproducible bit-for-bit and
never touch the network. Pixels live in [-1, 1] as N x 3 x H x W float32.
"""

import colorsys
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .util import derive_seed, stable_hash

CACHE_ENV_VAR = "SQSPAN_DATA_DIR"

_SHAPES = ("circle", "square", "triangle", "diamond")


@dataclass(frozen=True)
class ShapesSpec:
    """Parameters of the procedural dataset.

    color_range is the width of each class's hue arc as a fraction of its
    slot: values up to 1 keep the arcs disjoint (color alone identifies the
    class), values in (1, 2] let neighboring arcs overlap so the probe has
    to read the outline shape as well. jitter scales the position and size
    noise. seed is folded into every generation call.
    """

    image_size: int = 32
    num_classes: int = 4
    color_range: float = 0.5
    jitter: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 < self.color_range <= 2.0:
            raise ValueError(f"color_range must be in (0, 2], got {self.color_range}")
        if not 0.0 <= self.jitter <= 1.0:
            raise ValueError(f"jitter must be in [0, 1], got {self.jitter}")


@dataclass
class ImageBatch:
    """Pixels in [-1, 1], shape N x C x H x W, plus optional integer labels."""

    pixels: torch.Tensor
    labels: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.pixels.dim() != 4:
            raise ValueError(f"pixels must be N x C x H x W, got {tuple(self.pixels.shape)}")
        if self.pixels.numel() and (
            float(self.pixels.min()) < -1.0 or float(self.pixels.max()) > 1.0
        ):
            raise ValueError("pixel values must lie in [-1, 1]")
        if self.labels is not None:
            if len(self.labels) != len(self.pixels):
                raise ValueError(
                    f"labels length {len(self.labels)} != batch size {len(self.pixels)}"
                )
            if self.labels.numel() and int(self.labels.min()) < 0:
                raise ValueError("labels must be nonnegative class indices")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def subset(self, idx: torch.Tensor) -> "ImageBatch":
        labels = self.labels[idx] if self.labels is not None else None
        return ImageBatch(self.pixels[idx], labels)


def _u(gen: torch.Generator, lo: float, hi: float) -> float:
    return lo + (hi - lo) * torch.rand((), generator=gen).item()


def _shape_pseudo_dist(kind: str, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    # Each returns g(x, y) with the shape interior = {g <= r}.
    if kind == "circle":
        return torch.sqrt(x * x + y * y)
    if kind == "square":
        return torch.maximum(x.abs(), y.abs())
    if kind == "triangle":
        # point-up equilateral triangle with circumradius r
        return torch.maximum(math.sqrt(3.0) * x.abs() + y, -2.0 * y)
    if kind == "diamond":
        return x.abs() + y.abs()
    raise ValueError(f"unknown shape kind: {kind}")


def make_shapes_dataset(spec: ShapesSpec, n: int, seed: int) -> ImageBatch:
    """Render n labeled images, class-balanced (counts differ by at most 1).

    Deterministic per (spec, n, seed). n=0 yields an empty batch.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    size = spec.image_size
    labels = torch.arange(n, dtype=torch.long) % spec.num_classes
    if n == 0:
        return ImageBatch(torch.empty(0, 3, size, size), labels)

    gen = torch.Generator().manual_seed(derive_seed(spec.seed, "shapes", n, seed))
    ys, xs = torch.meshgrid(
        torch.linspace(-1.0, 1.0, size),
        torch.linspace(-1.0, 1.0, size),
        indexing="ij",
    )
    edge = 3.0 / size  # ~1.5 px soft edge in [-1, 1] coordinates
    images = torch.empty(n, 3, size, size)
    for i in range(n):
        k = int(labels[i])
        hue = (k + spec.color_range * _u(gen, 0.0, 1.0)) / spec.num_classes
        sat = _u(gen, 0.7, 1.0)
        val = _u(gen, 0.7, 1.0)
        background = _u(gen, -1.0, -0.7)
        cx = spec.jitter * 0.5 * _u(gen, -1.0, 1.0)
        cy = spec.jitter * 0.5 * _u(gen, -1.0, 1.0)
        radius = 0.55 * (1.0 + spec.jitter * _u(gen, -0.5, 0.5))

        rgb = colorsys.hsv_to_rgb(hue % 1.0, sat, val)
        fg = torch.tensor(rgb).mul(2.0).sub(1.0)  # [0,1] -> [-1,1]
        dist = _shape_pseudo_dist(_SHAPES[k % len(_SHAPES)], xs - cx, ys - cy)
        mask = ((radius - dist) / edge).clamp(0.0, 1.0)
        images[i] = background + mask.unsqueeze(0) * (fg.view(3, 1, 1) - background)
    return ImageBatch(images.clamp(-1.0, 1.0), labels)


def dataset_cache_root() -> Optional[Path]:
    """Cache root from the environment, or None when caching is disabled."""
    root = os.environ.get(CACHE_ENV_VAR)
    return Path(root) if root else None


def load_or_make_shapes(
    spec: ShapesSpec, n: int, seed: int, cache_root: Optional[Path] = None
) -> ImageBatch:
    """make_shapes_dataset with an optional on-disk cache.

    Stored as one .npz blob plus a JSON manifest recording (spec, n, seed);
    the file name is a hash of the manifest. Falls back to generation on any
    cache miss or mismatch.
    """
    if cache_root is None:
        cache_root = dataset_cache_root()
    if cache_root is None or n == 0:
        return make_shapes_dataset(spec, n, seed)

    manifest = {"spec": asdict(spec), "n": n, "seed": seed}
    key = stable_hash(manifest)
    cache_root = Path(cache_root)
    blob_path = cache_root / f"shapes-{key}.npz"
    manifest_path = cache_root / f"shapes-{key}.json"
    if blob_path.exists() and manifest_path.exists():
        stored = json.loads(manifest_path.read_text())
        if stored == manifest:
            with np.load(blob_path) as data:
                return ImageBatch(
                    torch.from_numpy(data["pixels"]), torch.from_numpy(data["labels"])
                )

    batch = make_shapes_dataset(spec, n, seed)
    cache_root.mkdir(parents=True, exist_ok=True)
    np.savez(blob_path, pixels=batch.pixels.numpy(), labels=batch.labels.numpy())
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return batch
