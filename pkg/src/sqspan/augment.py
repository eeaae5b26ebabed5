"""Semantic-preserving augmentation family with seeded, replayable transforms.

Sampling and application are split: sample_transform draws a fully
parameterized Transform from a policy, apply_transform replays it on any
batch. That keeps augmentation deterministic per seed and lets tests inspect
exactly what was applied. All color math operates natively on [-1, 1]
pixels; the pipeline order is crop -> color jitter -> grayscale -> blur ->
flip -> clamp.
"""

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .data import ImageBatch
from .util import derive_seed

Tensor = torch.Tensor


@dataclass(frozen=True)
class AugmentationPolicy:
    """Distribution over transforms. Defaults follow the MoCo-v2 recipe with blur off."""

    crop_scale: tuple = (0.2, 1.0)
    flip_prob: float = 0.5
    color_jitter: tuple = (0.4, 0.4, 0.4, 0.1)  # brightness, contrast, saturation, hue
    color_jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_enabled: bool = False
    blur_prob: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    output_size: int = 32

    def __post_init__(self):
        for name in ("flip_prob", "color_jitter_prob", "grayscale_prob", "blur_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if len(self.color_jitter) != 4 or any(v < 0 for v in self.color_jitter):
            raise ValueError(f"color_jitter must be 4 nonnegative strengths, got {self.color_jitter}")
        s_lo, s_hi = self.blur_sigma
        if not 0.0 < s_lo <= s_hi:
            raise ValueError(f"blur_sigma must satisfy 0 < lo <= hi, got {self.blur_sigma}")
        if self.output_size < 1:
            raise ValueError(f"output_size must be >= 1, got {self.output_size}")


def identity_policy(output_size: int = 32) -> AugmentationPolicy:
    """The policy whose every sample is the identity transform."""
    return AugmentationPolicy(
        crop_scale=(1.0, 1.0),
        flip_prob=0.0,
        color_jitter=(0.0, 0.0, 0.0, 0.0),
        color_jitter_prob=0.0,
        grayscale_prob=0.0,
        blur_enabled=False,
        output_size=output_size,
    )


def moco_v2_policy(output_size: int = 32, blur: bool = False) -> AugmentationPolicy:
    return AugmentationPolicy(output_size=output_size, blur_enabled=blur)


@dataclass(frozen=True)
class Transform:
    """A concrete augmentation: all randomness already resolved.

    crop is (top, left, height, width) in relative [0, 1] units, or None for
    the full frame. jitter_ops is an ordered tuple of (name, factor) pairs.
    """

    crop: Optional[tuple] = None
    flip: bool = False
    jitter_ops: tuple = ()
    grayscale: bool = False
    blur_sigma: Optional[float] = None
    output_size: int = 32


def sample_transform(policy: AugmentationPolicy, seed: int) -> Transform:
    """Draw one transform from the policy; same seed, same parameters."""
    gen = torch.Generator().manual_seed(seed)

    def u(lo: float, hi: float) -> float:
        return lo + (hi - lo) * torch.rand((), generator=gen).item()

    crop = None
    lo, hi = policy.crop_scale
    if (lo, hi) != (1.0, 1.0):
        # random resized crop: sample area and log-uniform aspect, retry, then
        # fall back to the full frame
        for _ in range(10):
            area = u(lo, hi)
            ratio = math.exp(u(math.log(3.0 / 4.0), math.log(4.0 / 3.0)))
            w = math.sqrt(area * ratio)
            h = math.sqrt(area / ratio)
            if w <= 1.0 and h <= 1.0:
                top = u(0.0, 1.0 - h)
                left = u(0.0, 1.0 - w)
                crop = (top, left, h, w)
                break

    flip = u(0.0, 1.0) < policy.flip_prob

    jitter_ops = ()
    b, c, s, hstr = policy.color_jitter
    if any(v > 0 for v in policy.color_jitter) and u(0.0, 1.0) < policy.color_jitter_prob:
        order = torch.randperm(4, generator=gen).tolist()
        ops = []
        for idx in order:
            if idx == 0 and b > 0:
                ops.append(("brightness", u(max(0.0, 1.0 - b), 1.0 + b)))
            elif idx == 1 and c > 0:
                ops.append(("contrast", u(max(0.0, 1.0 - c), 1.0 + c)))
            elif idx == 2 and s > 0:
                ops.append(("saturation", u(max(0.0, 1.0 - s), 1.0 + s)))
            elif idx == 3 and hstr > 0:
                ops.append(("hue", u(-hstr, hstr)))
        jitter_ops = tuple(ops)

    grayscale = u(0.0, 1.0) < policy.grayscale_prob

    blur_sigma = None
    if policy.blur_enabled and u(0.0, 1.0) < policy.blur_prob:
        blur_sigma = u(*policy.blur_sigma)

    return Transform(crop, flip, jitter_ops, grayscale, blur_sigma, policy.output_size)


_GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# RGB <-> YIQ, used for hue rotation about the gray axis
_RGB_TO_YIQ = torch.tensor(
    [[0.299, 0.587, 0.114], [0.5959, -0.2746, -0.3213], [0.2115, -0.5227, 0.3112]]
)
_YIQ_TO_RGB = torch.tensor(
    [[1.0, 0.956, 0.619], [1.0, -0.272, -0.6474], [1.0, -1.106, 1.7029]]
)


def _grayscale(x: Tensor) -> Tensor:
    r, g, b = x.unbind(dim=1)
    w = _GRAY_WEIGHTS
    return (w[0] * r + w[1] * g + w[2] * b).unsqueeze(1)


def _blend(a: Tensor, b: Tensor, factor: float) -> Tensor:
    return (factor * a + (1.0 - factor) * b).clamp(-1.0, 1.0)


def _apply_jitter(x: Tensor, name: str, factor: float) -> Tensor:
    if name == "brightness":
        return (factor * x).clamp(-1.0, 1.0)
    if name == "contrast":
        mean = _grayscale(x).mean(dim=(2, 3), keepdim=True)
        return _blend(x, mean, factor)
    if name == "saturation":
        return _blend(x, _grayscale(x), factor)
    if name == "hue":
        theta = 2.0 * math.pi * factor
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        rot = torch.tensor([[1.0, 0.0, 0.0], [0.0, cos_t, -sin_t], [0.0, sin_t, cos_t]])
        m = (_YIQ_TO_RGB @ rot @ _RGB_TO_YIQ).to(x.dtype)
        return torch.einsum("dc,nchw->ndhw", m, x).clamp(-1.0, 1.0)
    raise ValueError(f"unknown jitter op: {name}")


def _gaussian_blur(x: Tensor, sigma: float, size: int) -> Tensor:
    kernel_size = max(3, int(round(0.1 * size)))
    if kernel_size % 2 == 0:
        kernel_size += 1
    coords = torch.arange(kernel_size, dtype=x.dtype) - (kernel_size - 1) / 2.0
    kernel = torch.exp(-coords.pow(2) / (2.0 * sigma * sigma))
    kernel = kernel / kernel.sum()
    channels = x.shape[1]
    pad = kernel_size // 2
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    kx = kernel.view(1, 1, 1, -1).expand(channels, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(channels, 1, -1, 1)
    x = F.conv2d(x, kx, groups=channels)
    return F.conv2d(x, ky, groups=channels)


def apply_transform(t: Transform, batch: ImageBatch) -> ImageBatch:
    """Replay one transform on every image of the batch.

    Output spatial size is t.output_size; pixels are clamped back to [-1, 1].
    The identity transform returns the input pixels unchanged bitwise.
    """
    if len(batch) == 0:
        raise ValueError("apply_transform requires a nonempty batch")
    x = batch.pixels
    height, width = x.shape[-2:]

    if t.crop is not None:
        top, left, h, w = t.crop
        h_px = int(round(h * height))
        w_px = int(round(w * width))
        if h_px < 1 or w_px < 1:
            raise ValueError(
                f"crop {t.crop} is smaller than one pixel at input size {height}x{width}"
            )
        top_px = min(max(int(round(top * height)), 0), height - h_px)
        left_px = min(max(int(round(left * width)), 0), width - w_px)
        x = x[:, :, top_px : top_px + h_px, left_px : left_px + w_px]

    if x.shape[-2:] != (t.output_size, t.output_size):
        x = F.interpolate(
            x, size=(t.output_size, t.output_size), mode="bilinear",
            align_corners=False, antialias=True,
        )

    for name, factor in t.jitter_ops:
        x = _apply_jitter(x, name, factor)
    if t.grayscale:
        x = _grayscale(x).expand(-1, x.shape[1], -1, -1)
    if t.blur_sigma is not None:
        x = _gaussian_blur(x, t.blur_sigma, t.output_size)
    if t.flip:
        x = x.flip(-1)
    return ImageBatch(x.clamp(-1.0, 1.0), batch.labels)


def augment_batch(policy: AugmentationPolicy, batch: ImageBatch, seed: int) -> ImageBatch:
    """Augment each image with its own independently sampled transform."""
    if len(batch) == 0:
        raise ValueError("augment_batch requires a nonempty batch")
    views = []
    for i in range(len(batch)):
        t = sample_transform(policy, derive_seed(seed, "sample", i))
        single = ImageBatch(batch.pixels[i : i + 1])
        views.append(apply_transform(t, single).pixels)
    return ImageBatch(torch.cat(views, dim=0), batch.labels)


def two_view(policy: AugmentationPolicy, batch: ImageBatch, seed: int):
    """Two independently augmented views of the same images; labels shared."""
    view_a = augment_batch(policy, batch, derive_seed(seed, "view", 0))
    view_b = augment_batch(policy, batch, derive_seed(seed, "view", 1))
    return view_a, view_b
