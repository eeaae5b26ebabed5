"""Pooled per-block feature extraction from frozen generators/discriminators.

Three teacher signals come out of a pretrained GAN: spatially pooled
generator block activations, pooled discriminator block activations, and
the mapped latent itself. Extraction never tracks gradients into the frozen
networks; downstream heads receive plain detached tensors.
"""

from dataclasses import dataclass

import torch

Tensor = torch.Tensor


@dataclass
class FeaturePyramid:
    """Per-block maps plus their pooled vectors and ordered concatenation.

    block_set records which 1-based blocks were tapped, in ascending order,
    so heads can verify they were built for the same selection.
    """

    per_block: list
    pooled: list
    concat: Tensor
    block_set: tuple

    @classmethod
    def from_maps(cls, maps: list, block_set: tuple) -> "FeaturePyramid":
        pooled = [pool(m) for m in maps]
        return cls(maps, pooled, torch.cat(pooled, dim=1), tuple(block_set))


def pool(feature_map: Tensor) -> Tensor:
    """Spatial arithmetic mean: N x C x H x W -> N x C."""
    if feature_map.dim() != 4:
        raise ValueError(f"expected N x C x H x W, got shape {tuple(feature_map.shape)}")
    return feature_map.mean(dim=(2, 3))


def _validate_block_set(block_set, num_blocks: int) -> tuple:
    if block_set is None:
        return tuple(range(1, num_blocks + 1))
    block_set = tuple(sorted(set(int(b) for b in block_set)))
    if not block_set:
        raise ValueError("block_set must be nonempty")
    if block_set[0] < 1 or block_set[-1] > num_blocks:
        raise ValueError(f"block_set {block_set} out of range 1..{num_blocks}")
    return block_set


def generator_features(generator, w: Tensor, block_set=None) -> FeaturePyramid:
    """Pooled activations of the selected generator blocks for latents w.

    block_set defaults to all blocks; indices are 1-based from the lowest
    resolution. Computed under no_grad: the teacher signal is detached by
    construction, only the squeeze head sees gradients.
    """
    block_set = _validate_block_set(block_set, generator.spec.num_blocks)
    with torch.no_grad():
        maps = generator.block_outputs(w)
    return FeaturePyramid.from_maps([maps[i - 1] for i in block_set], block_set)


def discriminator_features(discriminator, x: Tensor, block_set=None, differentiable: bool = False) -> FeaturePyramid:
    """Pooled activations of the selected discriminator blocks for images x.

    With differentiable=True gradients flow to the input x (never to the
    frozen discriminator's weights); used by the perceptual reconstruction
    term of the post-hoc encoder.
    """
    block_set = _validate_block_set(block_set, len(discriminator.blocks))
    if differentiable:
        maps = discriminator.block_outputs(x)
    else:
        with torch.no_grad():
            maps = discriminator.block_outputs(x)
    return FeaturePyramid.from_maps([maps[i - 1] for i in block_set], block_set)


def latent_representation(w: Tensor) -> Tensor:
    """The mapped latent as a teacher signal, unchanged (N x d_w)."""
    if w.dim() != 2:
        raise ValueError(f"expected N x d_w latents, got shape {tuple(w.shape)}")
    return w


def latent_pyramid(w: Tensor) -> FeaturePyramid:
    """Wrap latents as a single-block pyramid so the squeeze head applies to w."""
    return FeaturePyramid.from_maps([w.unsqueeze(-1).unsqueeze(-1)], (1,))
