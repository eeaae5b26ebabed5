"""Trainable heads: squeeze module, student network, post-hoc encoder.

All representation-producing modules return matrices in the M x N
convention of the losses (rows = dimensions, columns = samples). Hidden
normalization is LayerNorm throughout so every head stays a per-sample map
and batch-size-1 inference is well-defined.
"""

import torch
import torch.nn as nn

from .features import FeaturePyramid

Tensor = torch.Tensor


class SqueezeHead(nn.Module):
    """Per-block linear maps, summed, then a 3-layer MLP (the squeeze module).

    Built for a fixed block_set: one Linear per tapped block projects its
    pooled C_i vector to out_dim, the projections are summed elementwise,
    and the MLP refines the sum into the teacher representation.
    """

    def __init__(self, block_channels: dict, out_dim: int = 256):
        super().__init__()
        if not block_channels:
            raise ValueError("block_channels must be nonempty")
        self.block_set = tuple(sorted(int(b) for b in block_channels))
        self.out_dim = out_dim
        self.proj = nn.ModuleDict(
            {str(b): nn.Linear(int(block_channels[b]), out_dim) for b in self.block_set}
        )
        self.mlp = nn.Sequential(
            nn.Linear(out_dim, out_dim),
            nn.LayerNorm(out_dim),
            nn.ReLU(),
            nn.Linear(out_dim, out_dim),
            nn.LayerNorm(out_dim),
            nn.ReLU(),
            nn.Linear(out_dim, out_dim),
        )

    @classmethod
    def for_generator(cls, generator, block_set=None, out_dim: int = 256) -> "SqueezeHead":
        """Accepts a Generator or its GeneratorSpec."""
        spec = getattr(generator, "spec", generator)
        channels = spec.block_channels[1:]  # tappable blocks only
        if block_set is None:
            block_set = range(1, len(channels) + 1)
        return cls({int(b): channels[int(b) - 1] for b in block_set}, out_dim)

    def forward(self, pyramid: FeaturePyramid) -> Tensor:
        """FeaturePyramid -> teacher representations, out_dim x N."""
        if tuple(pyramid.block_set) != self.block_set:
            raise ValueError(
                f"pyramid blocks {tuple(pyramid.block_set)} do not match head {self.block_set}"
            )
        fused = None
        for b, pooled in zip(pyramid.block_set, pyramid.pooled):
            term = self.proj[str(b)](pooled)
            fused = term if fused is None else fused + term
        return self.mlp(fused).t()


class _BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), nn.BatchNorm2d(c_out)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class StudentNet(nn.Module):
    """Compact 3-stage residual backbone plus a 5-layer MLP projector.

    forward returns (backbone_feature N x F, projection M x N): the backbone
    feature feeds linear probes, the projection feeds the losses.
    """

    def __init__(
        self,
        image_size: int = 32,
        widths: tuple = (32, 64, 128),
        proj_dim: int = 256,
        blocks_per_stage: int = 2,
    ):
        super().__init__()
        if len(widths) != 3:
            raise ValueError(f"widths must have 3 stages, got {widths}")
        self.image_size = image_size
        self.feature_dim = widths[-1]
        self.proj_dim = proj_dim

        layers = [
            nn.Conv2d(3, widths[0], 3, padding=1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        ]
        c_in = widths[0]
        for stage, width in enumerate(widths):
            for i in range(blocks_per_stage):
                stride = 2 if (stage > 0 and i == 0) else 1
                layers.append(_BasicBlock(c_in, width, stride))
                c_in = width
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten(1)]
        self.backbone = nn.Sequential(*layers)

        f, m = self.feature_dim, proj_dim
        proj_layers = []
        dims = [f] + [m] * 4
        for i in range(4):
            proj_layers += [nn.Linear(dims[i], dims[i + 1]), nn.LayerNorm(m), nn.ReLU(inplace=True)]
        proj_layers.append(nn.Linear(m, m))  # 5th linear layer, no activation
        self.projector = nn.Sequential(*proj_layers)

    def forward(self, x: Tensor):
        if x.shape[-2:] != (self.image_size, self.image_size):
            raise ValueError(
                f"expected {self.image_size}x{self.image_size} input, got {tuple(x.shape[-2:])}"
            )
        feature = self.backbone(x)
        projection = self.projector(feature).t()
        return feature, projection


class PostHocEncoder(nn.Module):
    """Convolutional image -> w-hat encoder (the GAN-inversion baseline)."""

    def __init__(self, image_size: int, w_dim: int, widths: tuple = (32, 64, 128)):
        super().__init__()
        self.image_size = image_size
        self.w_dim = w_dim
        layers = []
        c_in = 3
        spatial = image_size
        for width in widths:
            layers += [nn.Conv2d(c_in, width, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in = width
            spatial = (spatial + 1) // 2
        layers += [nn.Flatten(1), nn.Linear(c_in * spatial * spatial, w_dim)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2:] != (self.image_size, self.image_size):
            raise ValueError(
                f"expected {self.image_size}x{self.image_size} input, got {tuple(x.shape[-2:])}"
            )
        return self.net(x)
