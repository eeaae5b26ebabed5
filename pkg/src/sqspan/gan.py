"""Block-decomposed convolutional GAN with a z -> w latent mapper.

The generator is deliberately simple: a learned 4x4 base driven by the
mapped latent w, followed by upsampling blocks whose activations are
individually tappable (the per-block features downstream modules pool and
distill). The discriminator mirrors it with strided conv blocks. Training
uses the non-saturating logistic loss with Adam, enough to produce a frozen
fixture generator at desk scale.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import ImageBatch
from .util import derive_seed

logger = logging.getLogger(__name__)

Tensor = torch.Tensor


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture of the generator/discriminator pair.

    block_channels[0] is the learned 4x4 base; every later entry is one 2x
    upsampling block, so the output resolution is 4 * 2**(len - 1). The
    tappable feature blocks are the upsampling ones (resolutions 8, 16, ...).
    """

    latent_dim: int = 64
    w_dim: int = 64
    mapper_layers: int = 2
    block_channels: tuple = (128, 64, 32, 16)
    norm: str = "batch"
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.latent_dim < 1 or self.w_dim < 1:
            raise ValueError("latent_dim and w_dim must be positive")
        if self.mapper_layers < 1:
            raise ValueError(f"mapper_layers must be >= 1, got {self.mapper_layers}")
        if len(self.block_channels) < 2 or any(c < 1 for c in self.block_channels):
            raise ValueError(
                f"block_channels needs >= 2 positive entries, got {self.block_channels}"
            )
        if self.norm not in ("batch", "none"):
            raise ValueError(f"norm must be 'batch' or 'none', got {self.norm!r}")
        if self.activation not in ("leaky_relu", "relu"):
            raise ValueError(f"activation must be 'leaky_relu' or 'relu', got {self.activation!r}")

    @property
    def resolution(self) -> int:
        return 4 * 2 ** (len(self.block_channels) - 1)

    @property
    def num_blocks(self) -> int:
        # tappable upsampling blocks, excluding the 4x4 base
        return len(self.block_channels) - 1


def _activation(spec: GeneratorSpec) -> nn.Module:
    return nn.LeakyReLU(0.2) if spec.activation == "leaky_relu" else nn.ReLU()


def _maybe_norm(spec: GeneratorSpec, channels: int) -> list:
    return [nn.BatchNorm2d(channels)] if spec.norm == "batch" else []


class Generator(nn.Module):
    """w -> image, with each upsampling block output retrievable."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.block_channels

        dims = [spec.latent_dim] + [spec.w_dim] * spec.mapper_layers
        mapper = []
        for i in range(spec.mapper_layers):
            mapper.append(nn.Linear(dims[i], dims[i + 1]))
            if i < spec.mapper_layers - 1:
                mapper.append(_activation(spec))
        self.mapper = nn.Sequential(*mapper)

        self.base_fc = nn.Linear(spec.w_dim, ch[0] * 4 * 4)
        self.base_post = nn.Sequential(*_maybe_norm(spec, ch[0]), _activation(spec))
        self.blocks = nn.ModuleList(
            nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch[i], ch[i + 1], 3, padding=1),
                *_maybe_norm(spec, ch[i + 1]),
                _activation(spec),
            )
            for i in range(len(ch) - 1)
        )
        self.to_image = nn.Conv2d(ch[-1], 3, 3, padding=1)

    def map_latent(self, z: Tensor) -> Tensor:
        """z (N x latent_dim) -> w (N x w_dim) through the latent MLP."""
        return self.mapper(z)

    def _base(self, w: Tensor) -> Tensor:
        h = self.base_fc(w).view(w.shape[0], self.spec.block_channels[0], 4, 4)
        return self.base_post(h)

    def block_outputs(self, w: Tensor) -> list:
        """Activations of every upsampling block, lowest resolution first."""
        h = self._base(w)
        outs = []
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        return outs

    def forward(self, w: Tensor) -> Tensor:
        h = self._base(w)
        for block in self.blocks:
            h = block(h)
        return torch.tanh(self.to_image(h))


class Discriminator(nn.Module):
    """image -> realness logit, with each strided block output retrievable."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        ch = tuple(reversed(spec.block_channels))[1:]
        self.blocks = nn.ModuleList()
        c_in = 3
        for c_out in ch:
            self.blocks.append(
                nn.Sequential(nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.LeakyReLU(0.2))
            )
            c_in = c_out
        final_spatial = spec.resolution // 2 ** len(ch)
        self.head = nn.Linear(c_in * final_spatial * final_spatial, 1)

    def block_outputs(self, x: Tensor) -> list:
        outs = []
        h = x
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        return outs

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return self.head(h.flatten(1)).squeeze(-1)


def build_generator(spec: GeneratorSpec, image_size: int = None) -> Generator:
    """Construct the generator, checking resolution against the dataset if given."""
    if image_size is not None and spec.resolution != image_size:
        raise ValueError(
            f"generator resolution {spec.resolution} does not match dataset {image_size}"
        )
    return Generator(spec)


def build_discriminator(spec: GeneratorSpec, image_size: int = None) -> Discriminator:
    if image_size is not None and spec.resolution != image_size:
        raise ValueError(
            f"discriminator resolution {spec.resolution} does not match dataset {image_size}"
        )
    return Discriminator(spec)


def adversarial_train_step(
    generator: Generator,
    discriminator: Discriminator,
    real: Tensor,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    latent_gen: torch.Generator,
) -> dict:
    """One alternating D/G update with the non-saturating logistic loss.

    At the fixed point where D outputs probability 0.5 everywhere (logit 0),
    the discriminator loss equals 2*ln 2. Returns scalar losses plus the
    discriminator's real/fake accuracy on this batch.
    """
    n = real.shape[0]
    if n == 0:
        raise ValueError("adversarial_train_step requires a nonempty real batch")
    z = torch.randn(n, generator.spec.latent_dim, generator=latent_gen)
    fake = generator(generator.map_latent(z))

    d_real = discriminator(real)
    d_fake = discriminator(fake.detach())
    loss_d = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    opt_d.zero_grad()
    loss_d.backward()
    opt_d.step()

    loss_g = F.softplus(-discriminator(fake)).mean()
    opt_g.zero_grad()
    loss_g.backward()
    opt_g.step()

    loss_d = loss_d.detach()
    loss_g = loss_g.detach()
    if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
        raise RuntimeError(
            f"non-finite GAN loss: d_loss={float(loss_d)}, g_loss={float(loss_g)}"
        )
    return {
        "d_loss": float(loss_d),
        "g_loss": float(loss_g),
        "d_acc_real": float((d_real > 0).float().mean()),
        "d_acc_fake": float((d_fake < 0).float().mean()),
    }


def pretrain_gan(
    data: ImageBatch,
    spec: GeneratorSpec,
    steps: int,
    batch_size: int,
    lr: float = 2e-4,
    betas: tuple = (0.5, 0.999),
    seed: int = 0,
    log_every: int = 200,
):
    """Adversarially train a fresh (G, D) pair on the given images.

    Real data is reshuffled every epoch; latents are drawn fresh each step.
    Returns (generator, discriminator, history) where history holds one
    entry per step for each scalar in adversarial_train_step's output.
    """
    image_size = data.pixels.shape[-1]
    if spec.resolution != image_size:
        raise ValueError(
            f"generator resolution {spec.resolution} does not match data {image_size}"
        )
    if len(data) < batch_size:
        raise ValueError(f"need at least batch_size={batch_size} images, got {len(data)}")

    torch.manual_seed(derive_seed(seed, "gan-init"))
    generator = Generator(spec)
    discriminator = Discriminator(spec)
    opt_g = torch.optim.Adam(generator.parameters(), lr=lr, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=lr, betas=betas)
    latent_gen = torch.Generator().manual_seed(derive_seed(seed, "gan-latent"))
    order_gen = torch.Generator().manual_seed(derive_seed(seed, "gan-order"))

    history = {k: [] for k in ("d_loss", "g_loss", "d_acc_real", "d_acc_fake")}
    perm = torch.randperm(len(data), generator=order_gen)
    cursor = 0
    for step in range(steps):
        if cursor + batch_size > len(data):
            perm = torch.randperm(len(data), generator=order_gen)
            cursor = 0
        real = data.pixels[perm[cursor : cursor + batch_size]]
        cursor += batch_size
        stats = adversarial_train_step(
            generator, discriminator, real, opt_g, opt_d, latent_gen
        )
        for k, v in stats.items():
            history[k].append(v)
        if log_every and (step + 1) % log_every == 0:
            logger.info(
                "gan step %d/%d d_loss=%.4f g_loss=%.4f d_acc=(%.2f, %.2f)",
                step + 1, steps, stats["d_loss"], stats["g_loss"],
                stats["d_acc_real"], stats["d_acc_fake"],
            )
    return generator, discriminator, history
