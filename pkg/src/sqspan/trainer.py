"""Training orchestration for every transfer route.

One entry point, train(config, out_dir), dispatches on the method selector:

  sqsp            squeeze on synthetic data + two-view span on real data
  squeeze         squeeze only (the alpha=1 reduction of sqsp)
  vanilla         plain distillation of raw pooled generator features
  vanilla_aug     vanilla with augmented student inputs
  latent          plain distillation of the mapped latent w
  latent_squeeze  squeeze head applied to w instead of block features
  encoder         post-hoc encoder inverting the frozen generator

Runs write a self-describing directory: resolved config snapshot, one
metrics CSV row per step with the fixed loss-component columns, periodic
and final checkpoints, and a summary. With identical config and seed two
runs produce byte-identical metrics files.
"""

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from . import __version__
from .augment import augment_batch, two_view
from .checkpoint import load_gan, save_encoder, save_student
from .config import ConfigError, TrainConfig, resolved_config
from .data import ImageBatch, load_or_make_shapes
from .features import discriminator_features, generator_features, latent_pyramid
from .losses import LossWeights, rd_loss, span_loss, squeeze_loss, total_loss
from .networks import PostHocEncoder, SqueezeHead, StudentNet
from .util import derive_seed, fmt_float, param_checksum, stable_hash

logger = logging.getLogger(__name__)

Tensor = torch.Tensor

# fixed metrics-log columns; components a method does not produce stay 0
METRIC_COLUMNS = ("step", "lr", "rd", "var_s", "var_t", "cov_s", "cov_t", "squeeze", "span", "total")
ENCODER_COLUMNS = ("step", "lr", "l1", "perceptual", "latent", "total")


def scaled_lr(base_lr: float, batch_size: int) -> float:
    """Linear learning-rate scaling: base_lr * batch_size / 256, exact."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return base_lr * batch_size / 256


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine decay lr0 * (1 + cos(pi * step / total_steps)) / 2."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


@dataclass
class MixedBatch:
    """One training batch: synthetic sub-batch with its latents, real two-view pair."""

    w: Optional[Tensor] = None
    syn_view: Optional[Tensor] = None
    real_view_a: Optional[Tensor] = None
    real_view_b: Optional[Tensor] = None

    @property
    def n_syn(self) -> int:
        return 0 if self.w is None else self.w.shape[0]

    @property
    def n_real(self) -> int:
        return 0 if self.real_view_a is None else self.real_view_a.shape[0]


def _sample_latents(generator, n: int, seed: int) -> Tensor:
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n, generator.spec.latent_dim, generator=gen)
    with torch.no_grad():
        return generator.map_latent(z)


def _synthesize(generator, w: Tensor) -> Tensor:
    with torch.no_grad():
        # tanh already bounds the output; clamp pins the [-1, 1] contract exactly
        return generator(w).clamp(-1.0, 1.0)


def mixed_batch(real_source, generator, policy, alpha: float, n: int, seed: int) -> MixedBatch:
    """Assemble floor(alpha*n) synthetic samples (with their w, one augmented
    view) and n - floor(alpha*n) real samples (two augmented views).

    Deterministic per seed. When a branch is empty none of its random draws
    happen, so alpha=1 batches are bitwise identical to squeeze-only ones.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if n < 2:
        raise ValueError(f"batch size must be >= 2, got {n}")
    n_syn = int(alpha * n)
    n_real = n - n_syn

    batch = MixedBatch()
    if n_syn:
        batch.w = _sample_latents(generator, n_syn, derive_seed(seed, "z"))
        images = _synthesize(generator, batch.w)
        view = augment_batch(policy, ImageBatch(images), derive_seed(seed, "syn-aug"))
        batch.syn_view = view.pixels
    if n_real:
        if real_source is None or len(real_source) < n_real:
            raise ValueError(f"need {n_real} real samples, got "
                             f"{0 if real_source is None else len(real_source)}")
        real = real_source
        if len(real_source) > n_real:
            gen = torch.Generator().manual_seed(derive_seed(seed, "real-pick"))
            real = real_source.subset(torch.randperm(len(real_source), generator=gen)[:n_real])
        view_a, view_b = two_view(policy, real, derive_seed(seed, "real-aug"))
        batch.real_view_a, batch.real_view_b = view_a.pixels, view_b.pixels
    return batch


def _zero_components() -> dict:
    return {k: 0.0 for k in METRIC_COLUMNS[2:]}


def sqsp_step(generator, head, student, batch: MixedBatch, weights: LossWeights,
              opt, alpha: float = None, block_set=None) -> dict:
    """One squeeze-and-span update; backpropagates into student and head only.

    The generator must already be frozen (requires_grad off); its features
    are extracted without gradient tracking. Returns the component
    breakdown, including the combined total.
    """
    if alpha is None:
        alpha = weights.alpha
    components = _zero_components()
    l_squeeze = 0.0
    l_span = 0.0
    if batch.n_syn:
        pyramid = generator_features(generator, batch.w, block_set)
        z_teacher = head(pyramid)
        _, z_student = student(batch.syn_view)
        l_squeeze, squeeze_parts = squeeze_loss(z_student, z_teacher, weights)
        components.update(squeeze_parts)
    if batch.n_real:
        _, z_a = student(batch.real_view_a)
        _, z_b = student(batch.real_view_b)
        l_span, span_parts = span_loss(z_a, z_b, weights)
        components["span"] = span_parts["span"]
        if not batch.n_syn:
            # span-only batch: report its per-component values instead of zeros
            for key in ("rd", "var_s", "var_t", "cov_s", "cov_t"):
                components[key] = span_parts[key]
    total = total_loss(l_squeeze, l_span, alpha)
    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite loss; last components: {components}")
    opt.zero_grad()
    total.backward()
    opt.step()
    components["total"] = float(total.detach())
    return components


def _plain_distill_step(student, x_in: Tensor, z_teacher: Tensor, weights: LossWeights, opt) -> dict:
    """Distillation against a fixed teacher matrix: total = lam * rd."""
    _, z_student = student(x_in)
    rd = rd_loss(z_student, z_teacher, weights.per_sample_norm)
    total = weights.lam * rd
    if not torch.isfinite(total):
        raise RuntimeError(f"non-finite loss; rd={float(rd.detach())}")
    opt.zero_grad()
    total.backward()
    opt.step()
    components = _zero_components()
    components["rd"] = float(rd.detach())
    components["total"] = float(total.detach())
    return components


def _latent_squeeze_step(w: Tensor, head, student, x_in: Tensor, weights: LossWeights, opt) -> dict:
    z_teacher = head(latent_pyramid(w))
    _, z_student = student(x_in)
    l_squeeze, parts = squeeze_loss(z_student, z_teacher, weights)
    if not torch.isfinite(l_squeeze):
        raise RuntimeError(f"non-finite loss; last components: {parts}")
    opt.zero_grad()
    l_squeeze.backward()
    opt.step()
    components = _zero_components()
    components.update(parts)
    components["total"] = float(l_squeeze.detach())
    return components


class _EpochSampler:
    """Epoch-shuffled index stream over a dataset of size n."""

    def __init__(self, n: int, seed: int):
        self.n = n
        self.gen = torch.Generator().manual_seed(seed)
        self.perm = torch.randperm(n, generator=self.gen)
        self.cursor = 0

    def take(self, k: int) -> Tensor:
        if k > self.n:
            raise ValueError(f"cannot draw {k} from dataset of {self.n}")
        if self.cursor + k > self.n:
            self.perm = torch.randperm(self.n, generator=self.gen)
            self.cursor = 0
        idx = self.perm[self.cursor : self.cursor + k]
        self.cursor += k
        return idx


class _MetricsLog:
    def __init__(self, path: Path, columns):
        self.columns = columns
        self.file = open(path, "w")
        self.file.write(",".join(columns) + "\n")

    def write(self, step: int, lr: float, components: dict):
        row = [str(step), fmt_float(lr)]
        row += [fmt_float(components.get(c, 0.0)) for c in self.columns[2:]]
        self.file.write(",".join(row) + "\n")

    def close(self):
        self.file.close()


def _freeze(module) -> str:
    module.requires_grad_(False)
    module.eval()
    return param_checksum(module, include_buffers=True)


def _student_stats(student, pixels: Tensor, batch_size: int) -> dict:
    """Per-dimension stds of backbone features and projections over a split."""
    student.eval()
    feats, projs = [], []
    with torch.no_grad():
        for start in range(0, pixels.shape[0], batch_size):
            f, p = student(pixels[start : start + batch_size])
            feats.append(f)
            projs.append(p)
    student.train()
    feat = torch.cat(feats, dim=0)
    proj = torch.cat(projs, dim=1)
    feat_std = feat.std(dim=0, unbiased=True)
    proj_std = proj.std(dim=1, unbiased=True)
    return {
        "min_feat_std": float(feat_std.min()),
        "min_proj_std": float(proj_std.min()),
        "max_proj_std": float(proj_std.max()),
    }


def _write_run_header(cfg: TrainConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    snapshot = resolved_config(cfg)
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    return snapshot


def train(cfg: TrainConfig, out_dir) -> Path:
    """Run the configured training method; returns the run directory."""
    if cfg.distill.method == "encoder":
        return train_posthoc_encoder(cfg, out_dir)
    return _train_distill(cfg, out_dir)


def _train_distill(cfg: TrainConfig, out_dir) -> Path:
    out = Path(out_dir)
    snapshot = _write_run_header(cfg, out)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    method = cfg.distill.method
    if not cfg.gan.checkpoint:
        raise ConfigError("gan.checkpoint is required for distillation methods")

    generator, _, gspec, _ = load_gan(cfg.gan.checkpoint, expect_spec=cfg.gan.generator_spec())
    checksum_before = _freeze(generator)

    spec = cfg.data.shapes_spec()
    train_data = load_or_make_shapes(spec, cfg.data.n_train, derive_seed(spec.seed, "train"))
    val_data = load_or_make_shapes(spec, cfg.data.n_val, derive_seed(spec.seed, "val"))
    policy = cfg.data.augment
    if policy.output_size != cfg.data.image_size:
        raise ConfigError(
            f"augment.output_size {policy.output_size} != data.image_size {cfg.data.image_size}"
        )

    channels = gspec.block_channels[1:]
    block_set = cfg.distill.block_set or tuple(range(1, len(channels) + 1))
    sum_channels = sum(channels[b - 1] for b in block_set)
    if method in ("vanilla", "vanilla_aug"):
        proj_dim = sum_channels  # student must predict the raw pooled concat
    elif method == "latent":
        proj_dim = gspec.w_dim
    else:
        proj_dim = cfg.distill.proj_dim

    torch.manual_seed(derive_seed(cfg.seed, "init"))
    student = StudentNet(
        image_size=cfg.data.image_size,
        widths=cfg.distill.widths,
        proj_dim=proj_dim,
        blocks_per_stage=cfg.distill.blocks_per_stage,
    )
    head = None
    if method in ("squeeze", "sqsp"):
        head = SqueezeHead.for_generator(generator, block_set, out_dim=proj_dim)
    elif method == "latent_squeeze":
        head = SqueezeHead({1: gspec.w_dim}, out_dim=proj_dim)

    params = list(student.parameters()) + (list(head.parameters()) if head else [])
    lr0 = scaled_lr(cfg.distill.base_lr, cfg.distill.batch_size)
    opt = torch.optim.SGD(
        params, lr=lr0, momentum=cfg.distill.momentum, weight_decay=cfg.distill.weight_decay
    )

    batch_size = cfg.distill.batch_size
    steps_per_epoch = max(1, cfg.data.n_train // batch_size)
    total_steps = cfg.distill.epochs * steps_per_epoch
    weights = cfg.loss

    alpha_eff = weights.alpha if method == "sqsp" else 1.0
    n_real = batch_size - int(alpha_eff * batch_size)
    sampler = _EpochSampler(len(train_data), derive_seed(cfg.seed, "order")) if n_real else None

    log = _MetricsLog(out / "metrics.csv", METRIC_COLUMNS)
    started = time.time()
    components = _zero_components()
    try:
        for step in range(total_steps):
            lr = cosine_lr(step, total_steps, lr0)
            for group in opt.param_groups:
                group["lr"] = lr
            step_seed = derive_seed(cfg.seed, "step", step)

            if method in ("sqsp", "squeeze"):
                real = train_data.subset(sampler.take(n_real)) if n_real else None
                batch = mixed_batch(real, generator, policy, alpha_eff, batch_size, step_seed)
                components = sqsp_step(
                    generator, head, student, batch, weights, opt, alpha_eff, block_set
                )
            elif method in ("vanilla", "vanilla_aug", "latent", "latent_squeeze"):
                w = _sample_latents(generator, batch_size, derive_seed(step_seed, "z"))
                images = _synthesize(generator, w)
                if method == "vanilla":
                    x_in = images
                else:
                    x_in = augment_batch(
                        policy, ImageBatch(images), derive_seed(step_seed, "syn-aug")
                    ).pixels
                if method in ("vanilla", "vanilla_aug"):
                    teacher = generator_features(generator, w, block_set).concat.t()
                    components = _plain_distill_step(student, x_in, teacher, weights, opt)
                elif method == "latent":
                    components = _plain_distill_step(student, x_in, w.t(), weights, opt)
                else:
                    components = _latent_squeeze_step(w, head, student, x_in, weights, opt)
            else:
                raise ConfigError(f"unknown method: {method}")

            log.write(step, lr, components)
            every = cfg.distill.checkpoint_every
            if every and (step + 1) % every == 0 and (step + 1) < total_steps:
                _save_student_checkpoint(
                    out / f"ckpt_step{step + 1:06d}.pt", cfg, student, head,
                    block_set, channels, snapshot, step + 1,
                )
    finally:
        log.close()

    checksum_after = param_checksum(generator, include_buffers=True)
    if checksum_after != checksum_before:
        raise RuntimeError("frozen generator was mutated during distillation")

    stats = _student_stats(student, val_data.pixels, cfg.eval.embed_batch)
    _save_student_checkpoint(
        out / "ckpt_final.pt", cfg, student, head, block_set, channels, snapshot, total_steps
    )
    summary = {
        "method": method,
        "seed": cfg.seed,
        "steps": total_steps,
        "final": components,
        "generator_checksum_ok": True,
        "wall_time_s": round(time.time() - started, 3),
        "config_hash": stable_hash(snapshot),
        "version": __version__,
        **stats,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    logger.info("run complete: %s (%s steps, %.1fs)", out, total_steps, summary["wall_time_s"])
    return out


def _save_student_checkpoint(path, cfg, student, head, block_set, channels, snapshot, steps):
    arch = {
        "image_size": cfg.data.image_size,
        "widths": list(cfg.distill.widths),
        "proj_dim": student.proj_dim,
        "blocks_per_stage": cfg.distill.blocks_per_stage,
    }
    if head is not None:
        arch["head_channels"] = {str(b): head.proj[str(b)].in_features for b in head.block_set}
    save_student(
        path, student, head, arch,
        metadata={"config": snapshot, "steps": steps, "seed": cfg.seed,
                  "method": cfg.distill.method},
    )


def encoder_loss(generator, discriminator, encoder, x: Tensor, w: Tensor = None,
                 lam: float = 1.0, block_set=None):
    """Inversion objective: L1 reconstruction + pooled-discriminator-feature
    distance (perceptual proxy) + lam * squared latent regression error.

    w=None drops the latent term (real images have no ground-truth latent);
    discriminator=None drops the perceptual term.
    """
    w_hat = encoder(x)
    recon = generator(w_hat)
    l1 = (recon - x).abs().mean()
    perceptual = x.new_zeros(())
    if discriminator is not None:
        f_recon = discriminator_features(discriminator, recon, block_set, differentiable=True)
        f_target = discriminator_features(discriminator, x, block_set, differentiable=True)
        perceptual = (f_recon.concat - f_target.concat).pow(2).mean()
    latent = x.new_zeros(())
    if w is not None:
        latent = (w_hat - w).pow(2).mean()
    total = l1 + perceptual + lam * latent
    components = {
        "l1": float(l1.detach()),
        "perceptual": float(perceptual.detach()),
        "latent": float(latent.detach()),
        "total": float(total.detach()),
    }
    return total, components


def train_posthoc_encoder(cfg: TrainConfig, out_dir) -> Path:
    """Train the post-hoc encoder against a frozen generator (and discriminator).

    Synthetic pairs (w, G(w)) always contribute all three terms; with
    distill.encoder_real real images add reconstruction and perceptual terms
    only.
    """
    out = Path(out_dir)
    snapshot = _write_run_header(cfg, out)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    if not cfg.gan.checkpoint:
        raise ConfigError("gan.checkpoint is required for encoder training")

    generator, discriminator, gspec, _ = load_gan(
        cfg.gan.checkpoint, expect_spec=cfg.gan.generator_spec()
    )
    g_sum = _freeze(generator)
    d_sum = _freeze(discriminator)

    spec = cfg.data.shapes_spec()
    train_data = load_or_make_shapes(spec, cfg.data.n_train, derive_seed(spec.seed, "train"))

    torch.manual_seed(derive_seed(cfg.seed, "init"))
    encoder = PostHocEncoder(cfg.data.image_size, gspec.w_dim, widths=cfg.distill.widths)
    lr0 = scaled_lr(cfg.distill.base_lr, cfg.distill.batch_size)
    opt = torch.optim.SGD(
        encoder.parameters(), lr=lr0, momentum=cfg.distill.momentum,
        weight_decay=cfg.distill.weight_decay,
    )

    batch_size = cfg.distill.batch_size
    steps_per_epoch = max(1, cfg.data.n_train // batch_size)
    total_steps = cfg.distill.epochs * steps_per_epoch
    block_set = cfg.distill.block_set
    lam = cfg.distill.encoder_lambda
    sampler = (
        _EpochSampler(len(train_data), derive_seed(cfg.seed, "order"))
        if cfg.distill.encoder_real else None
    )

    log = _MetricsLog(out / "metrics.csv", ENCODER_COLUMNS)
    started = time.time()
    components = {}
    try:
        for step in range(total_steps):
            lr = cosine_lr(step, total_steps, lr0)
            for group in opt.param_groups:
                group["lr"] = lr
            step_seed = derive_seed(cfg.seed, "step", step)
            w = _sample_latents(generator, batch_size, derive_seed(step_seed, "z"))
            x = _synthesize(generator, w)
            total, components = encoder_loss(
                generator, discriminator, encoder, x, w, lam, block_set
            )
            if cfg.distill.encoder_real:
                real = train_data.pixels[sampler.take(batch_size)]
                real_total, real_parts = encoder_loss(
                    generator, discriminator, encoder, real, None, lam, block_set
                )
                total = total + real_total
                for key in ("l1", "perceptual"):
                    components[key] += real_parts[key]
                components["total"] = float(total.detach())
            if not torch.isfinite(total):
                raise RuntimeError(f"non-finite loss; last components: {components}")
            opt.zero_grad()
            total.backward()
            opt.step()
            log.write(step, lr, components)
    finally:
        log.close()

    if param_checksum(generator, include_buffers=True) != g_sum:
        raise RuntimeError("frozen generator was mutated during encoder training")
    if param_checksum(discriminator, include_buffers=True) != d_sum:
        raise RuntimeError("frozen discriminator was mutated during encoder training")

    save_encoder(
        out / "ckpt_final.pt", encoder,
        arch={"image_size": cfg.data.image_size, "w_dim": gspec.w_dim,
              "widths": list(cfg.distill.widths)},
        metadata={"config": snapshot, "steps": total_steps, "seed": cfg.seed},
    )
    summary = {
        "method": "encoder",
        "seed": cfg.seed,
        "steps": total_steps,
        "final": components,
        "generator_checksum_ok": True,
        "wall_time_s": round(time.time() - started, 3),
        "config_hash": stable_hash(snapshot),
        "version": __version__,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return out
