"""Feature collection from trained models into EmbeddingSets.

Bridges checkpoints to the metrics: batched, no-grad extraction of any
representation source (student backbone/projection, pooled discriminator or
generator blocks, mapped latents) over real or synthetic samples.
"""

import torch

from .data import ImageBatch
from .evaluation import EmbeddingSet
from .features import discriminator_features, generator_features
from .util import derive_seed

Tensor = torch.Tensor

SOURCES = ("backbone", "projection", "h_d", "h_g", "w")


def synthetic_batch(generator, n: int, seed: int):
    """Draw n latents and their generated images; returns (w, ImageBatch)."""
    gen = torch.Generator().manual_seed(derive_seed(seed, "embed-z"))
    z = torch.randn(n, generator.spec.latent_dim, generator=gen)
    with torch.no_grad():
        w = generator.map_latent(z)
        images = generator(w).clamp(-1.0, 1.0)
    return w, ImageBatch(images)


def student_embeddings(student, batch: ImageBatch, source: str = "backbone",
                       domain: str = "real", batch_size: int = 256) -> EmbeddingSet:
    """Backbone features (N x F) or projections (N x M) for a batch of images."""
    if source not in ("backbone", "projection"):
        raise ValueError(f"student source must be backbone or projection, got {source!r}")
    student.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(batch), batch_size):
            feature, projection = student(batch.pixels[start : start + batch_size])
            chunks.append(feature if source == "backbone" else projection.t())
    return EmbeddingSet(torch.cat(chunks, dim=0), batch.labels, domain=domain, source=source)


def gan_embeddings(generator, discriminator, source: str, batch: ImageBatch = None,
                   w: Tensor = None, block_set=None, domain: str = "synthetic",
                   batch_size: int = 256) -> EmbeddingSet:
    """Teacher-side representation sources.

    h_g needs latents w; h_d needs images; w passes the latents through.
    """
    labels = batch.labels if batch is not None else None
    if source == "w":
        if w is None:
            raise ValueError("source 'w' requires latents")
        return EmbeddingSet(w, labels, domain=domain, source="w")
    if source == "h_g":
        if w is None:
            raise ValueError("source 'h_g' requires latents")
        chunks = [
            generator_features(generator, w[s : s + batch_size], block_set).concat
            for s in range(0, w.shape[0], batch_size)
        ]
        return EmbeddingSet(torch.cat(chunks, dim=0), labels, domain=domain, source="h_g")
    if source == "h_d":
        if batch is None:
            raise ValueError("source 'h_d' requires images")
        chunks = [
            discriminator_features(discriminator, batch.pixels[s : s + batch_size], block_set).concat
            for s in range(0, len(batch), batch_size)
        ]
        return EmbeddingSet(torch.cat(chunks, dim=0), labels, domain=domain, source="h_d")
    raise ValueError(f"unknown source {source!r}, expected one of {SOURCES}")
