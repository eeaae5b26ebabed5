"""Squeeze-and-span: distill a frozen GAN generator into a student network.

The package wires four pieces together: a small synthetic-shapes data source,
a DCGAN-style generator/discriminator pair, a student backbone trained against
pooled generator features (the squeeze path) plus a two-view redundancy
objective on real images (the span path), and evaluation utilities (linear
probe, squared MMD, linear CKA).
"""

__version__ = "0.1.0"

from .augment import (AugmentationPolicy, Transform, apply_transform,
                      augment_batch, identity_policy, moco_v2_policy,
                      sample_transform, two_view)
from .checkpoint import (Checkpoint, CheckpointError, SpecMismatchError,
                         load_checkpoint, load_encoder, load_gan, load_student,
                         save_checkpoint, save_encoder, save_gan, save_student)
from .config import (ConfigError, DataConfig, DistillConfig, EvalConfig,
                     GanConfig, TrainConfig, parse_config, parse_config_tree,
                     resolved_config)
from .data import ImageBatch, ShapesSpec, load_or_make_shapes, make_shapes_dataset
from .embed import gan_embeddings, student_embeddings, synthetic_batch
from .evaluation import (EmbeddingSet, MetricReport, cka, export_embeddings,
                         linear_probe, mmd2, mmd_report, pairwise_cka_matrix,
                         probe_report, read_embeddings)
from .features import (FeaturePyramid, discriminator_features,
                       generator_features, latent_pyramid,
                       latent_representation, pool)
from .gan import (Discriminator, Generator, GeneratorSpec,
                  adversarial_train_step, build_discriminator, build_generator,
                  pretrain_gan)
from .losses import (LossWeights, covariance_loss, covariance_matrix, rd_loss,
                     span_loss, squeeze_loss, total_loss, vanilla_distill_loss,
                     variance_loss)
from .networks import PostHocEncoder, SqueezeHead, StudentNet
from .trainer import (cosine_lr, encoder_loss, mixed_batch, scaled_lr,
                      sqsp_step, train, train_posthoc_encoder)
from .util import derive_seed, param_checksum, stable_hash

__all__ = [name for name in dir() if not name.startswith("_")]
