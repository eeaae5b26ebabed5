"""Distillation and regularization losses over representation matrices.

Every loss here operates on M x N matrices: rows are representation
dimensions, columns are samples. Composite losses return the scalar tensor
plus a per-component breakdown (plain floats) so ablations are run by
zeroing weights rather than editing code, and so the trainer can log the
fixed component names: rd, var_s, var_t, cov_s, cov_t, squeeze, span, total.
"""

from dataclasses import dataclass

import torch

Tensor = torch.Tensor


@dataclass
class LossWeights:
    """Coefficients of the composite objectives.

    lam scales the representation-distillation (mean squared) term, mu the
    variance hinge, nu the covariance penalty. alpha is the synthetic share
    of each mini-batch, epsilon stabilizes the variance square root.
    per_sample_norm switches the distillation term from an elementwise mean
    to a mean over samples of squared L2 norms (a factor-M rescaling).
    """

    lam: float = 25.0
    mu: float = 25.0
    nu: float = 1.0
    alpha: float = 0.5
    epsilon: float = 1e-4
    per_sample_norm: bool = False

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0 or self.nu < 0:
            raise ValueError("loss weights lam, mu, nu must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def _check_matrix(z: Tensor, name: str = "z", min_samples: int = 1) -> None:
    if z.dim() != 2:
        raise ValueError(f"{name} must be 2-D (dims x samples), got shape {tuple(z.shape)}")
    if z.shape[1] < min_samples:
        raise ValueError(
            f"{name} needs at least {min_samples} samples (columns), got {z.shape[1]}"
        )


def _check_pair(z_s: Tensor, z_t: Tensor, min_samples: int = 1) -> None:
    _check_matrix(z_s, "z_s", min_samples)
    _check_matrix(z_t, "z_t", min_samples)
    if z_s.shape != z_t.shape:
        raise ValueError(f"shape mismatch: {tuple(z_s.shape)} vs {tuple(z_t.shape)}")


def rd_loss(z_s: Tensor, z_t: Tensor, per_sample_norm: bool = False) -> Tensor:
    """Representation distillation: squared error between student and teacher.

    Default reduction is the elementwise mean over all M*N entries, matching
    the calibration that the default lam/mu/nu weights assume. With
    per_sample_norm the per-column squared L2 norms are averaged instead.
    """
    _check_pair(z_s, z_t)
    sq = (z_s - z_t).pow(2)
    if per_sample_norm:
        return sq.sum(dim=0).mean()
    return sq.mean()


def vanilla_distill_loss(z_s: Tensor, z_t: Tensor, per_sample_norm: bool = False) -> Tensor:
    """Plain distillation against raw (un-squeezed) teacher representations.

    Same functional form as rd_loss; kept separate so the two transfer
    routes read explicitly at call sites.
    """
    return rd_loss(z_s, z_t, per_sample_norm)


def variance_loss(z: Tensor, epsilon: float = 1e-4) -> Tensor:
    """Hinge keeping every dimension's std above 1: mean_j max(0, 1 - sqrt(Var(z^j) + eps)).

    Var is the unbiased (N-1 denominator) sample variance over columns.
    """
    _check_matrix(z, "z", min_samples=2)
    var = z.var(dim=1, unbiased=True)
    return torch.relu(1.0 - torch.sqrt(var + epsilon)).mean()


def covariance_matrix(z: Tensor) -> Tensor:
    """Unbiased sample covariance C(Z) = 1/(N-1) sum_i (z_i - zbar)(z_i - zbar)^T."""
    _check_matrix(z, "z", min_samples=2)
    centered = z - z.mean(dim=1, keepdim=True)
    return centered @ centered.t() / (z.shape[1] - 1)


def covariance_loss(z: Tensor) -> Tensor:
    """Off-diagonal covariance penalty: (1/M) sum_{i != j} C(Z)_{ij}^2."""
    c = covariance_matrix(z)
    off_diag = c.pow(2).sum() - c.diagonal().pow(2).sum()
    return off_diag / z.shape[0]


def _composite(z_a: Tensor, z_b: Tensor, weights: LossWeights) -> tuple[Tensor, dict]:
    _check_pair(z_a, z_b, min_samples=2)
    rd = rd_loss(z_a, z_b, weights.per_sample_norm)
    var_a = variance_loss(z_a, weights.epsilon)
    var_b = variance_loss(z_b, weights.epsilon)
    cov_a = covariance_loss(z_a)
    cov_b = covariance_loss(z_b)
    total = (
        weights.lam * rd
        + weights.mu * (var_a + var_b)
        + weights.nu * (cov_a + cov_b)
    )
    breakdown = {
        "rd": float(rd.detach()),
        "var_s": float(var_a.detach()),
        "var_t": float(var_b.detach()),
        "cov_s": float(cov_a.detach()),
        "cov_t": float(cov_b.detach()),
    }
    return total, breakdown


def squeeze_loss(z_s: Tensor, z_g: Tensor, weights: LossWeights) -> tuple[Tensor, dict]:
    """Composite objective pulling student columns onto squeezed teacher columns.

    lam * rd(z_s, z_g) + mu * [var(z_s) + var(z_g)] + nu * [cov(z_s) + cov(z_g)].
    Returns (scalar tensor, component breakdown). z_s are student projections
    of augmented synthetic images, z_g the squeeze-head outputs.
    """
    total, breakdown = _composite(z_s, z_g, weights)
    breakdown["squeeze"] = float(total.detach())
    return total, breakdown


def span_loss(z_a: Tensor, z_b: Tensor, weights: LossWeights) -> tuple[Tensor, dict]:
    """Two-view self-distillation on real data; same form as squeeze_loss.

    Symmetric in its arguments: the two views play interchangeable roles.
    """
    total, breakdown = _composite(z_a, z_b, weights)
    breakdown["span"] = float(total.detach())
    return total, breakdown


def total_loss(l_squeeze, l_span, alpha: float):
    """Convex combination alpha * L_squeeze + (1 - alpha) * L_span."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * l_squeeze + (1.0 - alpha) * l_span
