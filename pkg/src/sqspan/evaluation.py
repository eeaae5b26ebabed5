"""Representation-quality measurements: linear probe, squared MMD, linear CKA,
and embedding export.

All metrics run in float64 on frozen features and are deterministic: the
probe optimizes a zero-initialized linear classifier with full-batch L-BFGS,
so no RNG is involved anywhere. MetricReport records the protocol choices
(probe optimizer, MMD kernel, feature source) alongside every value.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from .util import stable_hash

Tensor = torch.Tensor


@dataclass
class EmbeddingSet:
    """N x F features with optional labels, tagged by domain and source."""

    features: Tensor
    labels: Optional[Tensor] = None
    domain: str = "real"  # {real, synthetic}
    source: str = "backbone"  # {backbone, projection, h_d, h_g, w}

    def __post_init__(self):
        if self.features.dim() != 2:
            raise ValueError(f"features must be N x F, got {tuple(self.features.shape)}")
        if self.labels is not None and len(self.labels) != len(self.features):
            raise ValueError("labels length does not match features")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class MetricReport:
    """A named scalar (or small dict of scalars) plus its computation context."""

    metric: str
    value: float
    sample_sizes: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "metric": self.metric,
                "value": self.value,
                "sample_sizes": self.sample_sizes,
                "details": self.details,
                "config_hash": self.config_hash,
            },
            indent=2,
            sort_keys=True,
        )


def linear_probe(
    train: EmbeddingSet, val: EmbeddingSet, max_iter: int = 200, l2: float = 1.0
) -> float:
    """Top-1 accuracy of a linear classifier trained on frozen features.

    Multinomial logistic regression fit with full-batch L-BFGS from a zero
    init (deterministic). The weights (not the intercept) carry an L2 penalty
    of l2/(2N) times their squared norm, and the fit stops at gradient
    max-norm 1e-4; both match the common library defaults. The stopping rule
    matters: it is what keeps the probe honest on scale-collapsed features,
    whose residual signal sits below the tolerance and is left unfit rather
    than being rescaled into an arbitrarily strong predictor. Errors if the
    validation split contains a class absent from the train split.
    """
    if train.labels is None or val.labels is None:
        raise ValueError("linear_probe requires labeled embedding sets")
    if train.features.shape[1] != val.features.shape[1]:
        raise ValueError(
            f"feature dims differ: {train.features.shape[1]} vs {val.features.shape[1]}"
        )
    train_classes = set(train.labels.tolist())
    missing = sorted(set(val.labels.tolist()) - train_classes)
    if missing:
        raise ValueError(f"classes {missing} appear in val but not in train")
    if l2 < 0:
        raise ValueError(f"l2 must be >= 0, got {l2}")

    x = train.features.double()
    y = train.labels.long()
    num_classes = int(max(train_classes)) + 1
    weight = torch.zeros(num_classes, x.shape[1], dtype=torch.float64, requires_grad=True)
    bias = torch.zeros(num_classes, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.LBFGS(
        [weight, bias], max_iter=max_iter, line_search_fn="strong_wolfe",
        tolerance_grad=1e-4, tolerance_change=1e-12,
    )
    penalty = l2 / (2.0 * x.shape[0])

    def closure():
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(x @ weight.t() + bias, y)
        loss = loss + penalty * weight.pow(2).sum()
        loss.backward()
        return loss

    opt.step(closure)
    with torch.no_grad():
        logits = val.features.double() @ weight.t() + bias
        pred = logits.argmax(dim=1)
        return float((pred == val.labels.long()).double().mean())


def _poly_kernel(a: Tensor, b: Tensor) -> Tensor:
    # the kernel used by kernel inception distance: k(x, y) = (x.y / d + 1)^3
    d = a.shape[1]
    return (a @ b.t() / d + 1.0).pow(3)


def mmd2(x, y) -> float:
    """Unbiased U-statistic estimate of squared MMD with the polynomial kernel.

    Accepts EmbeddingSet or raw N x d tensors. May be slightly negative, as
    unbiased estimators are.
    """
    xf = (x.features if isinstance(x, EmbeddingSet) else x).double()
    yf = (y.features if isinstance(y, EmbeddingSet) else y).double()
    if xf.shape[1] != yf.shape[1]:
        raise ValueError(f"feature dims differ: {xf.shape[1]} vs {yf.shape[1]}")
    m, n = xf.shape[0], yf.shape[0]
    if m < 2 or n < 2:
        raise ValueError(f"need at least 2 samples per side, got {m} and {n}")
    k_xx = _poly_kernel(xf, xf)
    k_yy = _poly_kernel(yf, yf)
    k_xy = _poly_kernel(xf, yf)
    sum_xx = k_xx.sum() - k_xx.diagonal().sum()
    sum_yy = k_yy.sum() - k_yy.diagonal().sum()
    return float(sum_xx / (m * (m - 1)) + sum_yy / (n * (n - 1)) - 2.0 * k_xy.mean())


def domain_gap(x, y) -> float:
    """mmd2 between two embedding sets after joint per-dimension standardization.

    The scaler is fit on the union of both sets, so a global rescaling of the
    embedding space cancels instead of being cubed into the kernel; what is
    left is distributional mismatch. This is the protocol for comparing
    synthetic-vs-real gaps across models whose feature scales differ.
    """
    xf = (x.features if isinstance(x, EmbeddingSet) else x).double()
    yf = (y.features if isinstance(y, EmbeddingSet) else y).double()
    if xf.shape[1] != yf.shape[1]:
        raise ValueError(f"feature dims differ: {xf.shape[1]} vs {yf.shape[1]}")
    pooled = torch.cat([xf, yf])
    mean = pooled.mean(dim=0)
    std = pooled.std(dim=0).clamp_min(1e-12)  # constant dims center to zero
    return mmd2((xf - mean) / std, (yf - mean) / std)


def cka(x: Tensor, y: Tensor) -> float:
    """Linear CKA between two feature matrices over the same N samples.

    Column-centers both, then ||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F).
    Errors on zero-variance input, where the quantity is undefined.
    """
    xf = (x.features if isinstance(x, EmbeddingSet) else x).double()
    yf = (y.features if isinstance(y, EmbeddingSet) else y).double()
    if xf.shape[0] != yf.shape[0]:
        raise ValueError(f"sample counts differ: {xf.shape[0]} vs {yf.shape[0]}")
    if xf.shape[0] < 2:
        raise ValueError("cka needs at least 2 samples")
    xc = xf - xf.mean(dim=0, keepdim=True)
    yc = yf - yf.mean(dim=0, keepdim=True)
    denom_x = torch.linalg.norm(xc.t() @ xc)
    denom_y = torch.linalg.norm(yc.t() @ yc)
    if float(denom_x) == 0.0 or float(denom_y) == 0.0:
        raise ValueError("cka is undefined for zero-variance features")
    return float(torch.linalg.norm(xc.t() @ yc).pow(2) / (denom_x * denom_y))


def pairwise_cka_matrix(feature_sets: dict):
    """CKA between every pair of named feature matrices on a common sample set.

    Returns (names, matrix) with a symmetric matrix and unit diagonal.
    """
    names = list(feature_sets)
    if len(names) < 2:
        raise ValueError("need at least 2 feature sets")
    matrix = torch.ones(len(names), len(names), dtype=torch.float64)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            value = cka(feature_sets[names[i]], feature_sets[names[j]])
            matrix[i, j] = matrix[j, i] = value
    return names, matrix


def export_embeddings(embeddings: EmbeddingSet, path) -> Path:
    """Write a CSV with header dim_0..dim_{F-1},label,domain, one row per sample.

    Features are written as float32 with 9 significant digits, so reading
    the file back reproduces them bitwise. Missing labels export as -1.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feats = embeddings.features.float()
    n, f = feats.shape
    labels = embeddings.labels
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"dim_{i}" for i in range(f)] + ["label", "domain"])
        for i in range(n):
            row = [f"{v:.8e}" for v in feats[i].tolist()]
            row.append(str(int(labels[i])) if labels is not None else "-1")
            row.append(embeddings.domain)
            writer.writerow(row)
    return path


def read_embeddings(path) -> EmbeddingSet:
    """Read back a CSV written by export_embeddings."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        f = len(header) - 2
        feats, labels, domain = [], [], "real"
        for row in reader:
            feats.append([float(v) for v in row[:f]])
            labels.append(int(row[f]))
            domain = row[f + 1]
    features = torch.tensor(feats, dtype=torch.float32)
    label_tensor = torch.tensor(labels, dtype=torch.long)
    if (label_tensor == -1).all():
        label_tensor = None
    return EmbeddingSet(features, label_tensor, domain=domain)


def probe_report(train: EmbeddingSet, val: EmbeddingSet, max_iter: int = 200,
                 l2: float = 1.0, config: dict = None) -> MetricReport:
    accuracy = linear_probe(train, val, max_iter=max_iter, l2=l2)
    return MetricReport(
        metric="linear_probe_top1",
        value=accuracy,
        sample_sizes={"train": len(train), "val": len(val)},
        details={
            "optimizer": "lbfgs-full-batch",
            "max_iter": max_iter,
            "regularization": {"l2": l2},
            "feature_source": train.source,
        },
        config_hash=stable_hash(config) if config else "",
    )


def mmd_report(synthetic: EmbeddingSet, real: EmbeddingSet, config: dict = None) -> MetricReport:
    value = domain_gap(synthetic, real)
    return MetricReport(
        metric="squared_mmd",
        value=value,
        sample_sizes={"synthetic": len(synthetic), "real": len(real)},
        details={
            "kernel": "(x.y/d + 1)^3",
            "estimator": "unbiased-u-statistic",
            "standardization": "per-dimension, fit on the pooled sets",
            "feature_source": synthetic.source,
        },
        config_hash=stable_hash(config) if config else "",
    )
