"""Optional matplotlib rendering of run artifacts (loss curves, CKA matrices)."""

import csv
from pathlib import Path


def _matplotlib():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise RuntimeError(
            "plotting requires matplotlib; install the 'plot' extra"
        ) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_loss_curves(metrics_csv, out_png) -> Path:
    """Render every nonzero loss-component column of a metrics log."""
    plt = _matplotlib()
    with open(metrics_csv, newline="") as handle:
        reader = csv.DictReader(handle)
        rows = list(reader)
    if not rows:
        raise ValueError(f"no rows in {metrics_csv}")
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in rows[0]:
        if column in ("step", "lr"):
            continue
        values = [float(r[column]) for r in rows]
        if any(v != 0.0 for v in values):
            ax.plot(steps, values, label=column, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_cka_heatmap(names, matrix, out_png) -> Path:
    """Render a pairwise CKA matrix with axis labels."""
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(5, 4.5))
    image = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    fig.colorbar(image, ax=ax, label="linear CKA")
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
