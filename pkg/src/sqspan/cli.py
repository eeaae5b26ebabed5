"""Command-line entry point.

Subcommands: pretrain-gan, distill, probe, analyze (mmd | cka),
export-embeddings, plot. Exit codes: 0 success, 2 config/usage error,
3 runtime failure. The SQSPAN_DATA_DIR environment variable, when set,
points at a cache root for generated datasets.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_gan, load_student, save_gan
from .config import ConfigError, parse_config, parse_config_tree, resolved_config
from .data import CACHE_ENV_VAR, load_or_make_shapes
from .embed import gan_embeddings, student_embeddings, synthetic_batch
from .evaluation import (EmbeddingSet, export_embeddings, mmd_report,
                         pairwise_cka_matrix, probe_report)
from .gan import pretrain_gan
from .trainer import train
from .util import derive_seed, fmt_float

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--deterministic", action="store_true",
                        help="force deterministic execution")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    config_args = argparse.ArgumentParser(add_help=False)
    config_args.add_argument("--config", default=None, help="TOML or JSON config file")
    config_args.add_argument("--profile", default=None,
                             help="named defaults bundle (tiny, cifar-like, ...)")

    parser = argparse.ArgumentParser(
        prog="sqspan",
        description="Distill representations out of a frozen GAN generator.",
        epilog=f"Set {CACHE_ENV_VAR} to cache generated datasets on disk.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-gan", parents=[common, config_args],
                       help="adversarially train the fixture GAN")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("distill", parents=[common, config_args],
                       help="train a student with the selected method")
    p.add_argument("--method", default=None,
                   help="sqsp, squeeze, vanilla, vanilla_aug, latent, latent_squeeze, encoder")
    p.add_argument("--gan", default=None, help="override gan.checkpoint")
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("probe", parents=[common],
                       help="linear-probe a student checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="report path (default: probe.json next to checkpoint)")

    p = sub.add_parser("analyze", parents=[common], help="representation analyses")
    p.add_argument("what", choices=("mmd", "cka"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("export-embeddings", parents=[common],
                       help="dump representations to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", default="backbone",
                   choices=("backbone", "projection", "h_d", "h_g", "w"))
    p.add_argument("--split", default="val", choices=("train", "val", "synthetic"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", parents=[common], help="render run artifacts")
    p.add_argument("--run", required=True, help="run directory with metrics.csv")
    p.add_argument("--out", default=None, help="output directory (default: the run dir)")

    return parser


def _overrides(args, method=None, gan=None) -> dict:
    tree = {}
    if getattr(args, "seed", None) is not None:
        tree["seed"] = args.seed
    if getattr(args, "deterministic", False):
        tree["deterministic"] = True
    if method is not None:
        tree.setdefault("distill", {})["method"] = method
    if gan is not None:
        tree.setdefault("gan", {})["checkpoint"] = gan
    return tree


def _splits(cfg):
    spec = cfg.data.shapes_spec()
    train_b = load_or_make_shapes(spec, cfg.data.n_train, derive_seed(spec.seed, "train"))
    val_b = load_or_make_shapes(spec, cfg.data.n_val, derive_seed(spec.seed, "val"))
    return train_b, val_b


def _load_student_context(path):
    student, head, arch, meta = load_student(path)
    if "config" not in meta:
        raise CheckpointError(f"checkpoint {path} carries no config snapshot")
    cfg = parse_config_tree(meta["config"])
    return student, head, cfg, meta


def _emit_report(report, out_path: Path):
    text = report.to_json()
    print(text)
    out_path.write_text(text)


def _cmd_pretrain_gan(args) -> int:
    cfg = parse_config(args.config, profile=args.profile, overrides=_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(resolved_config(cfg), indent=2, sort_keys=True))
    spec = cfg.data.shapes_spec()
    data = load_or_make_shapes(spec, cfg.data.n_train, derive_seed(spec.seed, "train"))
    generator, discriminator, history = pretrain_gan(
        data, cfg.gan.generator_spec(), steps=cfg.gan.steps,
        batch_size=cfg.gan.batch_size, lr=cfg.gan.lr, seed=cfg.seed,
    )
    with open(out / "gan_metrics.csv", "w") as handle:
        keys = list(history)
        handle.write(",".join(["step"] + keys) + "\n")
        for step in range(len(history[keys[0]])):
            row = [str(step)] + [fmt_float(history[k][step]) for k in keys]
            handle.write(",".join(row) + "\n")
    window = min(200, cfg.gan.steps)
    metrics = {k: sum(v[-window:]) / window for k, v in history.items()}
    save_gan(
        out / "gan.pt", generator, discriminator,
        metadata={"training_steps": cfg.gan.steps, "seed": cfg.seed, "metrics": metrics,
                  "config": resolved_config(cfg)},
    )
    print(str(out / "gan.pt"))
    return 0


def _cmd_distill(args) -> int:
    cfg = parse_config(
        args.config, profile=args.profile, overrides=_overrides(args, args.method, args.gan)
    )
    run_dir = train(cfg, args.out)
    print(str(run_dir))
    return 0


def _cmd_probe(args) -> int:
    student, _, cfg, meta = _load_student_context(args.checkpoint)
    train_b, val_b = _splits(cfg)
    emb_train = student_embeddings(student, train_b, batch_size=cfg.eval.embed_batch)
    emb_val = student_embeddings(student, val_b, batch_size=cfg.eval.embed_batch)
    report = probe_report(emb_train, emb_val, max_iter=cfg.eval.probe_max_iter,
                          config=meta["config"])
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "probe.json"
    _emit_report(report, out)
    return 0


def _cmd_analyze(args) -> int:
    student, _, cfg, meta = _load_student_context(args.checkpoint)
    generator, _, _, _ = load_gan(cfg.gan.checkpoint)
    generator.requires_grad_(False).eval()
    n = cfg.eval.embed_samples
    seed = args.seed if args.seed is not None else cfg.seed
    w, synthetic = synthetic_batch(generator, n, derive_seed(seed, "analyze"))

    if args.what == "mmd":
        spec = cfg.data.shapes_spec()
        real = load_or_make_shapes(spec, n, derive_seed(spec.seed, "embed-real"))
        emb_syn = student_embeddings(student, synthetic, domain="synthetic",
                                     batch_size=cfg.eval.embed_batch)
        emb_real = student_embeddings(student, real, batch_size=cfg.eval.embed_batch)
        report = mmd_report(emb_syn, emb_real, config=meta["config"])
        out = Path(args.out) if args.out else Path(args.checkpoint).parent / "mmd.json"
        _emit_report(report, out)
        return 0

    sets = {}
    for block in range(1, generator.spec.num_blocks + 1):
        sets[f"g_block_{block}"] = gan_embeddings(
            generator, None, "h_g", w=w, block_set=(block,),
            batch_size=cfg.eval.embed_batch,
        ).features
    sets["w"] = w
    sets["student"] = student_embeddings(
        student, synthetic, domain="synthetic", batch_size=cfg.eval.embed_batch
    ).features
    names, matrix = pairwise_cka_matrix(sets)
    payload = json.dumps({"names": names, "matrix": matrix.tolist()}, indent=2)
    print(payload)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "cka.json"
    out.write_text(payload)
    return 0


def _cmd_export(args) -> int:
    student, _, cfg, _ = _load_student_context(args.checkpoint)
    needs_gan = args.source in ("h_d", "h_g", "w") or args.split == "synthetic"
    generator = discriminator = None
    if needs_gan:
        generator, discriminator, _, _ = load_gan(cfg.gan.checkpoint)
        generator.requires_grad_(False).eval()
        discriminator.requires_grad_(False).eval()

    seed = args.seed if args.seed is not None else cfg.seed
    if args.split == "synthetic":
        w, batch = synthetic_batch(generator, cfg.eval.embed_samples, derive_seed(seed, "export"))
        domain = "synthetic"
    else:
        train_b, val_b = _splits(cfg)
        batch = train_b if args.split == "train" else val_b
        w = None
        domain = "real"

    if args.source in ("backbone", "projection"):
        embeddings = student_embeddings(student, batch, source=args.source, domain=domain,
                                        batch_size=cfg.eval.embed_batch)
    else:
        if args.source in ("h_g", "w") and w is None:
            raise ConfigError(f"source {args.source!r} requires --split synthetic")
        embeddings = gan_embeddings(generator, discriminator, args.source, batch=batch,
                                    w=w, block_set=cfg.distill.block_set, domain=domain,
                                    batch_size=cfg.eval.embed_batch)
    path = export_embeddings(embeddings, args.out)
    print(str(path))
    return 0


def _cmd_plot(args) -> int:
    from .plots import plot_cka_heatmap, plot_loss_curves

    run = Path(args.run)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    made = []
    metrics = run / "metrics.csv"
    if metrics.exists():
        made.append(plot_loss_curves(metrics, out / "loss_curves.png"))
    cka_json = run / "cka.json"
    if cka_json.exists():
        payload = json.loads(cka_json.read_text())
        made.append(plot_cka_heatmap(payload["names"], payload["matrix"], out / "cka.png"))
    if not made:
        raise FileNotFoundError(f"nothing to plot in {run}")
    for path in made:
        print(str(path))
    return 0


_COMMANDS = {
    "pretrain-gan": _cmd_pretrain_gan,
    "distill": _cmd_distill,
    "probe": _cmd_probe,
    "analyze": _cmd_analyze,
    "export-embeddings": _cmd_export,
    "plot": _cmd_plot,
}


def run(argv) -> int:
    """Dispatch a CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))
