"""Checkpoint save/load: a torch weights blob plus a JSON sidecar.

The blob (<path>) carries everything needed to rebuild the networks; the
sidecar (<path with .json suffix>) duplicates the spec and metadata in a
human-readable form. Round-trips are bit-exact because state dict tensors
are serialized losslessly.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .gan import Discriminator, Generator, GeneratorSpec


class CheckpointError(Exception):
    """Unreadable or structurally invalid checkpoint."""


class SpecMismatchError(CheckpointError):
    """Checkpoint exists but was written for a different spec."""


@dataclass
class Checkpoint:
    kind: str
    spec: dict
    state: dict
    metadata: dict = field(default_factory=dict)


def save_checkpoint(path, kind: str, spec: dict, state: dict, metadata: dict = None) -> Path:
    """Write blob + sidecar; returns the blob path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = dict(metadata or {})
    torch.save({"kind": kind, "spec": spec, "state": state, "metadata": metadata}, path)
    sidecar = {"kind": kind, "spec": spec, "metadata": metadata}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, expect_kind: str = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or not {"kind", "spec", "state"} <= set(blob):
        raise CheckpointError(f"malformed checkpoint {path}: missing kind/spec/state")
    if expect_kind is not None and blob["kind"] != expect_kind:
        raise SpecMismatchError(
            f"checkpoint {path} holds kind {blob['kind']!r}, expected {expect_kind!r}"
        )
    return Checkpoint(blob["kind"], blob["spec"], blob["state"], blob.get("metadata", {}))


def save_gan(path, generator: Generator, discriminator: Discriminator, metadata: dict = None) -> Path:
    return save_checkpoint(
        path,
        kind="gan",
        spec=asdict(generator.spec),
        state={
            "generator": generator.state_dict(),
            "discriminator": discriminator.state_dict(),
        },
        metadata=metadata,
    )


def load_gan(path, expect_spec: GeneratorSpec = None):
    """Rebuild (generator, discriminator, spec, metadata) from a gan checkpoint.

    If expect_spec is given and disagrees with the stored spec, raises
    SpecMismatchError rather than loading weights into the wrong shapes.
    """
    ckpt = load_checkpoint(path, expect_kind="gan")
    stored = GeneratorSpec(**{k: _retuple(v) for k, v in ckpt.spec.items()})
    if expect_spec is not None and stored != expect_spec:
        raise SpecMismatchError(
            f"checkpoint spec {stored} does not match expected {expect_spec}"
        )
    generator = Generator(stored)
    discriminator = Discriminator(stored)
    generator.load_state_dict(ckpt.state["generator"])
    discriminator.load_state_dict(ckpt.state["discriminator"])
    return generator, discriminator, stored, ckpt.metadata


def _retuple(value):
    # JSON round-trips and torch.save of dataclass dicts may turn tuples into lists
    return tuple(value) if isinstance(value, list) else value


def save_student(path, student, squeeze_head=None, arch: dict = None, metadata: dict = None) -> Path:
    """Persist a trained student (and its squeeze head, when one exists).

    arch must hold whatever the constructors need to rebuild the modules;
    metadata conventionally carries the resolved training config.
    """
    state = {"student": student.state_dict()}
    if squeeze_head is not None:
        state["squeeze_head"] = squeeze_head.state_dict()
    return save_checkpoint(path, kind="student", spec=dict(arch or {}), state=state, metadata=metadata)


def load_student(path):
    """Rebuild (student, squeeze_head or None, arch, metadata) from a checkpoint."""
    from .networks import SqueezeHead, StudentNet

    ckpt = load_checkpoint(path, expect_kind="student")
    arch = ckpt.spec
    student = StudentNet(
        image_size=arch["image_size"],
        widths=tuple(arch["widths"]),
        proj_dim=arch["proj_dim"],
        blocks_per_stage=arch.get("blocks_per_stage", 2),
    )
    student.load_state_dict(ckpt.state["student"])
    head = None
    if "squeeze_head" in ckpt.state:
        channels = {int(k): int(v) for k, v in arch["head_channels"].items()}
        head = SqueezeHead(channels, out_dim=arch["proj_dim"])
        head.load_state_dict(ckpt.state["squeeze_head"])
    return student, head, arch, ckpt.metadata


def save_encoder(path, encoder, arch: dict = None, metadata: dict = None) -> Path:
    return save_checkpoint(
        path, kind="encoder", spec=dict(arch or {}),
        state={"encoder": encoder.state_dict()}, metadata=metadata,
    )


def load_encoder(path):
    from .networks import PostHocEncoder

    ckpt = load_checkpoint(path, expect_kind="encoder")
    arch = ckpt.spec
    encoder = PostHocEncoder(
        image_size=arch["image_size"], w_dim=arch["w_dim"], widths=tuple(arch["widths"])
    )
    encoder.load_state_dict(ckpt.state["encoder"])
    return encoder, arch, ckpt.metadata
