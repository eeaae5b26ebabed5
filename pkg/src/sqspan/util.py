"""Small shared helpers: seed derivation, weight checksums, stable formatting."""

import hashlib
import json

import torch


def derive_seed(*parts) -> int:
    """Fold arbitrary parts into a 63-bit seed via sha256.

    Stable across processes and runs, unlike Python's salted hash(). Used to
    give every RNG stream in a run its own seed derived from the root seed.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def param_checksum(module: torch.nn.Module, include_buffers: bool = False) -> str:
    """Hex digest over all parameters (optionally buffers), order-stable.

    Any weight mutation changes the digest; used to enforce the frozen
    generator contract during distillation.
    """
    h = hashlib.sha256()
    items = sorted(module.named_parameters())
    if include_buffers:
        items = items + sorted(module.named_buffers())
    for name, t in items:
        h.update(name.encode("utf-8"))
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def fmt_float(value) -> str:
    # fixed width/precision so metric logs are byte-stable across runs
    return f"{float(value):.10e}"


def stable_hash(obj) -> str:
    """Short hash of a JSON-serializable object (config snapshots, cache keys)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
