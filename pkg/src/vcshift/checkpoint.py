"""Binary checkpoints.

Layout (all integers little-endian)::

    b"VCKP"                 magic
    u16                     format version
    64 bytes                ASCII hex config fingerprint
    u64                     length of the JSON header
    JSON header             meta + tensor directory (name, shape, offset, count)
    float32 data            tensors back to back, little-endian

The header carries the full config text, so a checkpoint can be loaded
without the original config file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    FingerprintMismatchError,
)

MAGIC = b"VCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sH64sQ")


@dataclass
class CheckpointState:
    model: object
    discriminators: object
    config: object
    stage: int
    meta: dict

    @property
    def step(self) -> int:
        return self.model.step


def _state_tensors(model, disc) -> dict[str, torch.Tensor]:
    out = {f"model.{k}": v for k, v in model.state_dict().items()}
    if disc is not None:
        out.update({f"disc.{k}": v for k, v in disc.state_dict().items()})
    return out


def save_checkpoint(path, model, disc, cfg, stage: int = 1, rng_state=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = _state_tensors(model, disc)
    directory, offset = [], 0
    for name, t in tensors.items():
        count = t.numel()
        directory.append({"name": name, "shape": list(t.shape), "dtype": "<f4", "offset": offset, "count": count})
        offset += count * 4
    meta = {
        "stage": stage,
        "step": model.step,
        "speakers": list(model.speakers.keys),
        "speaker_log_f0": model.speaker_log_f0,
        "layout": model.layout.describe(),
        "config": cfg.to_text(),
        "rng_state": rng_state,
        "has_discriminators": disc is not None,
        "tensors": directory,
        "data_bytes": offset,
    }
    header = json.dumps(meta, sort_keys=True).encode()
    fp = cfg.fingerprint().encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, fp, len(header)))
        fh.write(header)
        for t in tensors.values():
            fh.write(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    return path


def read_header(path) -> tuple[str, dict, bytes]:
    """(fingerprint, meta, raw data bytes); validates magic, version and length."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    magic, version, fp, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        meta = json.loads(blob[_PREFIX.size:start])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    data = blob[start:]
    if len(data) != meta["data_bytes"]:
        raise CheckpointError(f"{path}: truncated tensor data ({len(data)} of {meta['data_bytes']} bytes)")
    return fp.decode(), meta, data


def load_checkpoint(path, cfg=None, force: bool = False) -> CheckpointState:
    """Rebuild the model (and discriminators) stored in ``path``.

    With ``cfg`` given, its fingerprint must match the stored one unless
    ``force``; the model is then built from ``cfg`` and any tensor whose shape
    disagrees raises :class:`CheckpointShapeError`.
    """
    from .config import config_from_text
    from .model import build_discriminators_for, build_model

    fp, meta, data = read_header(path)
    stored = config_from_text(meta["config"])
    if cfg is None:
        cfg = stored
    elif cfg.fingerprint() != fp and not force:
        raise FingerprintMismatchError(
            f"{path}: config fingerprint {cfg.fingerprint()[:12]} does not match checkpoint {fp[:12]}; "
            "pass --force to load anyway")
    model = build_model(cfg, meta["speakers"])
    disc = build_discriminators_for(cfg) if meta["has_discriminators"] else None
    targets = _state_tensors(model, disc)
    if set(targets) != {d["name"] for d in meta["tensors"]}:
        missing = set(targets) ^ {d["name"] for d in meta["tensors"]}
        raise CheckpointShapeError(f"{path}: tensor sets differ: {sorted(missing)[:5]}")
    with torch.no_grad():
        for d in meta["tensors"]:
            dest = targets[d["name"]]
            if d.get("dtype", "<f4") != "<f4":
                raise CheckpointError(f"{path}: {d['name']} has unsupported dtype {d['dtype']}")
            if list(dest.shape) != d["shape"]:
                raise CheckpointShapeError(
                    f"{path}: {d['name']} has shape {tuple(d['shape'])}, model expects {tuple(dest.shape)}")
            arr = np.frombuffer(data, dtype="<f4", count=d["count"], offset=d["offset"])
            dest.copy_(torch.from_numpy(arr.copy()).reshape(dest.shape))
    model.step = int(meta["step"])
    model.speaker_log_f0 = {k: float(v) for k, v in meta["speaker_log_f0"].items()}
    model.eval()
    if disc is not None:
        disc.eval()
    return CheckpointState(model, disc, cfg, int(meta["stage"]), meta)
