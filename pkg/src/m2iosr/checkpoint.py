"""Checkpoint archive: a JSON manifest plus one raw little-endian parameter blob.

Layout of a checkpoint directory::

    manifest.json    format_version, model description, config snapshot,
                     epoch, rng digest, and one entry per tensor
                     (name, group, shape, dtype, offset, nbytes)
    parameters.bin   tensors concatenated in manifest order
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .encoder import EncoderConfig
from .errors import CheckpointError
from .model import OpenSetModel

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "parameters.bin"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}


def _group_of(name: str, model: OpenSetModel) -> str:
    prefixes = {
        "encoder.": "encoder",
        "classifier.": "classifier",
        "global_disc.": "global_discriminator",
        "local_discs.1t16.": "local_1t16",
        "local_discs.1t4.": "local_1t4",
        "local_discs.4t4.": "local_4t4",
        "proj_4t4.": "projection_4t4",
        "centers.": "class_centers",
        "decoder.": "decoder",
    }
    for prefix, group in prefixes.items():
        if name.startswith(prefix):
            return group
    raise CheckpointError(f"tensor {name!r} belongs to no parameter group")


def rng_digest(generator: Optional[torch.Generator] = None) -> str:
    state = (generator.get_state() if generator is not None else torch.get_rng_state()).numpy()
    return hashlib.sha256(state.tobytes()).hexdigest()


def model_description(model: OpenSetModel) -> dict:
    return {
        "encoder": model.config.to_dict(),
        "disc_hidden": model.disc_hidden,
        "adapter_channels": model.adapter_channels,
        "with_decoder": model.decoder is not None,
    }


def save_checkpoint(
    model: OpenSetModel,
    path,
    *,
    config: Optional[dict] = None,
    epoch: int = 0,
    rng: Optional[torch.Generator] = None,
) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        offset = 0
        with open(out / BLOB, "wb") as blob:
            for name, tensor in model.state_dict().items():
                t = tensor.detach().cpu()
                if t.dtype not in _DTYPES:
                    raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
                data = t.contiguous().numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
                entries.append(
                    {
                        "name": name,
                        "group": _group_of(name, model),
                        "shape": list(t.shape),
                        "dtype": _DTYPES[t.dtype],
                        "offset": offset,
                        "nbytes": len(data),
                    }
                )
                blob.write(data)
                offset += len(data)
        manifest = {
            "format_version": FORMAT_VERSION,
            "model": model_description(model),
            "groups": list(model.parameter_groups()),
            "config": config or {},
            "epoch": int(epoch),
            "rng_state_digest": rng_digest(rng),
            "parameters": entries,
        }
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint to {out}: {exc}") from exc
    return out


def read_manifest(path) -> dict:
    p = Path(path) / MANIFEST
    try:
        manifest = json.loads(p.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint manifest not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed manifest {p}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {manifest.get('format_version')!r}")
    return manifest


def load_into(model: OpenSetModel, path) -> dict:
    """Copy checkpoint tensors into ``model``; every entry must match by name and shape."""
    manifest = read_manifest(path)
    blob = (Path(path) / BLOB).read_bytes()
    state = model.state_dict()
    seen = set()
    for entry in manifest["parameters"]:
        name = entry["name"]
        if name not in state:
            raise CheckpointError(f"checkpoint entry {name!r} has no counterpart in the model")
        target = state[name]
        if list(target.shape) != entry["shape"]:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {entry['shape']} vs model {list(target.shape)}"
            )
        end = entry["offset"] + entry["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"parameter blob truncated at entry {name!r}")
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=int(np.prod(entry["shape"], dtype=np.int64)),
                            offset=entry["offset"]).reshape(entry["shape"])
        with torch.no_grad():
            target.copy_(torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="))))
        seen.add(name)
    missing = set(state) - seen
    if missing:
        raise CheckpointError(f"model entry {sorted(missing)[0]!r} missing from checkpoint")
    return manifest


def load_checkpoint(path) -> tuple[OpenSetModel, dict]:
    manifest = read_manifest(path)
    desc = manifest["model"]
    enc = desc["encoder"]
    config = EncoderConfig(
        input_shape=tuple(enc["input_shape"]),
        stage_widths=tuple(enc["stage_widths"]),
        latent_dim=enc["latent_dim"],
        num_known=enc["num_known"],
        classifier_hidden=enc.get("classifier_hidden"),
    )
    model = OpenSetModel(
        config,
        disc_hidden=desc["disc_hidden"],
        adapter_channels=desc["adapter_channels"],
        with_decoder=desc["with_decoder"],
    )
    if manifest["parameters"] and manifest["parameters"][0]["dtype"] == "<f8":
        model = model.double()
    load_into(model, path)
    model.eval()
    return model, manifest
