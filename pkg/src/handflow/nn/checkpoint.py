"""Self-describing checkpoint files.

One .npz holds every parameter array, the optimizer moment arrays, and a JSON
metadata blob (step count, config hash, RNG state). Keys are namespaced with
``param/``, ``adam_m/`` and ``adam_v/`` prefixes so the file is readable on
its own with plain numpy.
"""

from __future__ import annotations

import json

import numpy as np


def save_checkpoint(
    path, params, opt_state=None, step=0, config_hash="", rng_state=None, extra=None
):
    """Write parameters (+ optional optimizer state) to a single npz file.

    Args:
        path: destination file.
        params: {name: ndarray} parameter mapping.
        opt_state: AdamW.state_dict() output, or None for inference-only files.
        step: global training step count.
        config_hash: hash of the resolved run configuration.
        rng_state: JSON-serializable numpy bit-generator state for exact resume.
        extra: optional JSON-serializable dict merged into the metadata (e.g.
            the model configuration needed to rebuild it).
    """
    arrays = {f"param/{k}": v for k, v in params.items()}
    meta = {
        "step": int(step),
        "config_hash": config_hash,
        "rng_state": rng_state,
        "param_names": sorted(params),
        "has_optimizer": opt_state is not None,
        "extra": extra or {},
    }
    if opt_state is not None:
        meta["opt_step_count"] = int(opt_state["step_count"])
        arrays.update({f"adam_m/{k}": v for k, v in opt_state["m"].items()})
        arrays.update({f"adam_v/{k}": v for k, v in opt_state["v"].items()})
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, opt_state_or_None, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
        params = {
            k[len("param/") :]: data[k] for k in data.files if k.startswith("param/")
        }
        opt_state = None
        if meta.get("has_optimizer"):
            opt_state = {
                "step_count": meta["opt_step_count"],
                "m": {
                    k[len("adam_m/") :]: data[k]
                    for k in data.files
                    if k.startswith("adam_m/")
                },
                "v": {
                    k[len("adam_v/") :]: data[k]
                    for k in data.files
                    if k.startswith("adam_v/")
                },
            }
    return params, opt_state, meta
