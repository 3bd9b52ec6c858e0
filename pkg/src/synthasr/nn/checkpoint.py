"""Named-parameter archives (``.npz``) with a format version tag."""
from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = "synthasr-ckpt-1"


def save_checkpoint(path, params: dict, optimizer: dict | None = None, meta: dict | None = None):
    arrays = {f"param/{k}": np.asarray(v, dtype=np.float32) if np.asarray(v).dtype.kind == "f"
              else np.asarray(v) for k, v in params.items()}
    for k, v in (optimizer or {}).items():
        arrays[f"opt/{k}"] = np.asarray(v)
    arrays["__version__"] = np.array(FORMAT_VERSION)
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(params, optimizer_state, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        version = str(z["__version__"])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version!r}")
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        opt = {k[len("opt/"):]: z[k] for k in z.files if k.startswith("opt/")}
        meta = json.loads(str(z["__meta__"]))
    return params, opt, meta
